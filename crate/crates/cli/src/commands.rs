use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use anyhow::Result;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use longrun_core::ecosys::{discounted_utility, ContentReach, EngagementKind, Horizon};
use longrun_core::error::Error as CoreError;
use longrun_core::harness::{assign, deploy, goal_metric, run_boost_experiment, DefaultRule, ScoreTable};
use longrun_core::ids::ProducerId;
use longrun_core::io::{self, PolicySpec};
use longrun_core::pipeline::{run_pipeline_into, PipelineConfig, WorldConfig};
use longrun_core::policy::{
    consumed_sequence, enumerate_deviations, exhaustive_optimal, run_to_horizon,
    theorem_condition_holds, FixedSequence, RankingPolicy, TheoremCheck, TIE_EPS,
};
use longrun_core::sim::{make_two_period_scenario_with_reach, ProductionRule, ScenarioState, World};
use longrun_core::stats;
use longrun_core::uplift::{evaluate_high_low, fit_three_tree, predict_uplift, UpliftModel, UpliftParams};

use crate::output::{InputHash, Outputs};
use crate::{Cli, Command, ConfigError, DeployArgs, EvaluateArgs, OracleArgs, Reach, TrainArgs};

pub fn run(cli: &Cli) -> Result<()> {
    if cli.replicas == 0 {
        return Err(ConfigError("--replicas must be at least 1".into()).into());
    }
    match &cli.command {
        Command::Oracle(args) => oracle(cli, args),
        Command::Simulate => simulate(cli),
        Command::Experiment => experiment(cli),
        Command::Train(args) => train(cli, args),
        Command::Evaluate(args) => evaluate(cli, args),
        Command::Deploy(args) => deploy_cmd(cli, args),
        Command::Pipeline => pipeline(cli),
        Command::Compare => compare(cli),
    }
}

fn config_error(path: &Path, e: impl Display) -> anyhow::Error {
    ConfigError(format!("{}: {e}", path.display())).into()
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| config_error(path, e))
}

fn parse_json<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| config_error(path, e))
}

fn require_config(cli: &Cli) -> Result<&Path> {
    cli.config
        .as_deref()
        .ok_or_else(|| ConfigError(format!("`{}` needs --config", command_name(&cli.command))).into())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Oracle(_) => "oracle",
        Command::Simulate => "simulate",
        Command::Experiment => "experiment",
        Command::Train(_) => "train",
        Command::Evaluate(_) => "evaluate",
        Command::Deploy(_) => "deploy",
        Command::Pipeline => "pipeline",
        Command::Compare => "compare",
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Runs `f` for each replica seed, in parallel when there are several, and
/// prints each run's summary line in seed order.
fn replicate<F>(cli: &Cli, f: F) -> Result<Vec<String>>
where
    F: Fn(u64, &Path) -> Result<String> + Sync,
{
    if cli.replicas == 1 {
        let line = f(cli.seed, &cli.out)?;
        println!("{line}");
        return Ok(vec![line]);
    }
    let seeds: Vec<u64> = (0..u64::from(cli.replicas)).map(|i| cli.seed + i).collect();
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(seeds.len());
    let mut results: Vec<(u64, Result<String>)> = thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let mine: Vec<u64> = seeds.iter().copied().skip(w).step_by(workers).collect();
                let f = &f;
                let out = &cli.out;
                s.spawn(move || {
                    mine.into_iter()
                        .map(|seed| (seed, f(seed, &out.join(format!("seed-{seed}")))))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("replica thread panicked"))
            .collect()
    });
    results.sort_by_key(|(s, _)| *s);
    let mut lines = Vec::new();
    let mut first_err = None;
    for (seed, r) in results {
        match r {
            Ok(line) => {
                println!("{line}");
                lines.push(line);
            }
            Err(e) => {
                eprintln!("seed {seed}: {e:#}");
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(lines),
    }
}

// ---- oracle ----

#[derive(Serialize)]
struct SlotReport {
    viewer: u32,
    period: u32,
    producers: Vec<u32>,
}

#[derive(Serialize)]
struct OracleReport {
    oracle_total: f64,
    myopic_total: f64,
    coincide: bool,
    evaluated: u64,
    bound: f64,
    first_divergence: Option<u32>,
    condition_at_divergence: Option<TheoremCheck>,
    deviations: Vec<TheoremCheck>,
    oracle_sequence: Vec<SlotReport>,
    myopic_sequence: Vec<SlotReport>,
}

fn describe(world: &World, seq: &FixedSequence, rule: &ProductionRule) -> Result<Vec<SlotReport>> {
    let mut state = ScenarioState::initial(world, 0)?;
    run_to_horizon(world, &mut state, &RankingPolicy::FixedSequence(seq.clone()), rule)?;
    Ok(seq
        .entries()
        .into_iter()
        .map(|e| SlotReport {
            viewer: e.viewer.0,
            period: e.period,
            producers: e
                .content
                .iter()
                .filter_map(|c| state.content(*c).map(|item| item.producer.0))
                .collect(),
        })
        .collect())
}

fn oracle_error(e: CoreError) -> anyhow::Error {
    match e {
        CoreError::OracleNeedsThresholdMode | CoreError::InstanceTooLarge { .. } | CoreError::InfiniteHorizon => {
            ConfigError(e.to_string()).into()
        }
        other => other.into(),
    }
}

fn oracle(cli: &Cli, args: &OracleArgs) -> Result<()> {
    let mut inputs = InputHash::default();
    let (world, rule) = match (&args.two_period, &cli.config) {
        (Some(v), _) => {
            let reach = match args.reach {
                Reach::Followers => ContentReach::Followers,
                Reach::RecentEngagers => ContentReach::RecentEngagers,
            };
            inputs.add("two_period", format!("{v:?} {reach:?}").as_bytes());
            let inst = make_two_period_scenario_with_reach(v[0], v[1], v[2], reach)
                .map_err(|e| ConfigError(format!("--two-period: {e}")))?;
            (World::new(inst.scenario)?, inst.rule)
        }
        (None, Some(path)) => {
            let bytes = read_input(path)?;
            inputs.add("config", &bytes);
            let file = io::parse_scenario(&String::from_utf8_lossy(&bytes)).map_err(|e| config_error(path, e))?;
            let rule = file
                .production
                .ok_or_else(|| config_error(path, "the oracle needs a `production` rule in threshold mode"))?;
            (World::new(file.scenario).map_err(|e| config_error(path, e))?, rule)
        }
        (None, None) => {
            return Err(ConfigError("`oracle` needs --config or --two-period V1 V2 BETA".into()).into());
        }
    };
    let obj = world.scenario.objective;
    let horizon = obj.finite_horizon().map_err(oracle_error)?;
    let best = exhaustive_optimal(&world, &obj, &rule).map_err(oracle_error)?;
    let (myopic, state) = consumed_sequence(&world, &RankingPolicy::Myopic, &rule, 0)?;
    let myopic_total = discounted_utility(&state.ledger, &obj)?.total;
    let coincide = best.best_total <= myopic_total + TIE_EPS;
    let first_divergence = if coincide { None } else { myopic.first_divergence(&best.best_sequence) };
    let condition_at_divergence = match first_divergence {
        Some(t) if t < horizon => {
            Some(theorem_condition_holds(&world, &obj, &rule, &myopic, &best.best_sequence, t)?)
        }
        _ => None,
    };
    let mut deviations = Vec::new();
    for t in 1..horizon {
        for dev in enumerate_deviations(&world, &obj, &rule, &myopic, t)? {
            deviations.push(theorem_condition_holds(&world, &obj, &rule, &myopic, &dev, t)?);
        }
    }
    let report = OracleReport {
        oracle_total: best.best_total,
        myopic_total,
        coincide,
        evaluated: best.evaluated,
        bound: best.bound,
        first_divergence,
        condition_at_divergence,
        oracle_sequence: describe(&world, &best.best_sequence, &rule)?,
        myopic_sequence: describe(&world, &myopic, &rule)?,
        deviations,
    };

    println!("oracle total {:.4} ({} sequences evaluated)", report.oracle_total, report.evaluated);
    println!("myopic total {:.4}", report.myopic_total);
    if coincide {
        println!("policies coincide");
    } else {
        println!("oracle gains {:.4} over myopic", report.oracle_total - report.myopic_total);
        if let Some(c) = &report.condition_at_divergence {
            println!(
                "condition at t={}: lhs {:.4} {} rhs {:.4}",
                c.period,
                c.lhs,
                if c.holds { "<" } else { ">=" },
                c.rhs
            );
        }
    }
    let holding = report.deviations.iter().filter(|d| d.holds).count();
    println!("{holding} of {} single-period deviations satisfy the condition", report.deviations.len());
    for slot in &report.oracle_sequence {
        println!("  oracle t={} viewer {}: producers {:?}", slot.period, slot.viewer, slot.producers);
    }
    let mut out = Outputs::create(&cli.out)?;
    out.json("oracle_report.json", &report)?;
    out.finish(inputs.finish(), cli.seed)
}

// ---- simulate ----

#[derive(Serialize)]
struct SimulationReport {
    seed: u64,
    policy: &'static str,
    horizon: u32,
    discounted_utility: f64,
    per_period_utility: Vec<f64>,
    likes: usize,
    comments: usize,
    posts: u64,
}

fn simulate(cli: &Cli) -> Result<()> {
    let path = require_config(cli)?;
    let bytes = read_input(path)?;
    let file = io::parse_scenario(&String::from_utf8_lossy(&bytes)).map_err(|e| config_error(path, e))?;
    let rule = file
        .production
        .ok_or_else(|| config_error(path, "simulate needs a `production` rule"))?;
    let spec = file.policy.clone().unwrap_or(PolicySpec::Myopic);
    let policy = spec.resolve(&base_dir(path)).map_err(|e| config_error(path, e))?;
    let world = World::new(file.scenario).map_err(|e| config_error(path, e))?;
    let horizon = world.horizon().map_err(|e| config_error(path, e))?;
    let mut inputs = InputHash::default();
    inputs.add("config", &bytes);
    let hash = inputs.finish();
    replicate(cli, |seed, dir| {
        let mut state = ScenarioState::initial(&world, seed)?;
        run_to_horizon(&world, &mut state, &policy, &rule)?;
        let count = |k: EngagementKind| state.engagement_log.iter().filter(|e| e.kind == k).count();
        let report = SimulationReport {
            seed,
            policy: policy.kind(),
            horizon,
            discounted_utility: discounted_utility(&state.ledger, &world.scenario.objective)?.total,
            per_period_utility: (1..=horizon).map(|t| state.ledger.period_total(t)).collect(),
            likes: count(EngagementKind::Like),
            comments: count(EngagementKind::Comment),
            posts: state.activity.values().flat_map(|a| &a.new_posts).map(|&n| u64::from(n)).sum(),
        };
        let mut out = Outputs::create(dir)?;
        out.csv("engagement.csv", |b| io::write_engagement_csv(&state.engagement_log, b))?;
        out.json("simulation.json", &report)?;
        out.finish(hash.clone(), seed)?;
        Ok(format!(
            "seed {seed}: {} policy, discounted utility {:.4}, {} likes, {} comments, {} posts",
            report.policy, report.discounted_utility, report.likes, report.comments, report.posts
        ))
    })
    .map(drop)
}

// ---- experiment and pipeline ----

fn pipeline_config(cli: &Cli) -> Result<(PipelineConfig, InputHash)> {
    let mut inputs = InputHash::default();
    let config = match &cli.config {
        Some(path) => {
            let bytes = read_input(path)?;
            inputs.add("config", &bytes);
            let c: PipelineConfig = parse_json(path, &bytes)?;
            c.validate().map_err(|e| config_error(path, e))?;
            c
        }
        None => PipelineConfig::default(),
    };
    inputs.add("effective", config.hash().as_bytes());
    Ok((config, inputs))
}

fn experiment(cli: &Cli) -> Result<()> {
    let (config, inputs) = pipeline_config(cli)?;
    let hash = inputs.finish();
    replicate(cli, |seed, dir| {
        let world = config.world.build(seed)?;
        let ids: Vec<ProducerId> = world.producer_ids().collect();
        let assignment = assign(&ids, &config.fractions, seed)?;
        let exp = run_boost_experiment(
            &world,
            &config.world.production,
            &assignment,
            config.boost_multiplier,
            config.experiment_periods,
            config.outcome,
            seed,
        )?;
        let mut out = Outputs::create(dir)?;
        out.write("population.json", io::population_json(&world.scenario)?.as_bytes())?;
        out.csv("assignment.csv", |b| io::write_assignment_csv(&assignment, b))?;
        out.csv("experiment.csv", |b| io::write_experiment_csv(&exp.dataset, b))?;
        out.json("experiment_report.json", &exp.report)?;
        out.finish(hash.clone(), seed)?;
        let l = &exp.report.lifts;
        Ok(format!(
            "seed {seed}: treated vs control likes {:+.1}% (+-{:.1}), comments {:+.1}% (+-{:.1}), posts {:+.1}% (+-{:.1})",
            100.0 * l.likes.rel,
            100.0 * l.likes.ci95,
            100.0 * l.comments.rel,
            100.0 * l.comments.ci95,
            100.0 * l.posts.rel,
            100.0 * l.posts.ci95
        ))
    })
    .map(drop)
}

fn pipeline(cli: &Cli) -> Result<()> {
    let (config, _) = pipeline_config(cli)?;
    let runs = std::sync::Mutex::new(Vec::new());
    replicate(cli, |seed, dir| {
        let (run, _) = run_pipeline_into(&config, seed, dir)?;
        let v = &run.value;
        runs.lock().expect("not poisoned").push((seed, v.score_augmented, v.myopic, v.deprecated));
        Ok(format!(
            "seed {seed}: score-augmented value {:.3} vs myopic {:.3} ({:+.3}%), high {:.3} vs low {:.3} (p {:.2e}){}",
            v.score_augmented,
            v.myopic,
            100.0 * v.lift / v.myopic,
            run.high_low.high.ate_estimate,
            run.high_low.low.ate_estimate,
            run.high_low.p_value,
            match run.retrain.deprecated_at {
                Some(c) => format!(", model retired after cycle {c}"),
                None => String::new(),
            }
        ))
    })?;
    if cli.replicas > 1 {
        let mut runs = runs.into_inner().expect("not poisoned");
        runs.sort_by_key(|r| r.0);
        let mut csv = String::from("seed,score_augmented,myopic,lift,deprecated\n");
        for (seed, a, m, d) in &runs {
            csv.push_str(&format!("{seed},{a},{m},{},{d}\n", a - m));
        }
        fs::write(cli.out.join("replicas.csv"), csv)?;
        let wins = runs.iter().filter(|r| r.1 > r.2).count() as u64;
        let n = runs.len() as u64;
        println!("score-augmented won {wins}/{n} seeds, sign test p {:.4}", stats::sign_test_p(wins, n));
    }
    Ok(())
}

// ---- train, evaluate, deploy ----

fn read_experiment(path: &Path) -> Result<(longrun_core::uplift::ExperimentDataset, Vec<u8>)> {
    let bytes = read_input(path)?;
    let data = io::read_experiment_csv(bytes.as_slice()).map_err(|e| config_error(path, e))?;
    Ok((data, bytes))
}

fn read_model(path: &Path) -> Result<(UpliftModel, Vec<u8>)> {
    let bytes = read_input(path)?;
    let model = UpliftModel::from_json(&String::from_utf8_lossy(&bytes)).map_err(|e| config_error(path, e))?;
    Ok((model, bytes))
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let mut inputs = InputHash::default();
    let params = match &cli.config {
        Some(path) => {
            let bytes = read_input(path)?;
            inputs.add("config", &bytes);
            let p: UpliftParams = parse_json(path, &bytes)?;
            for t in [&p.treatment, &p.control, &p.difference] {
                t.validate().map_err(|e| config_error(path, e))?;
            }
            p
        }
        None => PipelineConfig::default().params,
    };
    let (data, bytes) = read_experiment(&args.data)?;
    inputs.add("data", &bytes);
    let model = fit_three_tree(&data, &params)?;
    let mut out = Outputs::create(&cli.out)?;
    out.write("model.json", model.to_json()?.as_bytes())?;
    let curves = [
        &model.m_treatment.training_loss_curve,
        &model.m_control.training_loss_curve,
        &model.m_difference.training_loss_curve,
    ];
    let mut csv = String::from("round,treatment,control,difference\n");
    for r in 0..curves.iter().map(|c| c.len()).max().unwrap_or(0) {
        let cell = |c: &Vec<f64>| c.get(r).map_or(String::new(), f64::to_string);
        csv.push_str(&format!("{r},{},{},{}\n", cell(curves[0]), cell(curves[1]), cell(curves[2])));
    }
    out.write("loss_curves.csv", csv.as_bytes())?;
    out.json("feature_importance.json", &model.m_difference.feature_importance())?;
    out.finish(inputs.finish(), cli.seed)?;
    let last = |c: &Vec<f64>| c.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained on {} rows; final training mse treatment {:.4}, control {:.4}, difference {:.4}",
        model.train_row_count,
        last(curves[0]),
        last(curves[1]),
        last(curves[2])
    );
    Ok(())
}

fn evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<()> {
    let (model, model_bytes) = read_model(&args.model)?;
    let (data, data_bytes) = read_experiment(&args.data)?;
    if !(args.cutoff > 0.0 && args.cutoff < 100.0) {
        return Err(ConfigError(format!("--cutoff {} not in (0, 100)", args.cutoff)).into());
    }
    let cmp = evaluate_high_low(&model, data.evaluation_rows(), args.cutoff)?;
    let mut inputs = InputHash::default();
    inputs.add("model", &model_bytes).add("data", &data_bytes).add("cutoff", &args.cutoff.to_le_bytes());
    let mut out = Outputs::create(&cli.out)?;
    out.json("group_comparison.json", &cmp)?;
    out.finish(inputs.finish(), cli.seed)?;
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.2}%"));
    println!(
        "high (above p{}): ate {:.4} +- {:.4} ({} of control), n {}+{}",
        args.cutoff,
        cmp.high.ate_estimate,
        cmp.high.ci95_halfwidth,
        pct(cmp.high.ate_pct_of_control),
        cmp.high.n_treated,
        cmp.high.n_control
    );
    println!(
        "low: ate {:.4} +- {:.4} ({} of control), n {}+{}",
        cmp.low.ate_estimate,
        cmp.low.ci95_halfwidth,
        pct(cmp.low.ate_pct_of_control),
        cmp.low.n_treated,
        cmp.low.n_control
    );
    println!(
        "difference p {:.3e}, significant: {}, intervals overlap: {}",
        cmp.p_value,
        cmp.difference_significant,
        cmp.cis_overlap()
    );
    Ok(())
}

fn deploy_cmd(cli: &Cli, args: &DeployArgs) -> Result<()> {
    let mut inputs = InputHash::default();
    let bytes = read_input(&args.assignment)?;
    inputs.add("assignment", &bytes);
    let assignment = io::read_assignment_csv(bytes.as_slice()).map_err(|e| config_error(&args.assignment, e))?;
    let scores = match (&args.scores, &args.model, &args.population) {
        (Some(path), _, _) => {
            let bytes = read_input(path)?;
            inputs.add("scores", &bytes);
            io::read_scores_csv(bytes.as_slice()).map_err(|e| config_error(path, e))?
        }
        (None, Some(model_path), Some(pop_path)) => {
            let (model, model_bytes) = read_model(model_path)?;
            let pop_bytes = read_input(pop_path)?;
            inputs.add("model", &model_bytes).add("population", &pop_bytes);
            let features = io::population_features(&String::from_utf8_lossy(&pop_bytes))
                .map_err(|e| config_error(pop_path, e))?;
            features
                .iter()
                .map(|(p, x)| predict_uplift(&model, x).map(|s| (*p, s)))
                .collect::<longrun_core::Result<_>>()?
        }
        _ => {
            return Err(ConfigError("`deploy` needs --scores, or --model with --population".into()).into());
        }
    };
    let table = deploy(&scores, &assignment, DefaultRule::MeanOfScored, args.version, 0)?;
    let mut out = Outputs::create(&cli.out)?;
    out.csv("score_table.csv", |b| table.write_csv(b))?;
    out.finish(inputs.finish(), cli.seed)?;
    println!(
        "score table v{}: {} producers, {} holdout at default score {:.6}",
        table.model_version,
        table.scores.len(),
        assignment.holdout().len(),
        table.default_score
    );
    Ok(())
}

// ---- compare ----

/// Two ranking policies played on one world and scored both ways.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareConfig {
    /// Scenario file, relative to this config. Exclusive with `world`.
    #[serde(default)]
    scenario_file: Option<String>,
    /// Synthetic world built from `--seed`. The responsive world when both
    /// are absent.
    #[serde(default)]
    world: Option<WorldConfig>,
    /// Overrides the scenario's or world's production rule.
    #[serde(default)]
    production: Option<ProductionRule>,
    a: PolicySpec,
    b: PolicySpec,
    /// `producer_id,score[,...]` weighting engagement in the goal metric.
    goal_scores: String,
    #[serde(default)]
    horizon: Option<u32>,
}

#[derive(Serialize)]
struct PolicyResult {
    label: &'static str,
    kind: &'static str,
    discounted_utility: f64,
    goal_metric: f64,
    engagements: usize,
    likes: usize,
    comments: usize,
    /// Engagement on producers missing from the goal scores.
    missing_scores: usize,
}

#[derive(Serialize)]
struct CompareReport {
    seed: u64,
    horizon: u32,
    goal_default_score: f64,
    policies: [PolicyResult; 2],
    utility_winner: &'static str,
    goal_winner: &'static str,
}

fn winner(a: f64, b: f64) -> &'static str {
    if (a - b).abs() <= TIE_EPS * a.abs().max(b.abs()).max(1.0) {
        "tie"
    } else if a > b {
        "a"
    } else {
        "b"
    }
}

fn compare(cli: &Cli) -> Result<()> {
    let path = require_config(cli)?;
    let bytes = read_input(path)?;
    let cfg: CompareConfig = parse_json(path, &bytes)?;
    let base = base_dir(path);
    let mut inputs = InputHash::default();
    inputs.add("config", &bytes);
    let (world, rule) = match (&cfg.scenario_file, &cfg.world) {
        (Some(_), Some(_)) => return Err(config_error(path, "give `scenario_file` or `world`, not both")),
        (Some(file), None) => {
            let scen_path = base.join(file);
            let text = read_input(&scen_path)?;
            inputs.add("scenario", &text);
            let f = io::parse_scenario(&String::from_utf8_lossy(&text)).map_err(|e| config_error(&scen_path, e))?;
            let rule = cfg
                .production
                .or(f.production)
                .ok_or_else(|| config_error(path, "no production rule in the config or the scenario"))?;
            (World::new(f.scenario).map_err(|e| config_error(&scen_path, e))?, rule)
        }
        (None, w) => {
            let w = w.clone().unwrap_or_else(WorldConfig::responsive);
            w.population.validate().map_err(|e| config_error(path, e))?;
            let rule = cfg.production.unwrap_or(w.production);
            (w.build(cli.seed)?, rule)
        }
    };
    rule.validate().map_err(|e| config_error(path, e))?;
    let scores_path = base.join(&cfg.goal_scores);
    let score_bytes = read_input(&scores_path)?;
    inputs.add("goal_scores", &score_bytes);
    let scores = io::read_scores_csv(score_bytes.as_slice()).map_err(|e| config_error(&scores_path, e))?;
    if scores.is_empty() {
        return Err(config_error(&scores_path, "no scores"));
    }
    let table = ScoreTable {
        default_score: stats::mean(&scores.values().copied().collect::<Vec<_>>()),
        scores,
        model_version: 0,
        trained_at: 0,
    };
    let horizon = match cfg.horizon {
        Some(h) => h,
        None => world.horizon().map_err(|e| config_error(path, e))?,
    };
    let mut obj = world.scenario.objective;
    obj.horizon = Horizon::Finite(horizon);

    let mut play = |label: &'static str, spec: &PolicySpec| -> Result<PolicyResult> {
        if let PolicySpec::ScoreAugmented { scores_file, .. } = spec {
            inputs.add(label, &read_input(&base.join(scores_file))?);
        }
        let policy = spec.resolve(&base).map_err(|e| config_error(path, e))?;
        let mut state = ScenarioState::with_horizon(&world, cli.seed, horizon)?;
        run_to_horizon(&world, &mut state, &policy, &rule)?;
        let g = goal_metric(&state.engagement_log, &table);
        let count = |k: EngagementKind| state.engagement_log.iter().filter(|e| e.kind == k).count();
        Ok(PolicyResult {
            label,
            kind: policy.kind(),
            discounted_utility: discounted_utility(&state.ledger, &obj)?.total,
            goal_metric: g.value,
            engagements: g.events,
            likes: count(EngagementKind::Like),
            comments: count(EngagementKind::Comment),
            missing_scores: g.missing,
        })
    };
    let a = play("a", &cfg.a)?;
    let b = play("b", &cfg.b)?;
    let report = CompareReport {
        seed: cli.seed,
        horizon,
        goal_default_score: table.default_score,
        utility_winner: winner(a.discounted_utility, b.discounted_utility),
        goal_winner: winner(a.goal_metric, b.goal_metric),
        policies: [a, b],
    };
    for p in &report.policies {
        println!(
            "{} ({}): discounted utility {:.4}, goal metric {:.4} over {} engagements",
            p.label, p.kind, p.discounted_utility, p.goal_metric, p.engagements
        );
    }
    println!("utility winner: {}, goal metric winner: {}", report.utility_winner, report.goal_winner);
    let mut out = Outputs::create(&cli.out)?;
    out.json("compare_report.json", &report)?;
    out.finish(inputs.finish(), cli.seed)
}
