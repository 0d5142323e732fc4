//! End-to-end run: population, boost experiment, three-tree fit, high/low
//! validation, deployment with holdout, retraining, and a final value
//! comparison against myopic ranking.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ecosys::{
    discounted_utility, ContentReach, DiscountedObjective, Scenario, Thresholds,
};
use crate::error::{invalid, Result, StageExt};
use crate::gbdt::TrainParams;
use crate::harness::{
    self, assign, deploy, goal_metric, retrain_loop, run_boost_experiment, Assignment,
    BoostExperiment, DefaultRule, Fractions, GoalMetric, OutcomeMetric, RetrainConfig,
    RetrainOutcome, ScoreTable,
};
use crate::ids::ProducerId;
use crate::policy::{run_to_horizon, RankingPolicy};
use crate::sim::{
    synth_population, AffinitySpec, BaseRateSpec, FollowerGraph, PopulationSpec, ProductionRule,
    ResponsivenessLink, ScenarioState, World,
};
use crate::uplift::{evaluate_high_low, fit_three_tree, predict_uplift, GroupComparison, UpliftModel, UpliftParams};

/// Everything needed to build a synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub population: PopulationSpec,
    pub production: ProductionRule,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default = "one_period")]
    pub content_lifetime: Option<u32>,
    #[serde(default)]
    pub reach: ContentReach,
    pub beta: f64,
    /// Periods over which the final value comparison is scored.
    pub horizon: u32,
}

impl WorldConfig {
    /// Producers whose posting reacts to engagement, with a feature-driven
    /// responsiveness and short-run affinity tilted against them.
    pub fn responsive() -> Self {
        Self {
            population: PopulationSpec {
                n_producers: 3000,
                n_viewers: 2000,
                feature_dim: 4,
                slots_per_period: 3,
                responsiveness_link: ResponsivenessLink {
                    weights: vec![2.0, -1.5, 0.0, 0.0],
                    noise: 0.3,
                    intercept: -0.5,
                },
                base_rate: BaseRateSpec { scale: 0.08, weights: vec![] },
                affinity: AffinitySpec { low: 0.35, high: 0.85, tilt: 0.3 },
                follower_graph: FollowerGraph::RandomP { p: 0.00533 },
            },
            production: ProductionRule::smooth(4.0, 4),
            thresholds: Thresholds::default(),
            content_lifetime: Some(1),
            reach: ContentReach::Followers,
            beta: 0.95,
            horizon: 40,
        }
    }

    /// The same world with nobody reacting to engagement.
    pub fn unresponsive() -> Self {
        let mut c = Self::responsive();
        c.population.responsiveness_link = ResponsivenessLink {
            weights: vec![0.0; c.population.feature_dim],
            noise: 0.0,
            intercept: -1e3,
        };
        c
    }

    pub fn build(&self, seed: u64) -> Result<World> {
        let (producers, viewers) = synth_population(&self.population, seed)?;
        let mut scenario = Scenario::new(viewers, producers, self.objective());
        scenario.thresholds = self.thresholds;
        scenario.content_lifetime = self.content_lifetime;
        scenario.reach = self.reach;
        World::new(scenario)
    }

    pub fn objective(&self) -> DiscountedObjective {
        DiscountedObjective::new(self.beta, self.horizon)
    }
}

fn one_period() -> Option<u32> {
    Some(1)
}

/// Missing fields take their defaults, so a config file only needs the
/// parts it changes (a `world` given at all must be complete).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub world: WorldConfig,
    pub fractions: Fractions,
    pub boost_multiplier: f64,
    pub experiment_periods: u32,
    #[serde(default)]
    pub outcome: OutcomeMetric,
    pub params: UpliftParams,
    pub cutoff_percentile: f64,
    pub retrain: RetrainConfig,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let params = TrainParams {
            rounds: 100,
            max_leaves: 4,
            min_samples_leaf: 40,
            learning_rate: 0.05,
            ..TrainParams::default()
        };
        Self {
            world: WorldConfig::responsive(),
            fractions: Fractions {
                treat: 0.25,
                control: 0.25,
                eval_treat: 0.1,
                eval_control: 0.1,
                holdout: 0.2,
            },
            boost_multiplier: 2.0,
            experiment_periods: 14,
            outcome: OutcomeMetric::Posts,
            params: UpliftParams::shared(params),
            cutoff_percentile: 80.0,
            retrain: RetrainConfig {
                params: UpliftParams::shared(params),
                score_weight: 0.3,
                sub_boost_multiplier: 5.0,
                window_cycles: 4,
                ..RetrainConfig::default()
            },
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.population.validate()?;
        self.world.production.validate()?;
        self.fractions.validate()?;
        if self.experiment_periods == 0 {
            return Err(invalid("experiment_periods", "must be at least 1"));
        }
        if !(self.world.beta > 0.0 && self.world.beta < 1.0) {
            return Err(invalid("world.beta", "must lie in (0, 1)"));
        }
        if self.world.horizon == 0 {
            return Err(invalid("world.horizon", "must be at least 1"));
        }
        if !(self.boost_multiplier.is_finite() && self.boost_multiplier > 0.0) {
            return Err(invalid("boost_multiplier", "must be finite and positive"));
        }
        for (name, pct) in [
            ("cutoff_percentile", self.cutoff_percentile),
            ("retrain.cutoff_percentile", self.retrain.cutoff_percentile),
        ] {
            if !(pct > 0.0 && pct < 100.0) {
                return Err(invalid(name, format!("{pct} not in (0, 100)")));
            }
        }
        let r = &self.retrain;
        if !(r.score_weight.is_finite() && r.score_weight >= 0.0) {
            return Err(invalid("retrain.score_weight", "must be finite and non-negative"));
        }
        if !(r.sub_boost_multiplier.is_finite() && r.sub_boost_multiplier > 0.0) {
            return Err(invalid("retrain.sub_boost_multiplier", "must be finite and positive"));
        }
        if r.horizon == 0 || r.schedule.cadence_periods == 0 {
            return Err(invalid("retrain", "horizon and cadence must be at least 1"));
        }
        for p in [
            &self.params.treatment,
            &self.params.control,
            &self.params.difference,
            &r.params.treatment,
            &r.params.control,
            &r.params.difference,
        ] {
            p.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        harness::hex(&Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueComparison {
    pub score_augmented: f64,
    pub myopic: f64,
    pub lift: f64,
    pub goal_score_augmented: GoalMetric,
    pub goal_myopic: GoalMetric,
    /// True when the final policy is myopic because the model was retired.
    pub deprecated: bool,
}

/// Scores `policy` and myopic ranking from the same initial state and seed.
pub fn compare_value(
    world: &World,
    rule: &ProductionRule,
    table: &ScoreTable,
    weight: f64,
    deprecated: bool,
    seed: u64,
) -> Result<ValueComparison> {
    let obj = world.scenario.objective;
    let deployed = if deprecated {
        RankingPolicy::Myopic
    } else {
        RankingPolicy::ScoreAugmented(table.policy(weight)?)
    };
    let mut a = ScenarioState::initial(world, seed)?;
    run_to_horizon(world, &mut a, &deployed, rule)?;
    let mut b = ScenarioState::initial(world, seed)?;
    run_to_horizon(world, &mut b, &RankingPolicy::Myopic, rule)?;
    let va = discounted_utility(&a.ledger, &obj)?.total;
    let vb = discounted_utility(&b.ledger, &obj)?.total;
    Ok(ValueComparison {
        score_augmented: va,
        myopic: vb,
        lift: va - vb,
        goal_score_augmented: goal_metric(&a.engagement_log, table),
        goal_myopic: goal_metric(&b.engagement_log, table),
        deprecated,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub config: PipelineConfig,
    pub seed: u64,
    pub world: World,
    pub assignment: Assignment,
    pub experiment: BoostExperiment,
    pub model: UpliftModel,
    pub high_low: GroupComparison,
    pub initial_table: ScoreTable,
    pub retrain: RetrainOutcome,
    pub value: ValueComparison,
}

/// Runs every stage in memory.
pub fn run_pipeline(config: &PipelineConfig, seed: u64) -> Result<PipelineRun> {
    run_pipeline_with(config, seed, &mut |_, _| Ok(()))
}

/// Runs the pipeline, writing each artifact under `dir` as soon as its stage
/// finishes, then `manifest.json`. A failing stage leaves the earlier
/// artifacts in place.
pub fn run_pipeline_into(config: &PipelineConfig, seed: u64, dir: &Path) -> Result<(PipelineRun, Manifest)> {
    fs::create_dir_all(dir)?;
    let mut artifacts = BTreeMap::new();
    let run = run_pipeline_with(config, seed, &mut |name, bytes| {
        fs::write(dir.join(name), bytes)?;
        artifacts.insert(name.to_string(), harness::hex(&Sha256::digest(bytes)));
        Ok(())
    })?;
    let manifest = Manifest {
        config_hash: config.hash(),
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        artifacts,
    };
    fs::write(dir.join("manifest.json"), json(&manifest)?)?;
    Ok((run, manifest))
}

type Emit<'a> = dyn FnMut(&str, &[u8]) -> Result<()> + 'a;

fn run_pipeline_with(config: &PipelineConfig, seed: u64, emit: &mut Emit<'_>) -> Result<PipelineRun> {
    config.validate().stage("config")?;
    emit("config.json", &json(config)?)?;
    let world = config.world.build(seed).stage("population")?;
    emit("population.json", crate::io::population_json(&world.scenario)?.as_bytes())?;
    let rule = config.world.production;
    let ids: Vec<ProducerId> = world.producer_ids().collect();
    let assignment = assign(&ids, &config.fractions, seed).stage("assign")?;
    emit("assignment.csv", &csv_bytes(|b| crate::io::write_assignment_csv(&assignment, b))?)?;
    let experiment = run_boost_experiment(
        &world,
        &rule,
        &assignment,
        config.boost_multiplier,
        config.experiment_periods,
        config.outcome,
        seed,
    )
    .stage("experiment")?;
    emit("experiment.csv", &csv_bytes(|b| crate::io::write_experiment_csv(&experiment.dataset, b))?)?;
    emit("experiment_report.json", &json(&experiment.report)?)?;
    let model = fit_three_tree(&experiment.dataset, &config.params).stage("train")?;
    emit("model.json", model.to_json()?.as_bytes())?;
    let high_low = evaluate_high_low(&model, experiment.dataset.evaluation_rows(), config.cutoff_percentile)
        .stage("evaluate")?;
    emit("group_comparison.json", &json(&high_low)?)?;
    let scores = world
        .producers_sorted()
        .map(|p| predict_uplift(&model, &p.features).map(|s| (p.id, s)))
        .collect::<Result<BTreeMap<_, _>>>()
        .stage("deploy")?;
    let initial_table = deploy(&scores, &assignment, DefaultRule::MeanOfScored, 1, config.experiment_periods)
        .stage("deploy")?;
    emit("score_table.csv", &csv_bytes(|b| initial_table.write_csv(b))?)?;
    let retrain = retrain_loop(&world, &rule, &model, &assignment, &config.retrain, seed).stage("retrain")?;
    emit("holdout_lift.csv", &csv_bytes(|b| harness::write_lift_series(&retrain.lifts, b))?)?;
    for (i, t) in retrain.tables.iter().enumerate().skip(1) {
        emit(&format!("score_table_v{}.csv", i + 1), &csv_bytes(|b| t.write_csv(b))?)?;
    }
    let final_table = retrain.tables.last().unwrap_or(&initial_table);
    let value = compare_value(
        &world,
        &rule,
        final_table,
        config.retrain.score_weight,
        retrain.deprecated_at.is_some(),
        seed,
    )
    .stage("compare")?;
    emit("value_comparison.json", &json(&value)?)?;
    log::info!(
        "seed {seed}: value {:.4} vs myopic {:.4} (lift {:+.4})",
        value.score_augmented,
        value.myopic,
        value.lift
    );
    let summary = serde_json::json!({
        "seed": seed,
        "train_rows": model.train_row_count,
        "high_low_p_value": high_low.p_value,
        "deprecated_at": retrain.deprecated_at,
        "holdout_audit": retrain.audit,
        "table_stability": retrain.stability,
        "value_lift": value.lift,
    });
    emit("summary.json", &json(&summary)?)?;
    Ok(PipelineRun {
        config: config.clone(),
        seed,
        world,
        assignment,
        experiment,
        model,
        high_low,
        initial_table,
        retrain,
        value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    /// File name to SHA-256 of its contents.
    pub artifacts: BTreeMap<String, String>,
}

fn json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v)?;
    out.push(b'\n');
    Ok(out)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}
