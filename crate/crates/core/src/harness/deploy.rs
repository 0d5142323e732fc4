use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{window_outcomes, Assignment, OutcomeMetric};
use crate::ecosys::{EngagementEvent, Scenario};
use crate::error::{invalid, Error, Result};
use crate::gbdt::default_names;
use crate::ids::ProducerId;
use crate::policy::{Boost, RankingPolicy, ScoreAugmented};
use crate::sim::{ProductionRule, ScenarioState, World};
use crate::stats;
use crate::uplift::{
    evaluate_high_low, fit_three_tree, predict_uplift, ExperimentDataset, ExperimentRow, SplitTag,
    UpliftModel, UpliftParams,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefaultRule {
    #[default]
    MeanOfScored,
}

/// Published per-producer scores. Holdout producers carry `default_score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub scores: BTreeMap<ProducerId, f64>,
    pub default_score: f64,
    pub model_version: u32,
    pub trained_at: u32,
}

impl ScoreTable {
    /// Score for `producer` and whether the default had to be used.
    pub fn score(&self, producer: ProducerId) -> (f64, bool) {
        match self.scores.get(&producer) {
            Some(&s) => (s, false),
            None => (self.default_score, true),
        }
    }

    pub fn policy(&self, weight: f64) -> Result<ScoreAugmented> {
        ScoreAugmented::new(self.scores.clone(), self.default_score, weight)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["producer_id", "score", "version"])?;
        for (p, s) in &self.scores {
            w.write_record([p.0.to_string(), s.to_string(), self.model_version.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `producer_id,score,version`. The default score is recomputed
    /// as the mean of the rows not listed in `holdout`.
    pub fn read_csv<R: Read>(input: R, holdout: &BTreeSet<ProducerId>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            producer_id: u32,
            score: f64,
            version: u32,
        }
        let mut scores = BTreeMap::new();
        let mut version = None;
        for (i, rec) in csv::Reader::from_reader(input).deserialize::<Row>().enumerate() {
            let row = rec?;
            if !row.score.is_finite() {
                return Err(Error::Parse(format!("row {}: non-finite score", i + 1)));
            }
            if *version.get_or_insert(row.version) != row.version {
                return Err(Error::Parse(format!("row {}: mixed versions", i + 1)));
            }
            if scores.insert(ProducerId(row.producer_id), row.score).is_some() {
                return Err(Error::Parse(format!("row {}: duplicate producer {}", i + 1, row.producer_id)));
            }
        }
        let scored: Vec<f64> = scores
            .iter()
            .filter(|(p, _)| !holdout.contains(p))
            .map(|(_, s)| *s)
            .collect();
        if scored.is_empty() {
            return Err(Error::EmptyScores);
        }
        let default_score = stats::mean(&scored);
        if !default_score.is_finite() {
            return Err(Error::Parse("mean score overflows".into()));
        }
        Ok(Self {
            default_score,
            scores,
            model_version: version.unwrap_or(0),
            trained_at: 0,
        })
    }
}

/// Builds a table from model scores; holdout producers get the mean of the
/// scored producers so they are neither promoted nor demoted.
pub fn deploy(
    scores: &BTreeMap<ProducerId, f64>,
    assignment: &Assignment,
    rule: DefaultRule,
    model_version: u32,
    trained_at: u32,
) -> Result<ScoreTable> {
    let holdout = assignment.holdout();
    let mut table: BTreeMap<ProducerId, f64> = scores
        .iter()
        .filter(|(p, _)| !holdout.contains(p))
        .map(|(p, s)| (*p, *s))
        .collect();
    if table.is_empty() {
        return Err(Error::EmptyScores);
    }
    if let Some(p) = assignment.labels.keys().find(|p| !holdout.contains(p) && !table.contains_key(p)) {
        return Err(Error::MissingScore(*p));
    }
    let default_score = match rule {
        DefaultRule::MeanOfScored => stats::mean(&table.values().copied().collect::<Vec<_>>()),
    };
    for p in holdout {
        table.insert(p, default_score);
    }
    Ok(ScoreTable {
        scores: table,
        default_score,
        model_version,
        trained_at,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalMetric {
    pub value: f64,
    pub events: usize,
    /// Events whose producer had no entry and fell back to the default.
    pub missing: usize,
}

/// Engagement events weighted by their producer's score.
pub fn goal_metric(log: &[EngagementEvent], table: &ScoreTable) -> GoalMetric {
    let mut value = 0.0;
    let mut missing = 0;
    for e in log {
        let (s, miss) = table.score(e.producer);
        value += s;
        missing += usize::from(miss);
    }
    GoalMetric { value, events: log.len(), missing }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeprecationRule {
    /// A cycle counts against the model when its holdout lift is at or
    /// below this value.
    pub threshold: f64,
    pub consecutive: u32,
}

impl Default for DeprecationRule {
    fn default() -> Self {
        Self { threshold: 0.0, consecutive: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrainSchedule {
    pub cadence_periods: u32,
    pub deprecation: DeprecationRule,
}

impl Default for RetrainSchedule {
    fn default() -> Self {
        Self { cadence_periods: 7, deprecation: DeprecationRule::default() }
    }
}

/// Scales every producer's responsiveness from `at_period` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub at_period: u32,
    pub responsiveness_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrainConfig {
    pub schedule: RetrainSchedule,
    pub horizon: u32,
    pub score_weight: f64,
    /// Boost applied to a rotating half of the holdout; the only source of
    /// exogenous variation once scores are deployed.
    pub sub_boost_multiplier: f64,
    pub sub_boost_fraction: f64,
    /// How many recent cycles of holdout data each refit sees.
    pub window_cycles: u32,
    pub cutoff_percentile: f64,
    pub params: UpliftParams,
    pub outcome: OutcomeMetric,
    pub drift: Option<Drift>,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self {
            schedule: RetrainSchedule::default(),
            horizon: 28,
            score_weight: 1.0,
            sub_boost_multiplier: 2.0,
            sub_boost_fraction: 0.5,
            window_cycles: 2,
            cutoff_percentile: 50.0,
            params: UpliftParams::default(),
            outcome: OutcomeMetric::Posts,
            drift: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldoutLift {
    pub cycle: u32,
    /// Boost effect among holdout producers the live model scores high,
    /// minus the effect among those it scores low.
    pub lift: f64,
    pub ci95: f64,
}

impl HoldoutLift {
    pub fn lower(&self) -> f64 {
        self.lift - self.ci95
    }
}

/// Every period, each holdout producer's effective ranking score is compared
/// with the published default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutAudit {
    pub checks: u64,
    pub violations: u64,
}

#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    /// The initial table followed by one per successful refit.
    pub tables: Vec<ScoreTable>,
    pub lifts: Vec<HoldoutLift>,
    pub deprecated_at: Option<u32>,
    pub audit: HoldoutAudit,
    /// Spearman correlation between consecutive tables over scored producers.
    pub stability: Vec<f64>,
    pub model: UpliftModel,
    pub state: ScenarioState,
}

pub fn write_lift_series<W: Write>(lifts: &[HoldoutLift], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cycle", "lift", "ci95"])?;
    for l in lifts {
        w.write_record([l.cycle.to_string(), l.lift.to_string(), l.ci95.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn score_all(model: &UpliftModel, world: &World) -> Result<BTreeMap<ProducerId, f64>> {
    world
        .producers_sorted()
        .map(|p| predict_uplift(model, &p.features).map(|s| (p.id, s)))
        .collect()
}

fn drifted(world: &World, drift: &Drift) -> Result<World> {
    let mut scenario: Scenario = world.scenario.clone();
    for p in &mut scenario.producers {
        p.responsiveness = (p.responsiveness * drift.responsiveness_factor).clamp(0.0, 1.0);
    }
    World::new(scenario)
}

/// Measures whether the live model still separates responsive holdout
/// producers, using this cycle's sub-experiment.
fn holdout_lift(model: &UpliftModel, rows: &[ExperimentRow], cycle: u32, cutoff: f64) -> HoldoutLift {
    let eval: Vec<ExperimentRow> = rows
        .iter()
        .cloned()
        .map(|mut r| {
            r.split = SplitTag::Evaluation;
            r
        })
        .collect();
    match evaluate_high_low(model, &eval, cutoff) {
        Ok(g) => {
            let c = g.high.estimate().minus(&g.low.estimate());
            HoldoutLift { cycle, lift: c.value, ci95: c.ci95_halfwidth() }
        }
        Err(e) => {
            log::warn!("cycle {cycle}: holdout lift unavailable: {e}");
            HoldoutLift { cycle, lift: f64::NAN, ci95: f64::NAN }
        }
    }
}

/// Plays the deployed policy for `config.horizon` periods, refitting from
/// holdout data every cadence and retiring the model when the holdout stops
/// confirming it.
pub fn retrain_loop(
    world: &World,
    rule: &ProductionRule,
    initial: &UpliftModel,
    assignment: &Assignment,
    config: &RetrainConfig,
    seed: u64,
) -> Result<RetrainOutcome> {
    let holdout: Vec<ProducerId> = assignment.holdout().into_iter().collect();
    if holdout.is_empty() {
        return Err(Error::EmptyHoldout);
    }
    let cadence = config.schedule.cadence_periods;
    if cadence == 0 {
        return Err(invalid("cadence_periods", "must be at least 1"));
    }
    if cadence > config.horizon {
        log::warn!("cadence {cadence} exceeds horizon {}; no retrain will happen", config.horizon);
    }
    if !(0.0..=1.0).contains(&config.sub_boost_fraction) {
        return Err(invalid("sub_boost_fraction", "must be in [0, 1]"));
    }

    let mut live_world = world.clone();
    let mut state = ScenarioState::with_horizon(world, seed, config.horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x401d);
    let mut model = initial.clone();
    let mut table = deploy(&score_all(&model, world)?, assignment, DefaultRule::MeanOfScored, 1, 0)?;
    let mut tables = vec![table.clone()];
    let mut lifts = Vec::new();
    let mut stability = Vec::new();
    let mut audit = HoldoutAudit::default();
    let mut deprecated_at = None;
    let mut bad_streak = 0;
    let mut history: Vec<Vec<ExperimentRow>> = Vec::new();
    let n_boost = (holdout.len() as f64 * config.sub_boost_fraction).round() as usize;
    let mut cycle = 0;

    while !state.is_finished() {
        cycle += 1;
        let start = state.period;
        let end = (start + cadence - 1).min(config.horizon);
        let mut order = holdout.clone();
        order.shuffle(&mut rng);
        let boosted: BTreeSet<ProducerId> = order[..n_boost].iter().copied().collect();
        let sub = Boost::new(boosted.clone(), config.sub_boost_multiplier)?;
        let policy = if deprecated_at.is_none() {
            RankingPolicy::ScoreAugmented(table.policy(config.score_weight)?.with_boost(sub))
        } else {
            RankingPolicy::Boosted(sub)
        };

        while state.period <= end {
            if let Some(d) = &config.drift {
                if state.period == d.at_period {
                    live_world = drifted(world, d)?;
                    log::info!("responsiveness scaled by {} at period {}", d.responsiveness_factor, d.at_period);
                }
            }
            if let RankingPolicy::ScoreAugmented(s) = &policy {
                for p in &holdout {
                    audit.checks += 1;
                    if s.effective_score(*p).to_bits() != table.default_score.to_bits() {
                        audit.violations += 1;
                    }
                }
            }
            let r = policy.rankings(&live_world, &state)?;
            state.step(&live_world, &r, rule)?;
        }

        let out = window_outcomes(&state, start, end);
        let rows: Vec<ExperimentRow> = holdout
            .iter()
            .map(|p| ExperimentRow {
                producer: *p,
                features: world.producer(*p).expect("holdout comes from the world").features.clone(),
                treated: boosted.contains(p),
                outcome: out[p].get(config.outcome),
                split: SplitTag::Train,
                observed_at: None,
            })
            .collect();
        let lift = holdout_lift(&model, &rows, cycle, config.cutoff_percentile);
        lifts.push(lift);
        history.push(rows);
        if deprecated_at.is_some() {
            continue;
        }
        // A NaN lift counts against the model too.
        if !(lift.lift > config.schedule.deprecation.threshold) {
            bad_streak += 1;
        } else {
            bad_streak = 0;
        }
        if bad_streak >= config.schedule.deprecation.consecutive {
            log::info!("model deprecated after cycle {cycle}; reverting to myopic ranking");
            deprecated_at = Some(cycle);
            continue;
        }
        if end - start + 1 < cadence {
            continue;
        }
        let window = config.window_cycles.max(1) as usize;
        let recent: Vec<ExperimentRow> = history.iter().rev().take(window).flatten().cloned().collect();
        let data = ExperimentDataset::new(recent, default_names(world.scenario.feature_dim()), None)?;
        model = fit_three_tree(&data, &config.params)?;
        let next = deploy(
            &score_all(&model, world)?,
            assignment,
            DefaultRule::MeanOfScored,
            table.model_version + 1,
            end,
        )?;
        stability.push(table_spearman(&table, &next, &assignment.holdout()));
        table = next;
        tables.push(table.clone());
    }
    Ok(RetrainOutcome { tables, lifts, deprecated_at, audit, stability, model, state })
}

fn table_spearman(a: &ScoreTable, b: &ScoreTable, holdout: &BTreeSet<ProducerId>) -> f64 {
    let (xs, ys): (Vec<f64>, Vec<f64>) = a
        .scores
        .iter()
        .filter(|(p, _)| !holdout.contains(p))
        .filter_map(|(p, s)| b.scores.get(p).map(|t| (*s, *t)))
        .unzip();
    stats::spearman(&xs, &ys)
}
