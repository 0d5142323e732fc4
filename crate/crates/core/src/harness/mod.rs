//! Producer-side A/B experiments on the simulator and the deployment loop
//! that puts learned scores back into ranking.

mod deploy;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::gbdt::default_names;
use crate::ids::ProducerId;
use crate::policy::{run_to_horizon, Boost, RankingPolicy};
use crate::sim::{ProductionRule, ScenarioState, World};
use crate::stats::{self, Estimate};
use crate::uplift::{ExperimentDataset, ExperimentRow, FollowUpDesign, SplitTag};

pub use deploy::{
    deploy, goal_metric, retrain_loop, DefaultRule, DeprecationRule, Drift, GoalMetric,
    HoldoutAudit, HoldoutLift, RetrainConfig, RetrainOutcome, RetrainSchedule, ScoreTable,
    write_lift_series,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Treatment,
    Control,
    EvaluationTreatment,
    EvaluationControl,
    Holdout,
    Untouched,
}

impl Label {
    pub const ALL: [Label; 6] = [
        Label::Treatment,
        Label::Control,
        Label::EvaluationTreatment,
        Label::EvaluationControl,
        Label::Holdout,
        Label::Untouched,
    ];

    pub fn is_treated(self) -> bool {
        matches!(self, Label::Treatment | Label::EvaluationTreatment)
    }

    pub fn in_experiment(self) -> bool {
        matches!(
            self,
            Label::Treatment | Label::Control | Label::EvaluationTreatment | Label::EvaluationControl
        )
    }

    pub fn split(self) -> SplitTag {
        match self {
            Label::EvaluationTreatment | Label::EvaluationControl => SplitTag::Evaluation,
            _ => SplitTag::Train,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Label::Treatment => "treatment",
            Label::Control => "control",
            Label::EvaluationTreatment => "evaluation_treatment",
            Label::EvaluationControl => "evaluation_control",
            Label::Holdout => "holdout",
            Label::Untouched => "untouched",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fractions {
    pub treat: f64,
    pub control: f64,
    pub eval_treat: f64,
    pub eval_control: f64,
    pub holdout: f64,
}

impl Fractions {
    fn as_array(&self) -> [f64; 5] {
        [self.treat, self.control, self.eval_treat, self.eval_control, self.holdout]
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_array();
        if a.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(invalid("fractions", "each fraction must be finite and >= 0"));
        }
        let sum: f64 = a.iter().sum();
        if sum > 1.0 + 1e-12 {
            return Err(Error::FractionSum(sum));
        }
        Ok(())
    }

    /// Exact group sizes for `n` items: floors, then the leftover units go
    /// to the largest remainders (earlier groups win ties).
    pub fn counts(&self, n: usize) -> [usize; 5] {
        let quotas = self.as_array().map(|f| f * n as f64);
        let mut counts = quotas.map(|q| (q + 1e-9).floor() as usize);
        let target = ((quotas.iter().sum::<f64>() + 1e-9).floor() as usize).min(n);
        let mut order: Vec<usize> = (0..5).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - counts[a] as f64;
            let rb = quotas[b] - counts[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        // Floors lose less than one unit per group, so one pass suffices.
        let left = target.saturating_sub(counts.iter().sum());
        for &g in order.iter().take(left) {
            counts[g] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub labels: BTreeMap<ProducerId, Label>,
    pub fractions: Fractions,
    pub seed: u64,
}

impl Assignment {
    pub fn label(&self, p: ProducerId) -> Option<Label> {
        self.labels.get(&p).copied()
    }

    pub fn with_label(&self, label: Label) -> BTreeSet<ProducerId> {
        self.labels
            .iter()
            .filter(|(_, l)| **l == label)
            .map(|(p, _)| *p)
            .collect()
    }

    pub fn holdout(&self) -> BTreeSet<ProducerId> {
        self.with_label(Label::Holdout)
    }

    pub fn group_sizes(&self) -> BTreeMap<Label, usize> {
        let mut sizes: BTreeMap<Label, usize> = Label::ALL.iter().map(|l| (*l, 0)).collect();
        for l in self.labels.values() {
            *sizes.entry(*l).or_default() += 1;
        }
        sizes
    }
}

/// Uniform random disjoint groups, deterministic given `seed`.
pub fn assign(producers: &[ProducerId], fractions: &Fractions, seed: u64) -> Result<Assignment> {
    fractions.validate()?;
    let mut ids: Vec<ProducerId> = producers.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if ids.len() != producers.len() {
        return Err(invalid("producers", "duplicate producer ids"));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let counts = fractions.counts(ids.len());
    let mut labels = BTreeMap::new();
    let mut it = ids.into_iter();
    for (label, count) in Label::ALL.iter().zip(counts) {
        for p in it.by_ref().take(count) {
            labels.insert(p, *label);
        }
    }
    for p in it {
        labels.insert(p, Label::Untouched);
    }
    Ok(Assignment { labels, fractions: *fractions, seed })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeMetric {
    #[default]
    Posts,
    Likes,
    Comments,
}

/// Per-producer totals over a window of periods.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcomes {
    pub likes: u32,
    pub comments: u32,
    pub posts: u32,
}

impl Outcomes {
    pub fn get(&self, m: OutcomeMetric) -> f64 {
        f64::from(match m {
            OutcomeMetric::Posts => self.posts,
            OutcomeMetric::Likes => self.likes,
            OutcomeMetric::Comments => self.comments,
        })
    }
}

pub(crate) fn window_outcomes(state: &ScenarioState, from: u32, to: u32) -> BTreeMap<ProducerId, Outcomes> {
    state
        .activity
        .iter()
        .map(|(p, a)| {
            let (likes, comments, posts) = a.totals(from, to);
            (*p, Outcomes { likes, comments, posts })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lift {
    /// (mean treated - mean control) / mean control.
    pub rel: f64,
    /// Half-width of the 95% interval on `rel`, control mean taken as fixed.
    pub ci95: f64,
    pub abs: f64,
    pub p_value: f64,
}

impl Lift {
    pub fn from_samples(treated: &[f64], control: &[f64]) -> Self {
        let e = stats::welch(treated, control);
        let base = stats::mean(control).abs();
        let (rel, ci95) = if base > 0.0 {
            (e.value / base, e.ci95_halfwidth() / base)
        } else {
            (f64::NAN, f64::NAN)
        };
        Self { rel, ci95, abs: e.value, p_value: e.p_value() }
    }

    pub fn covers_zero(&self) -> bool {
        self.rel.abs() <= self.ci95 || !self.rel.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lifts {
    pub likes: Lift,
    pub comments: Lift,
    pub posts: Lift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub lifts: Lifts,
    pub group_sizes: BTreeMap<Label, usize>,
    pub seed: u64,
    pub boost_multiplier: f64,
    pub periods: u32,
    pub outcome: OutcomeMetric,
    /// SHA-256 over the producer features as they stood before period 1.
    pub feature_snapshot: String,
}

#[derive(Debug, Clone)]
pub struct BoostExperiment {
    pub dataset: ExperimentDataset,
    pub report: ExperimentReport,
    pub outcomes: BTreeMap<ProducerId, Outcomes>,
    pub state: ScenarioState,
}

pub fn feature_snapshot(world: &World) -> String {
    let mut h = Sha256::new();
    for p in world.producers_sorted() {
        h.update(p.id.0.to_le_bytes());
        for f in &p.features {
            h.update(f.to_bits().to_le_bytes());
        }
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs `periods` steps with treatment and evaluation-treatment producers
/// boosted, then collects per-producer outcomes.
pub fn run_boost_experiment(
    world: &World,
    rule: &ProductionRule,
    assignment: &Assignment,
    boost_multiplier: f64,
    periods: u32,
    outcome: OutcomeMetric,
    seed: u64,
) -> Result<BoostExperiment> {
    if periods == 0 {
        return Err(invalid("periods", "must be at least 1"));
    }
    if let Some(p) = world.producer_ids().find(|p| !assignment.labels.contains_key(p)) {
        return Err(invalid("assignment", format!("producer {p} has no label")));
    }
    let boosted: BTreeSet<ProducerId> = assignment
        .labels
        .iter()
        .filter(|(_, l)| l.is_treated())
        .map(|(p, _)| *p)
        .collect();
    if boosted.is_empty() {
        return Err(Error::EmptyBoostSet);
    }
    let policy = RankingPolicy::Boosted(Boost::new(boosted, boost_multiplier)?);
    let snapshot = feature_snapshot(world);
    let mut state = ScenarioState::with_horizon(world, seed, periods)?;
    run_to_horizon(world, &mut state, &policy, rule)?;
    debug_assert_eq!(snapshot, feature_snapshot(world));
    let outcomes = window_outcomes(&state, 1, periods);

    let mut rows = Vec::new();
    for producer in world.producers_sorted() {
        let label = assignment.labels[&producer.id];
        if !label.in_experiment() {
            continue;
        }
        rows.push(ExperimentRow {
            producer: producer.id,
            features: producer.features.clone(),
            treated: label.is_treated(),
            outcome: outcomes[&producer.id].get(outcome),
            split: label.split(),
            observed_at: Some(0),
        });
    }
    let dataset = ExperimentDataset::new(rows, default_names(world.scenario.feature_dim()), Some(1))?;

    let arm = |treated: bool, m: OutcomeMetric| -> Vec<f64> {
        assignment
            .labels
            .iter()
            .filter(|(_, l)| l.in_experiment() && l.is_treated() == treated)
            .map(|(p, _)| outcomes[p].get(m))
            .collect()
    };
    let lift = |m| Lift::from_samples(&arm(true, m), &arm(false, m));
    let report = ExperimentReport {
        lifts: Lifts {
            likes: lift(OutcomeMetric::Likes),
            comments: lift(OutcomeMetric::Comments),
            posts: lift(OutcomeMetric::Posts),
        },
        group_sizes: assignment.group_sizes(),
        seed,
        boost_multiplier,
        periods,
        outcome,
        feature_snapshot: snapshot,
    };
    log::info!(
        "boost experiment: likes {:+.3}, comments {:+.3}, posts {:+.3}",
        report.lifts.likes.rel,
        report.lifts.comments.rel,
        report.lifts.posts.rel
    );
    Ok(BoostExperiment { dataset, report, outcomes, state })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowUpReport {
    /// Mean posts of boosted minus unboosted producers in the high group.
    pub gain_high: Estimate,
    pub gain_low: Estimate,
    pub p_value: f64,
    pub confirmed: bool,
    pub hypothesis: String,
}

/// Runs the paired follow-up experiment and tests its registered hypothesis.
pub fn run_follow_up(
    world: &World,
    rule: &ProductionRule,
    design: &FollowUpDesign,
    boost_multiplier: f64,
    periods: u32,
    seed: u64,
) -> Result<FollowUpReport> {
    let boosted: BTreeSet<ProducerId> = design.boosted().collect();
    if boosted.is_empty() {
        return Err(Error::EmptyBoostSet);
    }
    let policy = RankingPolicy::Boosted(Boost::new(boosted, boost_multiplier)?);
    let mut state = ScenarioState::with_horizon(world, seed, periods)?;
    run_to_horizon(world, &mut state, &policy, rule)?;
    let out = window_outcomes(&state, 1, periods);
    let posts = |ids: &[ProducerId]| -> Result<Vec<f64>> {
        ids.iter()
            .map(|p| {
                out.get(p)
                    .map(|o| f64::from(o.posts))
                    .ok_or_else(|| invalid("design", format!("unknown producer {p}")))
            })
            .collect()
    };
    let gain_high = stats::welch(&posts(&design.high_boosted)?, &posts(&design.high_rest)?);
    let gain_low = stats::welch(&posts(&design.low_boosted)?, &posts(&design.low_rest)?);
    let contrast = gain_high.minus(&gain_low);
    let p_value = contrast.p_value();
    Ok(FollowUpReport {
        gain_high,
        gain_low,
        p_value,
        confirmed: contrast.value > 0.0 && p_value < 0.05,
        hypothesis: design.hypothesis.clone(),
    })
}

