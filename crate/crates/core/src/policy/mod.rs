//! Ranking policies and policy comparison.
//!
//! Every policy orders a viewer's eligible items by a per-item key,
//! descending, and breaks ties by ascending (producer id, content id).

mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::Serialize;

use crate::ecosys::{discounted_utility, ContentItem, DiscountedObjective, Viewer};
use crate::error::{invalid, Error, Result};
use crate::ids::{ContentId, ProducerId, ViewerId};
use crate::sim::{ProductionRule, Rankings, ScenarioState, World};

pub use oracle::{
    best_continuation, enumerate_deviations, exhaustive_optimal, search_bound,
    theorem_condition_holds, OracleResult, TheoremCheck, EXHAUSTIVE_LIMIT, TIE_EPS,
};

/// Explicit rankings per (viewer, period).
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct FixedSequence {
    pub rankings: BTreeMap<(ViewerId, u32), Vec<ContentId>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SequenceEntry {
    pub viewer: ViewerId,
    pub period: u32,
    pub content: Vec<ContentId>,
}

impl FixedSequence {
    pub fn get(&self, viewer: ViewerId, period: u32) -> Option<&[ContentId]> {
        self.rankings.get(&(viewer, period)).map(Vec::as_slice)
    }

    pub fn entries(&self) -> Vec<SequenceEntry> {
        self.rankings
            .iter()
            .map(|(&(viewer, period), content)| SequenceEntry {
                viewer,
                period,
                content: content.clone(),
            })
            .collect()
    }

    /// First period at which the two sequences rank differently for some viewer.
    pub fn first_divergence(&self, other: &FixedSequence) -> Option<u32> {
        let keys: BTreeSet<_> = self.rankings.keys().chain(other.rankings.keys()).collect();
        keys.into_iter()
            .filter(|k| self.rankings.get(k) != other.rankings.get(k))
            .map(|&(_, t)| t)
            .min()
    }
}

/// Multiplicative boost for a set of producers.
#[derive(Debug, Clone, PartialEq)]
pub struct Boost {
    pub producers: BTreeSet<ProducerId>,
    pub multiplier: f64,
}

impl Boost {
    pub fn new(producers: BTreeSet<ProducerId>, multiplier: f64) -> Result<Self> {
        if !(multiplier > 1.0 && multiplier.is_finite()) {
            return Err(invalid("multiplier", format!("must be > 1, got {multiplier}")));
        }
        Ok(Self {
            producers,
            multiplier,
        })
    }

    fn factor(&self, producer: ProducerId) -> f64 {
        if self.producers.contains(&producer) {
            self.multiplier
        } else {
            1.0
        }
    }
}

/// `affinity + weight * score(producer)`, optionally on top of a boost.
#[derive(Debug, Clone)]
pub struct ScoreAugmented {
    pub scores: BTreeMap<ProducerId, f64>,
    pub default_score: f64,
    pub weight: f64,
    /// Applied to the affinity before the score is added. Used by the
    /// deployment loop to run its within-holdout boost sub-experiment.
    pub boost: Option<Boost>,
    missing_lookups: Arc<AtomicU64>,
}

impl ScoreAugmented {
    pub fn new(scores: BTreeMap<ProducerId, f64>, default_score: f64, weight: f64) -> Result<Self> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(invalid("weight", "must be finite and >= 0"));
        }
        Ok(Self {
            scores,
            default_score,
            weight,
            boost: None,
            missing_lookups: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn with_boost(mut self, boost: Boost) -> Self {
        self.boost = Some(boost);
        self
    }

    /// The score ranking actually uses for `producer`.
    pub fn effective_score(&self, producer: ProducerId) -> f64 {
        self.scores.get(&producer).copied().unwrap_or(self.default_score)
    }

    /// How many rank-time lookups fell back to the default score.
    pub fn missing_lookups(&self) -> u64 {
        self.missing_lookups.load(Ordering::Relaxed)
    }

    fn key(&self, affinity: f64, producer: ProducerId) -> f64 {
        let score = match self.scores.get(&producer) {
            Some(&s) => s,
            None => {
                self.missing_lookups.fetch_add(1, Ordering::Relaxed);
                log::debug!("no score for {producer}, using default {}", self.default_score);
                self.default_score
            }
        };
        let boosted = self.boost.as_ref().map_or(affinity, |b| affinity * b.factor(producer));
        boosted + self.weight * score
    }
}

#[derive(Debug, Clone)]
pub enum RankingPolicy {
    Myopic,
    Boosted(Boost),
    ScoreAugmented(ScoreAugmented),
    FixedSequence(FixedSequence),
}

impl RankingPolicy {
    pub fn kind(&self) -> &'static str {
        match self {
            RankingPolicy::Myopic => "myopic",
            RankingPolicy::Boosted(_) => "boosted",
            RankingPolicy::ScoreAugmented(_) => "score_augmented",
            RankingPolicy::FixedSequence(_) => "fixed_sequence",
        }
    }

    /// Orders `inventory` for `viewer` in `period`.
    pub fn rank(&self, viewer: &Viewer, inventory: &[&ContentItem], period: u32) -> Result<Vec<ContentId>> {
        let key = |item: &ContentItem| -> f64 {
            let a = viewer.affinity_for(item.producer);
            match self {
                RankingPolicy::Myopic | RankingPolicy::FixedSequence(_) => a,
                RankingPolicy::Boosted(b) => a * b.factor(item.producer),
                RankingPolicy::ScoreAugmented(s) => s.key(a, item.producer),
            }
        };
        if let RankingPolicy::FixedSequence(seq) = self {
            return seq
                .get(viewer.id, period)
                .map(<[ContentId]>::to_vec)
                .ok_or(Error::MissingSequenceEntry {
                    viewer: viewer.id,
                    period,
                });
        }
        let mut keyed: Vec<(f64, ProducerId, ContentId)> = inventory
            .iter()
            .map(|item| (key(item), item.producer, item.id))
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        Ok(keyed.into_iter().map(|(_, _, c)| c).collect())
    }

    /// Rankings for every viewer in the state's current period.
    pub fn rankings(&self, world: &World, state: &ScenarioState) -> Result<Rankings> {
        world
            .viewers_sorted()
            .map(|v| {
                let inv = state.eligible(v.id);
                self.rank(v, &inv, state.period).map(|r| (v.id, r))
            })
            .collect()
    }
}

/// Plays `policy` until the state reaches its horizon.
pub fn run_to_horizon(
    world: &World,
    state: &mut ScenarioState,
    policy: &RankingPolicy,
    rule: &ProductionRule,
) -> Result<()> {
    while !state.is_finished() {
        let r = policy.rankings(world, state)?;
        state.step(world, &r, rule)?;
    }
    Ok(())
}

/// Plays `policy` from the initial state and records what each viewer consumed,
/// as sorted content lists, in the form the oracle enumerates.
pub fn consumed_sequence(
    world: &World,
    policy: &RankingPolicy,
    rule: &ProductionRule,
    seed: u64,
) -> Result<(FixedSequence, ScenarioState)> {
    let mut state = ScenarioState::initial(world, seed)?;
    let mut seq = FixedSequence::default();
    while !state.is_finished() {
        let r = policy.rankings(world, &state)?;
        for v in world.viewers_sorted() {
            let mut head: Vec<ContentId> = r[&v.id]
                .iter()
                .take(v.slots_per_period as usize)
                .copied()
                .collect();
            head.sort_unstable();
            seq.rankings.insert((v.id, state.period), head);
        }
        state.step(world, &r, rule)?;
    }
    Ok((seq, state))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    A,
    B,
    Tie,
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyComparison {
    pub total_a: f64,
    pub total_b: f64,
    pub per_viewer_delta: BTreeMap<ViewerId, f64>,
    pub winner: Winner,
}

impl PolicyComparison {
    pub fn from_totals(
        a: &crate::ecosys::DiscountedValue,
        b: &crate::ecosys::DiscountedValue,
    ) -> Self {
        let viewers: BTreeSet<_> = a.per_viewer.keys().chain(b.per_viewer.keys()).collect();
        let per_viewer_delta = viewers
            .into_iter()
            .map(|v| {
                let x = a.per_viewer.get(v).copied().unwrap_or(0.0);
                let y = b.per_viewer.get(v).copied().unwrap_or(0.0);
                (*v, x - y)
            })
            .collect();
        let winner = if (a.total - b.total).abs() <= TIE_EPS {
            Winner::Tie
        } else if a.total > b.total {
            Winner::A
        } else {
            Winner::B
        };
        Self {
            total_a: a.total,
            total_b: b.total,
            per_viewer_delta,
            winner,
        }
    }
}

/// Simulates both policies from the same initial state and seed.
pub fn compare_policies(
    world: &World,
    obj: &DiscountedObjective,
    rule: &ProductionRule,
    a: &RankingPolicy,
    b: &RankingPolicy,
    seed: u64,
) -> Result<PolicyComparison> {
    let mut sa = ScenarioState::initial(world, seed)?;
    run_to_horizon(world, &mut sa, a, rule)?;
    let mut sb = ScenarioState::initial(world, seed)?;
    run_to_horizon(world, &mut sb, b, rule)?;
    Ok(PolicyComparison::from_totals(
        &discounted_utility(&sa.ledger, obj)?,
        &discounted_utility(&sb.ledger, obj)?,
    ))
}
