//! Domain types for the viewer/producer ecosystem and the discounted
//! long-run user value objective.
//!
//! Periods are 1-based. How a period index maps to a discount exponent is
//! set by [`DiscountConvention`]: the default, [`DiscountConvention::FromZero`],
//! weights period `t` by `beta^(t-1)` so a two-period world scores
//! `l(1) + beta * l(2)`. [`DiscountConvention::FromOne`] weights it by
//! `beta^t` instead.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result, ValidationIssue};
use crate::ids::{ContentId, ProducerId, ViewerId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Viewer {
    pub id: ViewerId,
    /// Number of items consumed per period (`J`).
    pub slots_per_period: u32,
    /// Satisfaction a post from each producer yields this viewer.
    pub affinity: BTreeMap<ProducerId, f64>,
}

impl Viewer {
    pub fn affinity_for(&self, producer: ProducerId) -> f64 {
        self.affinity.get(&producer).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Producer {
    pub id: ProducerId,
    /// Pre-experiment features; learners only ever see these.
    pub features: Vec<f64>,
    /// Simulator ground truth for how strongly posting reacts to engagement.
    pub responsiveness: f64,
    /// Expected posts per period absent any engagement effect.
    pub base_rate: f64,
    pub followers: BTreeSet<ViewerId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentItem {
    pub id: ContentId,
    pub producer: ProducerId,
    pub created_at: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngagementKind {
    Like,
    Comment,
}

impl fmt::Display for EngagementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EngagementKind::Like => "like",
            EngagementKind::Comment => "comment",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementEvent {
    pub viewer: ViewerId,
    pub content: ContentId,
    pub producer: ProducerId,
    pub period: u32,
    pub kind: EngagementKind,
    pub value: f64,
}

/// Satisfaction thresholds turning consumption into revealed engagement.
///
/// An item engages its viewer when its value is positive and at least
/// `max(engage, like)`; every engaged item emits one like. An engaged item
/// whose value also reaches `comment` emits a comment as well.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    #[serde(default)]
    pub engage: f64,
    #[serde(default)]
    pub like: f64,
    #[serde(default = "default_comment_threshold")]
    pub comment: f64,
}

fn default_comment_threshold() -> f64 {
    0.7
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            engage: 0.0,
            like: 0.0,
            comment: default_comment_threshold(),
        }
    }
}

impl Thresholds {
    pub fn engages(&self, value: f64) -> bool {
        value > 0.0 && value >= self.engage.max(self.like)
    }

    pub fn comments(&self, value: f64) -> bool {
        self.engages(value) && value >= self.comment
    }
}

/// Realized per-slot satisfaction, keyed by (viewer, period).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UtilityLedger {
    pub entries: BTreeMap<(ViewerId, u32), Vec<f64>>,
}

impl UtilityLedger {
    pub fn record(&mut self, viewer: ViewerId, period: u32, value: f64) {
        self.entries.entry((viewer, period)).or_default().push(value);
    }

    /// Undiscounted satisfaction summed over all viewers in one period.
    pub fn period_total(&self, period: u32) -> f64 {
        self.entries
            .iter()
            .filter(|((_, t), _)| *t == period)
            .flat_map(|(_, v)| v.iter())
            .sum()
    }

    pub fn consumed_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscountConvention {
    /// Period `t` is weighted by `beta^(t-1)`.
    #[default]
    FromZero,
    /// Period `t` is weighted by `beta^t`.
    FromOne,
}

/// Number of periods, or an unbounded horizon (which no evaluation accepts).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Finite(u32),
    Infinite,
}

impl Serialize for Horizon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Horizon::Finite(t) => s.serialize_u32(*t),
            Horizon::Infinite => s.serialize_str("infinite"),
        }
    }
}

impl<'de> Deserialize<'de> for Horizon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct HorizonVisitor;

        impl Visitor<'_> for HorizonVisitor {
            type Value = Horizon;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive period count or \"infinite\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Horizon, E> {
                u32::try_from(v)
                    .map(Horizon::Finite)
                    .map_err(|_| E::custom("horizon too large"))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Horizon, E> {
                u32::try_from(v)
                    .map(Horizon::Finite)
                    .map_err(|_| E::custom("horizon must be non-negative"))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Horizon, E> {
                if v == "infinite" {
                    Ok(Horizon::Infinite)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }

        d.deserialize_any(HorizonVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountedObjective {
    pub beta: f64,
    pub horizon: Horizon,
    #[serde(default)]
    pub convention: DiscountConvention,
}

impl DiscountedObjective {
    pub fn new(beta: f64, horizon: u32) -> Self {
        Self {
            beta,
            horizon: Horizon::Finite(horizon),
            convention: DiscountConvention::FromZero,
        }
    }

    pub fn with_convention(mut self, convention: DiscountConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn finite_horizon(&self) -> Result<u32> {
        match self.horizon {
            Horizon::Finite(t) => Ok(t),
            Horizon::Infinite => Err(Error::InfiniteHorizon),
        }
    }

    /// Weight applied to satisfaction realized in `period`.
    pub fn weight(&self, period: u32) -> f64 {
        let exponent = match self.convention {
            DiscountConvention::FromZero => period.saturating_sub(1),
            DiscountConvention::FromOne => period,
        };
        self.beta.powi(exponent as i32)
    }

    fn issues(&self) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            issues.push(ValidationIssue::new(
                "objective",
                format!("beta {} must lie in (0, 1]", self.beta),
            ));
        }
        if self.horizon == Horizon::Finite(0) {
            issues.push(ValidationIssue::new("objective", "horizon must be at least 1"));
        }
        issues
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscountedValue {
    pub per_viewer: BTreeMap<ViewerId, f64>,
    pub total: f64,
}

/// Sums `weight(t) * l` over every recorded slot.
pub fn discounted_utility(
    ledger: &UtilityLedger,
    obj: &DiscountedObjective,
) -> Result<DiscountedValue> {
    let horizon = obj.finite_horizon()?;
    let mut per_viewer: BTreeMap<ViewerId, f64> = BTreeMap::new();
    for (&(viewer, period), values) in &ledger.entries {
        if period == 0 || period > horizon {
            return Err(Error::PeriodOutOfRange { period, horizon });
        }
        let period_sum: f64 = values.iter().sum();
        *per_viewer.entry(viewer).or_insert(0.0) += obj.weight(period) * period_sum;
    }
    let total = per_viewer.values().sum();
    Ok(DiscountedValue { per_viewer, total })
}

/// Which followers receive a post a producer publishes after period 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentReach {
    /// Every follower, so one viewer's engagement benefits all of them.
    #[default]
    Followers,
    /// Only followers who engaged with the producer in the previous period.
    RecentEngagers,
}

/// A complete world description: who watches, who posts, and how value is scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub viewers: Vec<Viewer>,
    pub producers: Vec<Producer>,
    pub objective: DiscountedObjective,
    #[serde(default)]
    pub thresholds: Thresholds,
    /// Periods a post stays eligible, counting the one it was created in.
    /// `None` keeps unconsumed posts forever.
    #[serde(default = "default_lifetime")]
    pub content_lifetime: Option<u32>,
    #[serde(default)]
    pub reach: ContentReach,
}

fn default_lifetime() -> Option<u32> {
    Some(1)
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let mut issues = match validate_scenario(&self.viewers, &self.producers, &self.objective) {
            Ok(()) => Vec::new(),
            Err(Error::Validation(issues)) => issues,
            Err(e) => return Err(e),
        };
        let t = &self.thresholds;
        for (name, v) in [("engage", t.engage), ("like", t.like), ("comment", t.comment)] {
            if !(0.0..=1.0).contains(&v) {
                issues.push(ValidationIssue::new(
                    "thresholds",
                    format!("{name} threshold {v} must lie in [0, 1]"),
                ));
            }
        }
        if self.content_lifetime == Some(0) {
            issues.push(ValidationIssue::new("scenario", "content_lifetime must be at least 1"));
        }
        if t.comment < t.like {
            issues.push(ValidationIssue::new(
                "thresholds",
                "comment threshold must not be below the like threshold",
            ));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(issues))
        }
    }

    pub fn new(viewers: Vec<Viewer>, producers: Vec<Producer>, objective: DiscountedObjective) -> Self {
        Self {
            viewers,
            producers,
            objective,
            thresholds: Thresholds::default(),
            content_lifetime: default_lifetime(),
            reach: ContentReach::default(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.producers.first().map_or(0, |p| p.features.len())
    }
}

/// Checks type invariants, referential integrity, and feature-length uniformity.
pub fn validate_scenario(
    viewers: &[Viewer],
    producers: &[Producer],
    obj: &DiscountedObjective,
) -> Result<()> {
    let mut issues = obj.issues();

    if viewers.is_empty() {
        issues.push(ValidationIssue::new("population", "no viewers"));
    }
    if producers.is_empty() {
        issues.push(ValidationIssue::new("population", "no producers"));
    }

    let mut viewer_ids = BTreeSet::new();
    for v in viewers {
        if !viewer_ids.insert(v.id) {
            issues.push(ValidationIssue::new(v.id.to_string(), "duplicate viewer id"));
        }
    }
    let mut producer_ids = BTreeSet::new();
    for p in producers {
        if !producer_ids.insert(p.id) {
            issues.push(ValidationIssue::new(p.id.to_string(), "duplicate producer id"));
        }
    }

    for v in viewers {
        let who = v.id.to_string();
        if v.slots_per_period == 0 {
            issues.push(ValidationIssue::new(&who, "slots_per_period must be at least 1"));
        }
        for (producer, &value) in &v.affinity {
            if !(0.0..=1.0).contains(&value) {
                issues.push(ValidationIssue::new(
                    &who,
                    format!("affinity {value} for {producer} outside [0, 1]"),
                ));
            }
            if !producer_ids.contains(producer) {
                issues.push(ValidationIssue::new(
                    &who,
                    format!("affinity references unknown producer {producer}"),
                ));
            }
        }
    }

    let expected_dim = producers.first().map(|p| p.features.len());
    for p in producers {
        let who = p.id.to_string();
        if Some(p.features.len()) != expected_dim {
            issues.push(ValidationIssue::new(
                &who,
                format!(
                    "feature vector length {} differs from {}",
                    p.features.len(),
                    expected_dim.unwrap_or(0)
                ),
            ));
        }
        if p.features.iter().any(|x| !x.is_finite()) {
            issues.push(ValidationIssue::new(&who, "non-finite feature value"));
        }
        if !(0.0..=1.0).contains(&p.responsiveness) {
            issues.push(ValidationIssue::new(
                &who,
                format!("responsiveness {} outside [0, 1]", p.responsiveness),
            ));
        }
        if !(p.base_rate >= 0.0 && p.base_rate.is_finite()) {
            issues.push(ValidationIssue::new(
                &who,
                format!("base_rate {} must be finite and non-negative", p.base_rate),
            ));
        }
        for follower in &p.followers {
            if !viewer_ids.contains(follower) {
                issues.push(ValidationIssue::new(
                    &who,
                    format!("follower {follower} is not a known viewer"),
                ));
            }
        }
    }

    if issues.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(issues))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger(rows: &[(u32, u32, &[f64])]) -> UtilityLedger {
        let mut l = UtilityLedger::default();
        for &(viewer, period, values) in rows {
            for &v in values {
                l.record(ViewerId(viewer), period, v);
            }
        }
        l
    }

    fn viewer(id: u32, affinity: &[(u32, f64)]) -> Viewer {
        Viewer {
            id: ViewerId(id),
            slots_per_period: 1,
            affinity: affinity.iter().map(|&(p, v)| (ProducerId(p), v)).collect(),
        }
    }

    fn producer(id: u32, features: Vec<f64>, followers: &[u32]) -> Producer {
        Producer {
            id: ProducerId(id),
            features,
            responsiveness: 0.5,
            base_rate: 1.0,
            followers: followers.iter().map(|&v| ViewerId(v)).collect(),
        }
    }

    #[test]
    fn two_period_discounting_from_zero() {
        let l = ledger(&[(1, 1, &[1.0]), (1, 2, &[0.5])]);
        let v = discounted_utility(&l, &DiscountedObjective::new(0.9, 2)).unwrap();
        assert!((v.total - 1.45).abs() < 1e-12);
        assert!((v.per_viewer[&ViewerId(1)] - 1.45).abs() < 1e-12);
    }

    #[test]
    fn from_one_convention_discounts_the_first_period() {
        let l = ledger(&[(1, 1, &[1.0]), (1, 2, &[0.5])]);
        let obj = DiscountedObjective::new(0.9, 2).with_convention(DiscountConvention::FromOne);
        let v = discounted_utility(&l, &obj).unwrap();
        assert!((v.total - (0.9 + 0.81 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn vanishing_beta_keeps_only_first_period() {
        let l = ledger(&[(1, 1, &[1.0]), (1, 2, &[0.5])]);
        let v = discounted_utility(&l, &DiscountedObjective::new(1e-9, 2)).unwrap();
        assert!((v.total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn two_viewers_on_producer_two_content() {
        let l = ledger(&[(1, 1, &[0.6]), (1, 2, &[0.6]), (2, 1, &[0.6]), (2, 2, &[0.6])]);
        let v = discounted_utility(&l, &DiscountedObjective::new(0.8, 2)).unwrap();
        assert!((v.per_viewer[&ViewerId(1)] - 1.08).abs() < 1e-12);
        assert!((v.per_viewer[&ViewerId(2)] - 1.08).abs() < 1e-12);
        assert!((v.total - 2.16).abs() < 1e-12);
    }

    #[test]
    fn period_beyond_horizon_is_rejected() {
        let l = ledger(&[(1, 3, &[0.5])]);
        let err = discounted_utility(&l, &DiscountedObjective::new(0.9, 2)).unwrap_err();
        assert!(matches!(err, Error::PeriodOutOfRange { period: 3, horizon: 2 }));
    }

    #[test]
    fn infinite_horizon_is_not_evaluable() {
        let obj = DiscountedObjective {
            beta: 0.9,
            horizon: Horizon::Infinite,
            convention: DiscountConvention::FromZero,
        };
        assert!(matches!(
            discounted_utility(&UtilityLedger::default(), &obj),
            Err(Error::InfiniteHorizon)
        ));
    }

    #[test]
    fn horizon_round_trips_through_json() {
        let obj: DiscountedObjective =
            serde_json::from_str(r#"{"beta":0.5,"horizon":"infinite"}"#).unwrap();
        assert_eq!(obj.horizon, Horizon::Infinite);
        let obj: DiscountedObjective = serde_json::from_str(r#"{"beta":0.5,"horizon":4}"#).unwrap();
        assert_eq!(obj.horizon, Horizon::Finite(4));
        assert_eq!(serde_json::to_string(&obj.horizon).unwrap(), "4");
        assert!(serde_json::from_str::<DiscountedObjective>(r#"{"beta":0.5,"horizon":"forever"}"#).is_err());
    }

    #[test]
    fn well_formed_two_by_two_is_ok() {
        let viewers = vec![viewer(1, &[(1, 0.8), (2, 0.5)]), viewer(2, &[(1, 0.8), (2, 0.5)])];
        let producers = vec![producer(1, vec![0.0], &[1, 2]), producer(2, vec![1.0], &[1, 2])];
        validate_scenario(&viewers, &producers, &DiscountedObjective::new(0.9, 2)).unwrap();
    }

    #[test]
    fn affinity_out_of_range_names_viewer() {
        let viewers = vec![viewer(7, &[(1, 1.2)])];
        let producers = vec![producer(1, vec![0.0], &[7])];
        let Err(Error::Validation(issues)) =
            validate_scenario(&viewers, &producers, &DiscountedObjective::new(0.9, 2))
        else {
            panic!("expected validation failure");
        };
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].entity, "v7");
        assert!(issues[0].message.contains("1.2"));
    }

    #[test]
    fn mismatched_feature_lengths_are_reported() {
        let viewers = vec![viewer(1, &[])];
        let producers = vec![producer(1, vec![0.0; 5], &[1]), producer(2, vec![0.0; 6], &[1])];
        let Err(Error::Validation(issues)) =
            validate_scenario(&viewers, &producers, &DiscountedObjective::new(0.9, 2))
        else {
            panic!("expected validation failure");
        };
        assert!(issues
            .iter()
            .any(|i| i.entity == "p2" && i.message.contains("length 6")));
    }

    #[test]
    fn empty_population_and_dangling_references() {
        let err = validate_scenario(&[], &[], &DiscountedObjective::new(0.9, 2)).unwrap_err();
        assert!(err.to_string().contains("no viewers"));

        let viewers = vec![viewer(1, &[(9, 0.3)])];
        let producers = vec![producer(1, vec![], &[4])];
        let Err(Error::Validation(issues)) =
            validate_scenario(&viewers, &producers, &DiscountedObjective::new(1.0, 1))
        else {
            panic!("expected validation failure");
        };
        assert!(issues.iter().any(|i| i.message.contains("unknown producer p9")));
        assert!(issues.iter().any(|i| i.message.contains("follower v4")));
    }

    #[test]
    fn beta_bounds() {
        let v = vec![viewer(1, &[])];
        let p = vec![producer(1, vec![], &[1])];
        assert!(validate_scenario(&v, &p, &DiscountedObjective::new(1.0, 3)).is_ok());
        assert!(validate_scenario(&v, &p, &DiscountedObjective::new(0.0, 3)).is_err());
        assert!(validate_scenario(&v, &p, &DiscountedObjective::new(1.1, 3)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_ledger() -> impl Strategy<Value = UtilityLedger> {
            prop::collection::vec((0u32..4, 1u32..5, 0.0f64..=1.0), 1..30).prop_map(|rows| {
                let mut l = UtilityLedger::default();
                for (v, t, x) in rows {
                    l.record(ViewerId(v), t, x);
                }
                l
            })
        }

        proptest! {
            #[test]
            fn scaling_scales_total(l in arb_ledger(), beta in 0.01f64..=1.0, c in 0.01f64..10.0) {
                let obj = DiscountedObjective::new(beta, 4);
                let base = discounted_utility(&l, &obj).unwrap().total;
                let mut scaled = l.clone();
                for v in scaled.entries.values_mut() {
                    for x in v.iter_mut() { *x *= c; }
                }
                let s = discounted_utility(&scaled, &obj).unwrap().total;
                prop_assert!((s - c * base).abs() <= 1e-9 * (1.0 + s.abs()));
            }

            #[test]
            fn raising_one_slot_raises_total(l in arb_ledger(), beta in 0.01f64..=1.0, bump in 0.001f64..1.0) {
                let obj = DiscountedObjective::new(beta, 4);
                let base = discounted_utility(&l, &obj).unwrap().total;
                let mut raised = l.clone();
                raised.entries.values_mut().next().unwrap()[0] += bump;
                prop_assert!(discounted_utility(&raised, &obj).unwrap().total > base);
            }

            #[test]
            fn undiscounted_total_is_plain_sum(l in arb_ledger()) {
                let v = discounted_utility(&l, &DiscountedObjective::new(1.0, 4)).unwrap();
                let plain: f64 = l.entries.values().flatten().sum();
                prop_assert!((v.total - plain).abs() < 1e-9);
            }

            #[test]
            fn total_is_sum_of_viewers(l in arb_ledger(), beta in 0.01f64..=1.0) {
                let v = discounted_utility(&l, &DiscountedObjective::new(beta, 4)).unwrap();
                let s: f64 = v.per_viewer.values().sum();
                prop_assert_eq!(s, v.total);
            }
        }
    }
}
