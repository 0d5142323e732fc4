//! Seeded simulation of content creation, consumption and engagement.
//!
//! Each call to [`ScenarioState::step`] plays one period: every viewer
//! consumes the head of the ranking they were given, engagement is emitted
//! for the items they liked, and each producer decides how much to post in
//! the next period from the engagement it just received.

mod population;
mod two_period;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ecosys::{
    ContentItem, ContentReach, EngagementEvent, EngagementKind, Producer, Scenario, UtilityLedger,
    Viewer,
};
use crate::error::{invalid, Error, Result};
use crate::ids::{ContentId, ProducerId, ViewerId};

pub use population::{
    synth_population, AffinitySpec, BaseRateSpec, FollowerGraph, PopulationSpec, ResponsivenessLink,
};
pub use two_period::{make_two_period_scenario, make_two_period_scenario_with_reach, TwoPeriodInstance};

/// Per-viewer ordered content lists for one period.
pub type Rankings = BTreeMap<ViewerId, Vec<ContentId>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductionMode {
    /// A producer posts `ceil(responsiveness * max_posts)` items next period
    /// iff it received at least `threshold_k` engagements this period, and
    /// nothing otherwise.
    Threshold,
    /// Expected posts next period are
    /// `base_rate * (1 + responsiveness * smooth_gain * ln(1 + E))`, capped at
    /// `max_posts` and rounded stochastically.
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductionRule {
    pub mode: ProductionMode,
    #[serde(default = "default_threshold_k")]
    pub threshold_k: u32,
    #[serde(default)]
    pub smooth_gain: f64,
    pub max_posts: u32,
}

fn default_threshold_k() -> u32 {
    1
}

impl ProductionRule {
    pub fn threshold(k: u32, max_posts: u32) -> Self {
        Self {
            mode: ProductionMode::Threshold,
            threshold_k: k,
            smooth_gain: 0.0,
            max_posts,
        }
    }

    pub fn smooth(gain: f64, max_posts: u32) -> Self {
        Self {
            mode: ProductionMode::Smooth,
            threshold_k: default_threshold_k(),
            smooth_gain: gain,
            max_posts,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_posts == 0 {
            return Err(invalid("max_posts", "must be at least 1"));
        }
        if !(self.smooth_gain >= 0.0 && self.smooth_gain.is_finite()) {
            return Err(invalid("smooth_gain", "must be finite and non-negative"));
        }
        Ok(())
    }

    /// Expected next-period posts given `engagements` received this period.
    /// Exact in threshold mode; the pre-rounding mean in smooth mode.
    pub fn expected_posts(&self, producer: &Producer, engagements: u32) -> f64 {
        let cap = f64::from(self.max_posts);
        match self.mode {
            ProductionMode::Threshold => {
                if engagements >= self.threshold_k {
                    // 0.7 * 10 is 7.000000000000001; ceil would make it 8.
                    (producer.responsiveness * cap - 1e-9).ceil().clamp(0.0, cap)
                } else {
                    0.0
                }
            }
            ProductionMode::Smooth => {
                let lift = producer.responsiveness
                    * self.smooth_gain
                    * f64::from(engagements).ln_1p();
                (producer.base_rate * (1.0 + lift)).min(cap)
            }
        }
    }

    /// `u` is the producer's uniform draw for this period.
    fn sample_posts(&self, producer: &Producer, engagements: u32, u: f64) -> u32 {
        let expected = self.expected_posts(producer, engagements);
        match self.mode {
            ProductionMode::Threshold => expected as u32,
            ProductionMode::Smooth => {
                let whole = expected.floor();
                let extra = if u < expected - whole { 1.0 } else { 0.0 };
                (whole + extra) as u32
            }
        }
    }
}

/// A validated scenario with id lookups.
#[derive(Debug, Clone)]
pub struct World {
    pub scenario: Scenario,
    viewer_index: BTreeMap<ViewerId, usize>,
    producer_index: BTreeMap<ProducerId, usize>,
}

impl World {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let viewer_index = scenario
            .viewers
            .iter()
            .enumerate()
            .map(|(i, v)| (v.id, i))
            .collect();
        let producer_index = scenario
            .producers
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id, i))
            .collect();
        Ok(Self {
            scenario,
            viewer_index,
            producer_index,
        })
    }

    pub fn viewer(&self, id: ViewerId) -> Option<&Viewer> {
        self.viewer_index.get(&id).map(|&i| &self.scenario.viewers[i])
    }

    pub fn producer(&self, id: ProducerId) -> Option<&Producer> {
        self.producer_index
            .get(&id)
            .map(|&i| &self.scenario.producers[i])
    }

    pub fn viewer_ids(&self) -> impl Iterator<Item = ViewerId> + '_ {
        self.viewer_index.keys().copied()
    }

    pub fn producer_ids(&self) -> impl Iterator<Item = ProducerId> + '_ {
        self.producer_index.keys().copied()
    }

    pub fn horizon(&self) -> Result<u32> {
        self.scenario.objective.finite_horizon()
    }

    /// Producers in ascending id order.
    pub fn producers_sorted(&self) -> impl Iterator<Item = &Producer> + '_ {
        self.producer_index.values().map(|&i| &self.scenario.producers[i])
    }

    pub fn viewers_sorted(&self) -> impl Iterator<Item = &Viewer> + '_ {
        self.viewer_index.values().map(|&i| &self.scenario.viewers[i])
    }
}

/// What one producer did and received, per period (index `t - 1`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ProducerActivity {
    pub likes: Vec<u32>,
    pub comments: Vec<u32>,
    /// Posts created at the end of period `t`, available from `t + 1`.
    pub new_posts: Vec<u32>,
}

impl ProducerActivity {
    fn window_sum(v: &[u32], from: u32, to: u32) -> u32 {
        let lo = from.saturating_sub(1) as usize;
        let hi = (to as usize).min(v.len());
        v.get(lo..hi).map_or(0, |s| s.iter().sum())
    }

    /// Totals over periods `from..=to`: (likes, comments, new posts).
    pub fn totals(&self, from: u32, to: u32) -> (u32, u32, u32) {
        (
            Self::window_sum(&self.likes, from, to),
            Self::window_sum(&self.comments, from, to),
            Self::window_sum(&self.new_posts, from, to),
        )
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioState {
    /// Period about to be played.
    pub period: u32,
    pub horizon: u32,
    pub inventory: BTreeMap<ViewerId, BTreeSet<ContentId>>,
    pub engagement_log: Vec<EngagementEvent>,
    pub ledger: UtilityLedger,
    pub activity: BTreeMap<ProducerId, ProducerActivity>,
    pub rng_seed: u64,
    content: BTreeMap<ContentId, ContentItem>,
    consumed: BTreeSet<(ViewerId, ContentId)>,
    next_content: u64,
}

impl ScenarioState {
    /// Period 1 with one post from every producer in its followers' inventories.
    pub fn initial(world: &World, seed: u64) -> Result<Self> {
        Self::with_horizon(world, seed, world.horizon()?)
    }

    /// Like [`ScenarioState::initial`] but runs for `horizon` periods
    /// regardless of the objective. Used by experiments and deployment runs.
    pub fn with_horizon(world: &World, seed: u64, horizon: u32) -> Result<Self> {
        let mut state = Self {
            period: 1,
            horizon,
            inventory: world.viewer_ids().map(|v| (v, BTreeSet::new())).collect(),
            engagement_log: Vec::new(),
            ledger: UtilityLedger::default(),
            activity: world
                .producer_ids()
                .map(|p| (p, ProducerActivity::default()))
                .collect(),
            rng_seed: seed,
            content: BTreeMap::new(),
            consumed: BTreeSet::new(),
            next_content: 0,
        };
        for producer in world.producers_sorted() {
            state.publish(producer.id, 1, &producer.followers);
        }
        Ok(state)
    }

    /// The uniform draw behind `producer`'s posting in `period`. Keyed by
    /// producer and period rather than taken from one shared stream, so two
    /// policies run from the same seed see the same randomness wherever
    /// their trajectories agree.
    pub fn posting_draw(&self, producer: ProducerId, period: u32) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(u64::from(producer.0));
        rng.set_word_pos(u128::from(period) * 16);
        rng.random()
    }

    pub fn is_finished(&self) -> bool {
        self.period > self.horizon
    }

    pub fn content(&self, id: ContentId) -> Option<&ContentItem> {
        self.content.get(&id)
    }

    /// Eligible items for `viewer`, ascending by content id.
    pub fn eligible(&self, viewer: ViewerId) -> Vec<&ContentItem> {
        self.inventory
            .get(&viewer)
            .into_iter()
            .flatten()
            .filter_map(|c| self.content.get(c))
            .collect()
    }

    pub fn has_consumed(&self, viewer: ViewerId, content: ContentId) -> bool {
        self.consumed.contains(&(viewer, content))
    }

    fn publish<'a>(
        &mut self,
        producer: ProducerId,
        created_at: u32,
        recipients: impl IntoIterator<Item = &'a ViewerId>,
    ) {
        let id = ContentId(self.next_content);
        self.next_content += 1;
        self.content.insert(
            id,
            ContentItem {
                id,
                producer,
                created_at,
            },
        );
        for viewer in recipients {
            if let Some(inv) = self.inventory.get_mut(viewer) {
                inv.insert(id);
            }
        }
    }

    fn expire(&mut self, lifetime: u32, next_period: u32) {
        let content = &self.content;
        for inv in self.inventory.values_mut() {
            inv.retain(|c| content[c].created_at + lifetime > next_period);
        }
    }

    /// Plays the current period and advances to the next.
    ///
    /// Viewers missing from `rankings` consume nothing. The state is left
    /// untouched when an error is returned.
    pub fn step(&mut self, world: &World, rankings: &Rankings, rule: &ProductionRule) -> Result<()> {
        if self.is_finished() {
            return Err(Error::PastHorizon {
                period: self.period,
                horizon: self.horizon,
            });
        }
        rule.validate()?;
        for (&viewer, ranking) in rankings {
            let inv = self.inventory.get(&viewer);
            let mut seen = BTreeSet::new();
            for &c in ranking {
                if !inv.is_some_and(|i| i.contains(&c)) || !seen.insert(c) {
                    return Err(Error::IneligibleContent { viewer, content: c });
                }
            }
        }

        let t = self.period;
        let thresholds = world.scenario.thresholds;
        let mut received: BTreeMap<ProducerId, (u32, u32)> = BTreeMap::new();
        let mut engagers: BTreeMap<ProducerId, BTreeSet<ViewerId>> = BTreeMap::new();
        for viewer in world.viewers_sorted() {
            let Some(ranking) = rankings.get(&viewer.id) else {
                continue;
            };
            let take = ranking.len().min(viewer.slots_per_period as usize);
            for &c in &ranking[..take] {
                let producer = self.content[&c].producer;
                let value = viewer.affinity_for(producer);
                self.ledger.record(viewer.id, t, value);
                self.consumed.insert((viewer.id, c));
                if let Some(inv) = self.inventory.get_mut(&viewer.id) {
                    inv.remove(&c);
                }
                if thresholds.engages(value) {
                    received.entry(producer).or_default().0 += 1;
                    engagers.entry(producer).or_default().insert(viewer.id);
                    self.engagement_log.push(EngagementEvent {
                        viewer: viewer.id,
                        content: c,
                        producer,
                        period: t,
                        kind: EngagementKind::Like,
                        value,
                    });
                    if thresholds.comments(value) {
                        received.entry(producer).or_default().1 += 1;
                        self.engagement_log.push(EngagementEvent {
                            viewer: viewer.id,
                            content: c,
                            producer,
                            period: t,
                            kind: EngagementKind::Comment,
                            value,
                        });
                    }
                }
            }
        }

        for producer in world.producers_sorted() {
            let (likes, comments) = received.get(&producer.id).copied().unwrap_or_default();
            let posts = rule.sample_posts(producer, likes, self.posting_draw(producer.id, self.period));
            let none = BTreeSet::new();
            let recipients = match world.scenario.reach {
                ContentReach::Followers => &producer.followers,
                ContentReach::RecentEngagers => engagers.get(&producer.id).unwrap_or(&none),
            };
            for _ in 0..posts {
                self.publish(producer.id, t + 1, recipients);
            }
            let act = self.activity.entry(producer.id).or_default();
            act.likes.push(likes);
            act.comments.push(comments);
            act.new_posts.push(posts);
        }
        if let Some(lifetime) = world.scenario.content_lifetime {
            self.expire(lifetime, t + 1);
        }
        self.period += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecosys::DiscountedObjective;

    fn two_period(v1: f64, v2: f64, beta: f64) -> (World, ProductionRule) {
        let inst = make_two_period_scenario(v1, v2, beta).unwrap();
        (World::new(inst.scenario).unwrap(), inst.rule)
    }

    fn two_period_broadcast(v1: f64, v2: f64, beta: f64) -> (World, ProductionRule) {
        let inst = make_two_period_scenario_with_reach(v1, v2, beta, ContentReach::Followers).unwrap();
        (World::new(inst.scenario).unwrap(), inst.rule)
    }

    fn show(state: &ScenarioState, picks: &[(u32, u32)]) -> Rankings {
        picks
            .iter()
            .map(|&(v, p)| {
                let c = state
                    .eligible(ViewerId(v))
                    .into_iter()
                    .find(|c| c.producer == ProducerId(p))
                    .unwrap()
                    .id;
                (ViewerId(v), vec![c])
            })
            .collect()
    }

    fn posts_by(state: &ScenarioState, viewer: u32, producer: u32) -> usize {
        state
            .eligible(ViewerId(viewer))
            .iter()
            .filter(|c| c.producer == ProducerId(producer) && c.created_at == 2)
            .count()
    }

    #[test]
    fn engagement_unlocks_responsive_producer() {
        let (world, rule) = two_period(0.8, 0.5, 0.9);
        let mut s = ScenarioState::initial(&world, 0).unwrap();
        let r = show(&s, &[(1, 2), (2, 1)]);
        s.step(&world, &r, &rule).unwrap();
        assert_eq!(s.activity[&ProducerId(2)].new_posts, vec![1]);
        assert_eq!(s.activity[&ProducerId(1)].new_posts, vec![0]);
        assert_eq!(posts_by(&s, 1, 2), 1);
        assert_eq!(posts_by(&s, 2, 2), 0);
        assert!(s.eligible(ViewerId(2)).is_empty());
    }

    #[test]
    fn broadcast_reach_delivers_to_every_follower() {
        let (world, rule) = two_period_broadcast(0.8, 0.5, 0.9);
        let mut s = ScenarioState::initial(&world, 0).unwrap();
        let r = show(&s, &[(1, 2), (2, 1)]);
        s.step(&world, &r, &rule).unwrap();
        assert_eq!(posts_by(&s, 1, 2), 1);
        assert_eq!(posts_by(&s, 2, 2), 1);
    }

    #[test]
    fn unconsumed_posts_expire_after_their_lifetime() {
        let (world, rule) = two_period_broadcast(0.8, 0.5, 0.9);
        let mut s = ScenarioState::initial(&world, 0).unwrap();
        s.step(&world, &Rankings::new(), &rule).unwrap();
        assert!(s.eligible(ViewerId(1)).is_empty());

        let mut scenario = world.scenario.clone();
        scenario.content_lifetime = None;
        let world = World::new(scenario).unwrap();
        let mut s = ScenarioState::initial(&world, 0).unwrap();
        let r = show(&s, &[(1, 1)]);
        s.step(&world, &r, &rule).unwrap();
        let left: Vec<u32> = s.eligible(ViewerId(1)).iter().map(|c| c.producer.0).collect();
        assert_eq!(left, vec![2]);
        assert_eq!(s.eligible(ViewerId(2)).len(), 2);
    }

    #[test]
    fn unengaged_producer_posts_nothing() {
        let (world, rule) = two_period(0.8, 0.5, 0.9);
        let mut s = ScenarioState::initial(&world, 0).unwrap();
        let r = show(&s, &[(1, 1), (2, 1)]);
        s.step(&world, &r, &rule).unwrap();
        assert_eq!(s.activity[&ProducerId(2)].new_posts, vec![0]);
        for v in [1, 2] {
            assert_eq!(posts_by(&s, v, 2), 0);
            assert_eq!(posts_by(&s, v, 1), 0);
        }
    }

    #[test]
    fn zero_responsiveness_smooth_mode_expects_base_rate() {
        let rule = ProductionRule::smooth(3.0, 10);
        let p = Producer {
            id: ProducerId(0),
            features: vec![],
            responsiveness: 0.0,
            base_rate: 1.7,
            followers: BTreeSet::new(),
        };
        for e in [0, 1, 5, 1000] {
            assert_eq!(rule.expected_posts(&p, e), 1.7);
        }
    }

    #[test]
    fn threshold_posts_round_up_exact_products_correctly() {
        let rule = ProductionRule::threshold(1, 10);
        let mut p = Producer {
            id: ProducerId(0),
            features: vec![],
            responsiveness: 0.7,
            base_rate: 0.0,
            followers: BTreeSet::new(),
        };
        assert_eq!(rule.expected_posts(&p, 1), 7.0);
        p.responsiveness = 0.71;
        assert_eq!(rule.expected_posts(&p, 1), 8.0);
        p.responsiveness = 1.0;
        assert_eq!(rule.expected_posts(&p, 1), 10.0);
        assert_eq!(rule.expected_posts(&p, 0), 0.0);
    }

    #[test]
    fn ineligible_content_is_rejected_without_mutation() {
        let (world, rule) = two_period(0.8, 0.5, 0.9);
        let mut s = ScenarioState::initial(&world, 0).unwrap();
        let mut r = Rankings::new();
        r.insert(ViewerId(1), vec![ContentId(999)]);
        let err = s.step(&world, &r, &rule).unwrap_err();
        assert!(matches!(err, Error::IneligibleContent { .. }));
        assert_eq!(s.period, 1);
        assert!(s.ledger.entries.is_empty());

        let c = s.eligible(ViewerId(1))[0].id;
        r.insert(ViewerId(1), vec![c, c]);
        assert!(s.step(&world, &r, &rule).is_err());
    }

    #[test]
    fn stepping_past_horizon_fails() {
        let (world, rule) = two_period(0.8, 0.5, 0.9);
        let mut s = ScenarioState::initial(&world, 0).unwrap();
        s.step(&world, &Rankings::new(), &rule).unwrap();
        s.step(&world, &Rankings::new(), &rule).unwrap();
        assert!(s.is_finished());
        assert!(matches!(
            s.step(&world, &Rankings::new(), &rule),
            Err(Error::PastHorizon { period: 3, horizon: 2 })
        ));
    }

    #[test]
    fn comments_follow_threshold() {
        let (mut world, rule) = two_period(0.8, 0.5, 0.9);
        world.scenario.thresholds.comment = 0.6;
        let world = World::new(world.scenario).unwrap();
        let mut s = ScenarioState::initial(&world, 0).unwrap();
        let r = show(&s, &[(1, 1), (2, 2)]);
        s.step(&world, &r, &rule).unwrap();
        let kinds: Vec<_> = s.engagement_log.iter().map(|e| (e.viewer.0, e.kind)).collect();
        assert_eq!(
            kinds,
            vec![
                (1, EngagementKind::Like),
                (1, EngagementKind::Comment),
                (2, EngagementKind::Like)
            ]
        );
        assert_eq!(s.activity[&ProducerId(1)].comments, vec![1]);
    }

    fn random_world(seed: u64, n_v: u32, n_p: u32, j: u32) -> World {
        let spec = PopulationSpec {
            n_producers: n_p,
            n_viewers: n_v,
            feature_dim: 2,
            slots_per_period: j,
            responsiveness_link: ResponsivenessLink {
                weights: vec![1.0, -0.5],
                noise: 0.5,
                intercept: 0.0,
            },
            follower_graph: FollowerGraph::RandomP { p: 0.5 },
            ..PopulationSpec::default()
        };
        let (producers, viewers) = synth_population(&spec, seed).unwrap();
        World::new(Scenario::new(viewers, producers, DiscountedObjective::new(0.9, 6))).unwrap()
    }

    fn play_all_eligible(world: &World, seed: u64, rule: &ProductionRule) -> ScenarioState {
        let mut s = ScenarioState::initial(world, seed).unwrap();
        while !s.is_finished() {
            let r: Rankings = world
                .viewer_ids()
                .map(|v| (v, s.eligible(v).iter().rev().map(|c| c.id).collect()))
                .collect();
            s.step(world, &r, rule).unwrap();
        }
        s
    }

    #[test]
    fn infinite_threshold_keeps_inventory_static() {
        let world = random_world(3, 8, 12, 2);
        let s = play_all_eligible(&world, 1, &ProductionRule::threshold(u32::MAX, 3));
        for act in s.activity.values() {
            assert!(act.new_posts.iter().all(|&n| n == 0));
        }
        assert_eq!(s.content.len(), 12);
    }

    #[test]
    fn consumption_limits_and_conservation() {
        let world = random_world(5, 10, 15, 3);
        let rule = ProductionRule::smooth(2.0, 4);
        let s = play_all_eligible(&world, 9, &rule);
        for ((v, _), slots) in &s.ledger.entries {
            assert!(slots.len() <= world.viewer(*v).unwrap().slots_per_period as usize);
        }
        let engaged = s
            .ledger
            .entries
            .values()
            .flatten()
            .filter(|&&x| world.scenario.thresholds.engages(x))
            .count();
        let likes = s
            .engagement_log
            .iter()
            .filter(|e| e.kind == EngagementKind::Like)
            .count();
        assert_eq!(likes, engaged);
        let mut pairs = BTreeSet::new();
        for e in s.engagement_log.iter().filter(|e| e.kind == EngagementKind::Like) {
            assert!(pairs.insert((e.viewer, e.content)), "consumed twice");
        }
        assert_eq!(s.consumed.len(), s.ledger.consumed_count());
    }

    #[test]
    fn same_seed_same_trajectory() {
        let world = random_world(11, 10, 15, 2);
        let rule = ProductionRule::smooth(2.0, 4);
        let a = play_all_eligible(&world, 42, &rule);
        let b = play_all_eligible(&world, 42, &rule);
        assert_eq!(a.engagement_log, b.engagement_log);
        assert_eq!(a.ledger, b.ledger);
        assert_eq!(a.activity, b.activity);
    }

    #[test]
    fn posting_draws_are_keyed_by_producer_and_period() {
        let world = random_world(11, 10, 15, 2);
        let s = ScenarioState::initial(&world, 42).unwrap();
        let d = s.posting_draw(ProducerId(3), 5);
        assert_eq!(d, ScenarioState::initial(&world, 42).unwrap().posting_draw(ProducerId(3), 5));
        assert_ne!(d, s.posting_draw(ProducerId(4), 5));
        assert_ne!(d, s.posting_draw(ProducerId(3), 6));
        assert_ne!(d, ScenarioState::initial(&world, 43).unwrap().posting_draw(ProducerId(3), 5));
        assert!((0.0..1.0).contains(&d));
    }
}
