//! Exhaustive long-run optimum for tiny worlds, and the check of whether a
//! deviation from one ranking sequence pays for itself in later periods.

use serde::Serialize;

use crate::ecosys::{discounted_utility, DiscountedObjective, UtilityLedger};
use crate::error::{invalid, Error, Result};
use crate::ids::ContentId;
use crate::sim::{ProductionMode, ProductionRule, Rankings, ScenarioState, World};

use super::{FixedSequence, RankingPolicy};

/// Largest number of candidate sequences the oracle agrees to enumerate.
pub const EXHAUSTIVE_LIMIT: f64 = 1e7;

/// Totals closer than this are treated as equal.
pub const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub best_sequence: FixedSequence,
    pub best_total: f64,
    /// Complete trajectories actually simulated.
    pub evaluated: u64,
    /// A-priori upper bound on the number of trajectories.
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremCheck {
    pub period: u32,
    /// Short-run cost at `period` of following the second sequence.
    pub lhs: f64,
    /// Discounted long-run gain after `period` of following the second sequence.
    pub rhs: f64,
    pub holds: bool,
}

fn binomial(n: u64, k: u64) -> f64 {
    let k = k.min(n.saturating_sub(k));
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Upper bound on the number of complete trajectories reachable from `state`.
///
/// A viewer's inventory next period is at most what survives this period
/// after consuming `J` items plus the most its followed producers can publish.
pub fn search_bound(world: &World, rule: &ProductionRule, state: &ScenarioState) -> f64 {
    let cap = f64::from(rule.max_posts);
    let mut bound = 1.0f64;
    for viewer in world.viewers_sorted() {
        let j = u64::from(viewer.slots_per_period);
        let new_per_period: u64 = viewer
            .affinity
            .keys()
            .filter_map(|p| world.producer(*p))
            .filter(|p| p.followers.contains(&viewer.id))
            .map(|p| (p.responsiveness * cap).ceil().min(cap) as u64)
            .sum();
        let carried = |inv: u64| match world.scenario.content_lifetime {
            Some(1) => 0,
            _ => inv.saturating_sub(j),
        };
        let mut inv = state.eligible(viewer.id).len() as u64;
        for _ in state.period..=state.horizon {
            bound *= binomial(inv, inv.min(j));
            inv = carried(inv) + new_per_period;
        }
    }
    bound
}

fn combinations(items: &[ContentId], k: usize) -> Vec<Vec<ContentId>> {
    let n = items.len();
    if k > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            break;
        };
        idx[pos] += 1;
        for i in pos + 1..k {
            idx[i] = idx[i - 1] + 1;
        }
    }
    out
}

/// Every consumed set each viewer could be given this period, in lexicographic order.
fn period_options(world: &World, state: &ScenarioState) -> Vec<Vec<Vec<ContentId>>> {
    world
        .viewers_sorted()
        .map(|v| {
            let ids: Vec<ContentId> = state.eligible(v.id).iter().map(|c| c.id).collect();
            let k = ids.len().min(v.slots_per_period as usize);
            combinations(&ids, k)
        })
        .collect()
}

/// Walks the cartesian product of per-viewer options, most significant
/// viewer first.
fn for_each_joint_choice(
    options: &[Vec<Vec<ContentId>>],
    mut f: impl FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    if options.iter().any(Vec::is_empty) {
        return Ok(());
    }
    let mut idx = vec![0usize; options.len()];
    loop {
        f(&idx)?;
        let Some(pos) = (0..idx.len()).rev().find(|&i| idx[i] + 1 < options[i].len()) else {
            return Ok(());
        };
        idx[pos] += 1;
        for i in idx.iter_mut().skip(pos + 1) {
            *i = 0;
        }
    }
}

struct Search<'a> {
    world: &'a World,
    obj: &'a DiscountedObjective,
    rule: &'a ProductionRule,
    best: Option<(f64, FixedSequence)>,
    evaluated: u64,
}

impl Search<'_> {
    fn dfs(&mut self, state: &ScenarioState, path: &mut FixedSequence) -> Result<()> {
        if state.is_finished() {
            let total = discounted_utility(&state.ledger, self.obj)?.total;
            self.evaluated += 1;
            if self.best.as_ref().is_none_or(|(b, _)| total > b + TIE_EPS) {
                self.best = Some((total, path.clone()));
            }
            return Ok(());
        }
        let t = state.period;
        let viewers: Vec<_> = self.world.viewer_ids().collect();
        let options = period_options(self.world, state);
        for_each_joint_choice(&options, |idx| {
            let mut rankings = Rankings::new();
            for (i, &v) in viewers.iter().enumerate() {
                let pick = options[i][idx[i]].clone();
                path.rankings.insert((v, t), pick.clone());
                rankings.insert(v, pick);
            }
            let mut next = state.clone();
            next.step(self.world, &rankings, self.rule)?;
            self.dfs(&next, path)
        })?;
        for v in viewers {
            path.rankings.remove(&(v, t));
        }
        Ok(())
    }
}

fn require_threshold(rule: &ProductionRule) -> Result<()> {
    if rule.mode == ProductionMode::Threshold {
        Ok(())
    } else {
        Err(Error::OracleNeedsThresholdMode)
    }
}

/// Best completion of `prefix` from `state`; ties go to the lexicographically
/// smallest sequence.
pub fn best_continuation(
    world: &World,
    obj: &DiscountedObjective,
    rule: &ProductionRule,
    state: &ScenarioState,
    prefix: FixedSequence,
) -> Result<OracleResult> {
    require_threshold(rule)?;
    let bound = search_bound(world, rule, state);
    if bound > EXHAUSTIVE_LIMIT {
        return Err(Error::InstanceTooLarge {
            bound,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let mut search = Search {
        world,
        obj,
        rule,
        best: None,
        evaluated: 0,
    };
    let mut path = prefix;
    search.dfs(state, &mut path)?;
    let (best_total, best_sequence) = search
        .best
        .expect("a finished or steppable state always yields one trajectory");
    Ok(OracleResult {
        best_sequence,
        best_total,
        evaluated: search.evaluated,
        bound,
    })
}

fn initial_state(world: &World, obj: &DiscountedObjective) -> Result<ScenarioState> {
    let mut state = ScenarioState::initial(world, 0)?;
    state.horizon = obj.finite_horizon()?;
    Ok(state)
}

/// The discounted-value maximizing ranking sequence over the whole horizon.
pub fn exhaustive_optimal(
    world: &World,
    obj: &DiscountedObjective,
    rule: &ProductionRule,
) -> Result<OracleResult> {
    let state = initial_state(world, obj)?;
    best_continuation(world, obj, rule, &state, FixedSequence::default())
}

fn play(
    world: &World,
    obj: &DiscountedObjective,
    rule: &ProductionRule,
    seq: &FixedSequence,
    until: Option<u32>,
) -> Result<ScenarioState> {
    let mut state = initial_state(world, obj)?;
    let policy = RankingPolicy::FixedSequence(seq.clone());
    while !state.is_finished() && until.is_none_or(|u| state.period < u) {
        let r = policy.rankings(world, &state)?;
        state.step(world, &r, rule)?;
    }
    Ok(state)
}

/// Compares following `r_prime` against `r_dblprime`, which must agree
/// before `period` and may differ for any viewers from `period` on.
pub fn theorem_condition_holds(
    world: &World,
    obj: &DiscountedObjective,
    rule: &ProductionRule,
    r_prime: &FixedSequence,
    r_dblprime: &FixedSequence,
    period: u32,
) -> Result<TheoremCheck> {
    let horizon = obj.finite_horizon()?;
    if period == 0 || period >= horizon {
        return Err(invalid("period", format!("need 1 <= t < {horizon}, got {period}")));
    }
    if let Some(d) = r_prime.first_divergence(r_dblprime) {
        if d < period {
            return Err(Error::EarlyDivergence {
                diverged_at: d,
                period,
            });
        }
    }
    let a = play(world, obj, rule, r_prime, None)?;
    let b = play(world, obj, rule, r_dblprime, None)?;
    let lhs = a.ledger.period_total(period) - b.ledger.period_total(period);
    let rhs = future_gain(&b.ledger, &a.ledger, obj.beta, period, horizon);
    Ok(TheoremCheck {
        period,
        lhs,
        rhs,
        holds: lhs < rhs,
    })
}

fn future_gain(better: &UtilityLedger, base: &UtilityLedger, beta: f64, t: u32, horizon: u32) -> f64 {
    (t + 1..=horizon)
        .map(|k| beta.powi((k - t) as i32) * (better.period_total(k) - base.period_total(k)))
        .sum()
}

/// All sequences that follow `base` before `period`, make a different joint
/// choice at `period`, and continue optimally afterwards.
pub fn enumerate_deviations(
    world: &World,
    obj: &DiscountedObjective,
    rule: &ProductionRule,
    base: &FixedSequence,
    period: u32,
) -> Result<Vec<FixedSequence>> {
    require_threshold(rule)?;
    let state = play(world, obj, rule, base, Some(period))?;
    if state.period != period {
        return Err(invalid("period", "base sequence ends before the deviation period"));
    }
    let prefix = FixedSequence {
        rankings: base
            .rankings
            .iter()
            .filter(|((_, t), _)| *t < period)
            .map(|(k, v)| (*k, v.clone()))
            .collect(),
    };
    let viewers: Vec<_> = world.viewer_ids().collect();
    let options = period_options(world, &state);
    let mut out = Vec::new();
    for_each_joint_choice(&options, |idx| {
        let mut rankings = Rankings::new();
        let mut seq = prefix.clone();
        for (i, &v) in viewers.iter().enumerate() {
            let pick = options[i][idx[i]].clone();
            seq.rankings.insert((v, period), pick.clone());
            rankings.insert(v, pick);
        }
        let same = viewers
            .iter()
            .all(|&v| base.get(v, period) == seq.get(v, period));
        if same {
            return Ok(());
        }
        let mut next = state.clone();
        next.step(world, &rankings, rule)?;
        let best = best_continuation(world, obj, rule, &next, seq)?;
        out.push(best.best_sequence);
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{ProducerId, ViewerId};
    use crate::policy::consumed_sequence;
    use crate::ecosys::ContentReach;
    use crate::sim::{make_two_period_scenario, make_two_period_scenario_with_reach};

    fn instance(v1: f64, v2: f64, beta: f64) -> (World, DiscountedObjective, ProductionRule) {
        let inst = make_two_period_scenario(v1, v2, beta).unwrap();
        let obj = inst.objective();
        (World::new(inst.scenario).unwrap(), obj, inst.rule)
    }

    fn broadcast(v1: f64, v2: f64, beta: f64) -> (World, DiscountedObjective, ProductionRule) {
        let inst = make_two_period_scenario_with_reach(v1, v2, beta, ContentReach::Followers).unwrap();
        let obj = inst.objective();
        (World::new(inst.scenario).unwrap(), obj, inst.rule)
    }

    /// Producer shown to each viewer at t = 1 under a sequence.
    fn first_period_producers(world: &World, seq: &FixedSequence) -> Vec<u32> {
        let s = ScenarioState::initial(world, 0).unwrap();
        [ViewerId(1), ViewerId(2)]
            .iter()
            .map(|&v| s.content(seq.get(v, 1).unwrap()[0]).unwrap().producer.0)
            .collect()
    }

    #[test]
    fn combinations_are_lexicographic() {
        let ids: Vec<ContentId> = (0..4).map(ContentId).collect();
        let c = combinations(&ids, 2);
        assert_eq!(c.len(), 6);
        assert_eq!(c[0], vec![ContentId(0), ContentId(1)]);
        assert_eq!(c[5], vec![ContentId(2), ContentId(3)]);
        assert_eq!(combinations(&ids, 0), vec![Vec::<ContentId>::new()]);
        assert!(combinations(&ids, 5).is_empty());
    }

    #[test]
    fn engaged_viewers_each_unlock_their_own_second_post() {
        // (1 + 0.9) * 0.5 = 0.95 > 0.8 for each viewer independently.
        let (world, obj, rule) = instance(0.8, 0.5, 0.9);
        let best = exhaustive_optimal(&world, &obj, &rule).unwrap();
        assert!((best.best_total - 1.9).abs() < 1e-12);
        assert_eq!(first_period_producers(&world, &best.best_sequence), vec![2, 2]);
    }

    #[test]
    fn broadcast_optimum_unlocks_producer_two_once() {
        let (world, obj, rule) = broadcast(0.8, 0.5, 0.9);
        let best = exhaustive_optimal(&world, &obj, &rule).unwrap();
        assert!((best.best_total - 2.20).abs() < 1e-12);
        let mut shown = first_period_producers(&world, &best.best_sequence);
        shown.sort();
        assert_eq!(shown, vec![1, 2]);

        let (_, myopic) = consumed_sequence(&world, &RankingPolicy::Myopic, &rule, 0).unwrap();
        let myopic_total = discounted_utility(&myopic.ledger, &obj).unwrap().total;
        assert!((myopic_total - 1.6).abs() < 1e-12);
    }

    #[test]
    fn broadcast_externality_moves_the_break_even_point() {
        // One engagement feeds both viewers: worth it once (1 + 2 beta) v2 > v1.
        let (world, obj, rule) = broadcast(0.99, 0.5, 0.9);
        let best = exhaustive_optimal(&world, &obj, &rule).unwrap();
        assert!((best.best_total - (0.5 + 0.99 + 0.9 * 1.0)).abs() < 1e-12);
        let (world, obj, rule) = broadcast(0.99, 0.3, 0.9);
        let best = exhaustive_optimal(&world, &obj, &rule).unwrap();
        assert!((best.best_total - 1.98).abs() < 1e-12);
    }

    #[test]
    fn oracle_matches_myopic_when_unlock_is_not_worth_it() {
        let (world, obj, rule) = instance(0.99, 0.5, 0.9);
        let best = exhaustive_optimal(&world, &obj, &rule).unwrap();
        assert!((best.best_total - 1.98).abs() < 1e-12);
        assert_eq!(first_period_producers(&world, &best.best_sequence), vec![1, 1]);
        let (myopic, _) = consumed_sequence(&world, &RankingPolicy::Myopic, &rule, 0).unwrap();
        assert_eq!(best.best_sequence, myopic);
    }

    #[test]
    fn boundary_tie_returns_lexicographically_smallest() {
        let (world, obj, rule) = instance(0.9, 0.5, 0.8);
        let best = exhaustive_optimal(&world, &obj, &rule).unwrap();
        let (myopic, state) = consumed_sequence(&world, &RankingPolicy::Myopic, &rule, 0).unwrap();
        let myopic_total = discounted_utility(&state.ledger, &obj).unwrap().total;
        assert!((best.best_total - myopic_total).abs() <= 1e-12);
        assert_eq!(best.best_sequence, myopic);
        assert!(best.best_sequence <= myopic);
    }

    #[test]
    fn theorem_condition_on_two_period_world() {
        let (world, obj, rule) = instance(0.8, 0.5, 0.9);
        let (myopic, _) = consumed_sequence(&world, &RankingPolicy::Myopic, &rule, 0).unwrap();
        let s = ScenarioState::initial(&world, 0).unwrap();
        let p2_post = s
            .eligible(ViewerId(1))
            .into_iter()
            .find(|c| c.producer == ProducerId(2))
            .unwrap()
            .id;
        let dev = enumerate_deviations(&world, &obj, &rule, &myopic, 1).unwrap();
        let alt = dev
            .into_iter()
            .find(|d| d.get(ViewerId(1), 1) == Some(&[p2_post][..]) && d.get(ViewerId(2), 1) != Some(&[p2_post][..]))
            .unwrap();
        let check = theorem_condition_holds(&world, &obj, &rule, &myopic, &alt, 1).unwrap();
        assert!((check.lhs - 0.3).abs() < 1e-12);
        assert!((check.rhs - 0.45).abs() < 1e-12);
        assert!(check.holds);

        let same = theorem_condition_holds(&world, &obj, &rule, &myopic, &myopic, 1).unwrap();
        assert_eq!((same.lhs, same.rhs, same.holds), (0.0, 0.0, false));
    }

    #[test]
    fn theorem_condition_fails_when_unlock_too_costly() {
        let (world, obj, rule) = instance(0.99, 0.5, 0.9);
        let (myopic, _) = consumed_sequence(&world, &RankingPolicy::Myopic, &rule, 0).unwrap();
        let devs = enumerate_deviations(&world, &obj, &rule, &myopic, 1).unwrap();
        assert_eq!(devs.len(), 3);
        let single = devs
            .iter()
            .map(|d| theorem_condition_holds(&world, &obj, &rule, &myopic, d, 1).unwrap())
            .find(|c| (c.lhs - 0.49).abs() < 1e-12)
            .unwrap();
        assert!((single.rhs - 0.45).abs() < 1e-12);
        assert!(!single.holds);
    }

    #[test]
    fn early_divergence_and_bad_period_are_errors() {
        let (world, obj, rule) = instance(0.8, 0.5, 0.9);
        let (myopic, _) = consumed_sequence(&world, &RankingPolicy::Myopic, &rule, 0).unwrap();
        let devs = enumerate_deviations(&world, &obj, &rule, &myopic, 1).unwrap();
        assert!(matches!(
            theorem_condition_holds(&world, &obj, &rule, &myopic, &devs[0], 2),
            Err(Error::InvalidParameter { .. })
        ));
        let mut late = myopic.clone();
        late.rankings.insert((ViewerId(1), 2), vec![]);
        let mut early = devs[0].clone();
        early.rankings.insert((ViewerId(1), 2), vec![]);
        let three = DiscountedObjective::new(0.9, 3);
        assert!(matches!(
            theorem_condition_holds(&world, &three, &rule, &late, &early, 2),
            Err(Error::EarlyDivergence { diverged_at: 1, period: 2 })
        ));
    }

    #[test]
    fn smooth_mode_and_oversized_instances_are_refused() {
        let (world, obj, _) = instance(0.8, 0.5, 0.9);
        assert!(matches!(
            exhaustive_optimal(&world, &obj, &ProductionRule::smooth(1.0, 1)),
            Err(Error::OracleNeedsThresholdMode)
        ));
        let mut inst = make_two_period_scenario(0.8, 0.5, 0.9).unwrap();
        for p in &mut inst.scenario.producers {
            p.responsiveness = 1.0;
        }
        let wide = World::new(inst.scenario).unwrap();
        let long = DiscountedObjective::new(0.9, 40);
        let err = exhaustive_optimal(&wide, &long, &ProductionRule::threshold(1, 1)).unwrap_err();
        match err {
            Error::InstanceTooLarge { bound, .. } => assert!(bound > EXHAUSTIVE_LIMIT),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bound_covers_two_period_enumeration() {
        let (world, obj, rule) = instance(0.8, 0.5, 0.9);
        let best = exhaustive_optimal(&world, &obj, &rule).unwrap();
        assert!(best.evaluated as f64 <= best.bound);
        assert!(best.evaluated >= 4);
    }
}
