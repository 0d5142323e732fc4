use std::collections::{BTreeMap, BTreeSet};

use crate::ecosys::{ContentReach, DiscountedObjective, Producer, Scenario, Viewer};
use crate::error::{invalid, Result};
use crate::ids::{ProducerId, ViewerId};

use super::ProductionRule;

/// The two-viewer, two-producer, two-period world.
#[derive(Debug, Clone)]
pub struct TwoPeriodInstance {
    pub scenario: Scenario,
    pub rule: ProductionRule,
}

impl TwoPeriodInstance {
    pub fn objective(&self) -> DiscountedObjective {
        self.scenario.objective
    }
}

/// Two viewers each see one item per period. Producer 1 (worth `v1` to both
/// viewers) never posts again; producer 2 (worth `v2`) posts once more iff at
/// least one viewer engaged with it in period 1.
///
/// Producer 2's second post reaches only the viewers who engaged with it, so
/// showing it to a viewer pays off exactly when `(1 + beta) * v2 > v1`. Use
/// [`make_two_period_scenario_with_reach`] with [`ContentReach::Followers`]
/// to let the other viewer benefit too.
pub fn make_two_period_scenario(v1: f64, v2: f64, beta: f64) -> Result<TwoPeriodInstance> {
    make_two_period_scenario_with_reach(v1, v2, beta, ContentReach::RecentEngagers)
}

pub fn make_two_period_scenario_with_reach(
    v1: f64,
    v2: f64,
    beta: f64,
    reach: ContentReach,
) -> Result<TwoPeriodInstance> {
    if !(0.0 < v2 && v2 < v1 && v1 <= 1.0) {
        return Err(invalid("v1/v2", format!("need 0 < v2 < v1 <= 1, got v1={v1}, v2={v2}")));
    }
    if !(0.0 < beta && beta < 1.0) {
        return Err(invalid("beta", format!("need 0 < beta < 1, got {beta}")));
    }
    let p1 = ProducerId(1);
    let p2 = ProducerId(2);
    let viewers = [ViewerId(1), ViewerId(2)];
    let viewers: Vec<Viewer> = viewers
        .iter()
        .map(|&id| Viewer {
            id,
            slots_per_period: 1,
            affinity: BTreeMap::from([(p1, v1), (p2, v2)]),
        })
        .collect();
    let followers: BTreeSet<ViewerId> = viewers.iter().map(|v| v.id).collect();
    let producers = vec![
        Producer {
            id: p1,
            features: vec![0.0],
            responsiveness: 0.0,
            base_rate: 0.0,
            followers: followers.clone(),
        },
        Producer {
            id: p2,
            features: vec![1.0],
            responsiveness: 1.0,
            base_rate: 0.0,
            followers,
        },
    ];
    Ok(TwoPeriodInstance {
        scenario: Scenario {
            reach,
            ..Scenario::new(viewers, producers, DiscountedObjective::new(beta, 2))
        },
        rule: ProductionRule::threshold(1, 1),
    })
}
