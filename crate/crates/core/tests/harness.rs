use std::collections::BTreeMap;

use longrun_core::ecosys::{EngagementEvent, EngagementKind};
use longrun_core::error::Error;
use longrun_core::gbdt::TrainParams;
use longrun_core::harness::*;
use longrun_core::ids::{ContentId, ProducerId, ViewerId};
use longrun_core::pipeline::{PipelineConfig, WorldConfig};
use longrun_core::policy::{run_to_horizon, RankingPolicy};
use longrun_core::sim::{ScenarioState, World};
use longrun_core::uplift::{fit_three_tree, UpliftModel, UpliftParams};

fn ids(n: u32) -> Vec<ProducerId> {
    (0..n).map(ProducerId).collect()
}

fn fractions(treat: f64, control: f64, eval_treat: f64, eval_control: f64, holdout: f64) -> Fractions {
    Fractions { treat, control, eval_treat, eval_control, holdout }
}

#[test]
fn assignment_counts_use_largest_remainder() {
    let a = assign(&ids(10_000), &fractions(0.02, 0.02, 0.01, 0.01, 0.05), 1).unwrap();
    let sizes = a.group_sizes();
    assert_eq!(sizes[&Label::Treatment], 200);
    assert_eq!(sizes[&Label::Control], 200);
    assert_eq!(sizes[&Label::EvaluationTreatment], 100);
    assert_eq!(sizes[&Label::EvaluationControl], 100);
    assert_eq!(sizes[&Label::Holdout], 500);
    assert_eq!(sizes[&Label::Untouched], 8_900);

    // Thirds of 10: 3.33 each, one extra seat goes to the first largest remainder.
    let third = 1.0 / 3.0;
    let counts = fractions(third, third, third, 0.0, 0.0).counts(10);
    assert_eq!(counts.iter().sum::<usize>(), 10);
    assert_eq!(counts, [4, 3, 3, 0, 0]);
}

#[test]
fn assignment_is_seeded_and_exhaustive() {
    let f = fractions(0.2, 0.2, 0.1, 0.1, 0.2);
    let a = assign(&ids(500), &f, 9).unwrap();
    assert_eq!(a, assign(&ids(500), &f, 9).unwrap());
    assert_ne!(a.labels, assign(&ids(500), &f, 10).unwrap().labels);
    assert_eq!(a.labels.len(), 500);
    // Input order does not matter.
    let mut rev = ids(500);
    rev.reverse();
    assert_eq!(a.labels, assign(&rev, &f, 9).unwrap().labels);
}

#[test]
fn assignment_rejects_bad_fractions() {
    assert!(matches!(
        assign(&ids(10), &fractions(0.6, 0.6, 0.0, 0.0, 0.0), 0),
        Err(Error::FractionSum(_))
    ));
    assert!(assign(&ids(10), &fractions(-0.1, 0.5, 0.0, 0.0, 0.0), 0).is_err());
    assert!(assign(&[ProducerId(1), ProducerId(1)], &fractions(0.5, 0.5, 0.0, 0.0, 0.0), 0).is_err());
}

fn experiment_fractions() -> Fractions {
    fractions(0.3, 0.3, 0.1, 0.1, 0.0)
}

fn boost(world: &World, cfg: &WorldConfig, mult: f64, seed: u64) -> BoostExperiment {
    let a = assign(&world.producer_ids().collect::<Vec<_>>(), &experiment_fractions(), seed).unwrap();
    run_boost_experiment(world, &cfg.production, &a, mult, 14, OutcomeMetric::Posts, seed).unwrap()
}

#[test]
fn boosting_responsive_producers_raises_every_outcome() {
    let cfg = WorldConfig::responsive();
    let world = cfg.build(3).unwrap();
    let exp = boost(&world, &cfg, 2.0, 3);
    let l = &exp.report.lifts;
    for lift in [l.likes, l.comments, l.posts] {
        assert!(lift.rel > 0.0 && !lift.covers_zero(), "{lift:?}");
    }
    assert_eq!(exp.report.feature_snapshot, feature_snapshot(&world));
    assert_eq!(exp.dataset.evaluation_rows().count(), 600);
}

#[test]
fn no_responsiveness_no_posting_lift() {
    let cfg = WorldConfig::unresponsive();
    let world = cfg.build(3).unwrap();
    let exp = boost(&world, &cfg, 2.0, 3);
    assert!(exp.report.lifts.posts.covers_zero(), "{:?}", exp.report.lifts.posts);
    // Likes still respond: ranking changes who gets consumed.
    assert!(exp.report.lifts.likes.rel > 0.0);
}

#[test]
fn vanishing_boost_matches_unboosted_run() {
    let cfg = WorldConfig::responsive();
    let world = cfg.build(4).unwrap();
    let exp = boost(&world, &cfg, 1.0 + 1e-12, 4);
    let mut plain = ScenarioState::with_horizon(&world, 4, 14).unwrap();
    run_to_horizon(&world, &mut plain, &RankingPolicy::Myopic, &cfg.production).unwrap();
    assert_eq!(exp.state.engagement_log, plain.engagement_log);
    assert_eq!(exp.state.activity, plain.activity);
    // What remains is the between-group difference any random split shows.
    let l = &exp.report.lifts;
    assert!(l.posts.covers_zero() && l.likes.covers_zero(), "{l:?}");
}

#[test]
fn empty_boost_set_is_an_error() {
    let cfg = WorldConfig::responsive();
    let world = cfg.build(0).unwrap();
    let a = assign(&world.producer_ids().collect::<Vec<_>>(), &fractions(0.0, 0.5, 0.0, 0.1, 0.0), 0).unwrap();
    let r = run_boost_experiment(&world, &cfg.production, &a, 2.0, 3, OutcomeMetric::Posts, 0);
    assert!(matches!(r, Err(Error::EmptyBoostSet)));
}

fn three_producer_assignment() -> Assignment {
    let mut labels = BTreeMap::new();
    labels.insert(ProducerId(1), Label::Untouched);
    labels.insert(ProducerId(2), Label::Untouched);
    labels.insert(ProducerId(3), Label::Holdout);
    Assignment { labels, fractions: fractions(0.0, 0.0, 0.0, 0.0, 1.0 / 3.0), seed: 0 }
}

#[test]
fn holdout_gets_the_mean_score() {
    let scores = BTreeMap::from([(ProducerId(1), 0.2), (ProducerId(2), 0.8)]);
    let t = deploy(&scores, &three_producer_assignment(), DefaultRule::MeanOfScored, 3, 7).unwrap();
    assert_eq!(t.scores[&ProducerId(3)], 0.5);
    assert_eq!(t.default_score, 0.5);
    assert_eq!((t.model_version, t.trained_at), (3, 7));

    // A holdout producer's model score is discarded.
    let mut with_p3 = scores.clone();
    with_p3.insert(ProducerId(3), 100.0);
    let t2 = deploy(&with_p3, &three_producer_assignment(), DefaultRule::MeanOfScored, 3, 7).unwrap();
    assert_eq!(t, t2);
}

#[test]
fn deploy_without_holdout_keeps_scores() {
    let mut a = three_producer_assignment();
    a.labels.insert(ProducerId(3), Label::Untouched);
    let scores = BTreeMap::from([(ProducerId(1), 0.2), (ProducerId(2), 0.8), (ProducerId(3), 0.5)]);
    let t = deploy(&scores, &a, DefaultRule::MeanOfScored, 1, 0).unwrap();
    assert_eq!(t.scores, scores);
    assert_eq!(t.default_score, 0.5);
}

#[test]
fn deploy_errors() {
    let a = three_producer_assignment();
    assert!(matches!(
        deploy(&BTreeMap::new(), &a, DefaultRule::MeanOfScored, 1, 0),
        Err(Error::EmptyScores)
    ));
    let partial = BTreeMap::from([(ProducerId(1), 0.2)]);
    assert!(matches!(
        deploy(&partial, &a, DefaultRule::MeanOfScored, 1, 0),
        Err(Error::MissingScore(ProducerId(2)))
    ));
}

#[test]
fn constant_scores_rank_like_myopic() {
    let cfg = WorldConfig::responsive();
    let world = cfg.build(1).unwrap();
    let ids: Vec<ProducerId> = world.producer_ids().collect();
    let a = assign(&ids, &fractions(0.0, 0.0, 0.0, 0.0, 0.2), 1).unwrap();
    let scores = ids.iter().map(|p| (*p, 0.7)).collect();
    let t = deploy(&scores, &a, DefaultRule::MeanOfScored, 1, 0).unwrap();
    assert_eq!(t.scores[&a.holdout().into_iter().next().unwrap()], 0.7);
    let augmented = RankingPolicy::ScoreAugmented(t.policy(0.5).unwrap());
    let mut s1 = ScenarioState::with_horizon(&world, 1, 5).unwrap();
    let mut s2 = s1.clone();
    while !s1.is_finished() {
        let r1 = augmented.rankings(&world, &s1).unwrap();
        let r2 = RankingPolicy::Myopic.rankings(&world, &s2).unwrap();
        assert_eq!(r1, r2);
        s1.step(&world, &r1, &cfg.production).unwrap();
        s2.step(&world, &r2, &cfg.production).unwrap();
    }
}

fn like(producer: u32, n: u64) -> EngagementEvent {
    EngagementEvent {
        period: 1,
        viewer: ViewerId(0),
        producer: ProducerId(producer),
        content: ContentId(n),
        kind: EngagementKind::Like,
        value: 1.0,
    }
}

#[test]
fn goal_metric_weights_events_by_score() {
    let table = ScoreTable {
        scores: BTreeMap::from([(ProducerId(1), 0.2), (ProducerId(2), 0.8)]),
        default_score: 0.5,
        model_version: 1,
        trained_at: 0,
    };
    let log: Vec<_> = (0..10).map(|i| like(1, i)).chain((0..5).map(|i| like(2, 100 + i))).collect();
    let g = goal_metric(&log, &table);
    assert!((g.value - 6.0).abs() < 1e-12);
    assert_eq!((g.events, g.missing), (15, 0));

    assert_eq!(goal_metric(&[], &table).value, 0.0);

    let with_unknown = [like(1, 0), like(9, 1)];
    let g = goal_metric(&with_unknown, &table);
    assert_eq!(g.missing, 1);
    assert!((g.value - 0.7).abs() < 1e-12);

    let uniform = ScoreTable {
        scores: BTreeMap::from([(ProducerId(1), 0.3), (ProducerId(2), 0.3)]),
        default_score: 0.3,
        ..table
    };
    assert!((goal_metric(&log, &uniform).value - 0.3 * 15.0).abs() < 1e-12);
}

fn stable_params() -> UpliftParams {
    UpliftParams::shared(TrainParams {
        rounds: 60,
        max_leaves: 2,
        min_samples_leaf: 150,
        learning_rate: 0.1,
        ..TrainParams::default()
    })
}

struct Deployed {
    world: World,
    cfg: WorldConfig,
    model: UpliftModel,
    assignment: Assignment,
}

/// Boost experiment plus initial model on the responsive world.
fn deployed(seed: u64, holdout: f64) -> Deployed {
    let cfg = WorldConfig::responsive();
    let world = cfg.build(seed).unwrap();
    let ids: Vec<ProducerId> = world.producer_ids().collect();
    let rest = (1.0 - holdout) / 2.0;
    let assignment = assign(&ids, &fractions(rest * 0.8, rest * 0.8, rest * 0.2, rest * 0.2, holdout), seed).unwrap();
    let exp = run_boost_experiment(&world, &cfg.production, &assignment, 2.0, 14, OutcomeMetric::Posts, seed).unwrap();
    let model = fit_three_tree(&exp.dataset, &stable_params()).unwrap();
    Deployed { world, cfg, model, assignment }
}

#[test]
fn stationary_retraining_keeps_rank_order() {
    let d = deployed(5, 0.5);
    let config = RetrainConfig {
        horizon: 21,
        params: stable_params(),
        score_weight: 0.3,
        sub_boost_multiplier: 3.0,
        window_cycles: 3,
        ..RetrainConfig::default()
    };
    let out = retrain_loop(&d.world, &d.cfg.production, &d.model, &d.assignment, &config, 5).unwrap();
    assert_eq!(out.deprecated_at, None);
    assert_eq!(out.tables.len(), 4, "initial table plus three refits");
    for (i, rho) in out.stability.iter().enumerate().skip(1) {
        assert!(*rho >= 0.9, "refit {} vs {}: rho {rho}", i + 1, i + 2);
    }
    assert_eq!(out.audit.violations, 0);
    assert!(out.audit.checks > 0);
    for (i, t) in out.tables.iter().enumerate() {
        assert_eq!(t.model_version, i as u32 + 1);
        for p in d.assignment.holdout() {
            assert_eq!(t.scores[&p].to_bits(), t.default_score.to_bits());
        }
    }
}

#[test]
fn responsiveness_collapse_retires_the_model() {
    let d = deployed(6, 0.3);
    let config = RetrainConfig {
        horizon: 70,
        params: stable_params(),
        score_weight: 0.3,
        drift: Some(Drift { at_period: 8, responsiveness_factor: 0.0 }),
        ..RetrainConfig::default()
    };
    let out = retrain_loop(&d.world, &d.cfg.production, &d.model, &d.assignment, &config, 6).unwrap();
    let at = out.deprecated_at.expect("model should be retired");
    assert!(at >= 2);
    // Every cycle that counted toward retirement reported no lift.
    let last_two = &out.lifts[at as usize - 2..at as usize];
    assert!(last_two.iter().all(|l| !(l.lift > 0.0)), "{last_two:?}");
    // After retirement the holdout keeps being measured, but nothing is refit.
    assert_eq!(out.lifts.len(), 10);
    assert!(out.tables.len() < 10);
    assert_eq!(out.audit.violations, 0);
}

#[test]
fn retraining_needs_a_holdout() {
    let d = deployed(7, 0.0);
    let r = retrain_loop(&d.world, &d.cfg.production, &d.model, &d.assignment, &RetrainConfig::default(), 7);
    assert!(matches!(r, Err(Error::EmptyHoldout)));
}

#[test]
fn lift_series_csv() {
    let lifts = [HoldoutLift { cycle: 1, lift: 0.5, ci95: 0.25 }];
    let mut buf = Vec::new();
    write_lift_series(&lifts, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "cycle,lift,ci95\n1,0.5,0.25\n");
}

#[test]
fn pipeline_defaults_validate() {
    PipelineConfig::default().validate().unwrap();
}
