use proptest::prelude::*;

use super::*;
use crate::nets::init;
use crate::world::crossing_scenario;

fn frame(t: usize, states: Vec<Vec<f64>>, collisions: Vec<bool>) -> Frame {
    Frame { t, states, controls: None, modes: None, h_values: None, collisions, lidar: Vec::new() }
}

fn at(p: &[(f64, f64)]) -> Vec<Vec<f64>> {
    p.iter().map(|&(x, y)| vec![x, y, 0.0, 0.0]).collect()
}

fn untrained(model: ModelKind) -> Checkpoint {
    let (gcbf, policy) = init(model, 0, 1.0 / 32.0).unwrap();
    Checkpoint { model, scale: 1.0 / 32.0, step: 0, gcbf, policy }
}

#[test]
fn score_run_example() {
    let goals = at(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0)]);
    let start = at(&[(1.0, 1.0), (2.0, 1.0), (3.0, 1.0), (4.0, 1.0)]);
    let end = at(&[(1.0, 0.0), (2.0, 5.0), (3.0, 0.01), (4.0, 0.5)]);
    let mut frames: Vec<Frame> = (0..20).map(|t| frame(t, start.clone(), vec![false; 4])).collect();
    frames[10].collisions[1] = true;
    frames.push(frame(20, end, vec![false; 4]));
    let m = score_run(&Trajectory { model: ModelKind::SimpleCar, goals, frames }, GOAL_TOL);
    assert_eq!((m.safety_rate, m.reaching_rate, m.success_rate), (0.75, 0.5, 0.5));
    assert_eq!(m.safe, vec![true, false, true, true]);
    assert_eq!(m.reached, vec![true, false, true, false]);
    assert_eq!(m.steps, 20);
}

#[test]
fn everyone_colliding_at_start_is_unsafe() {
    let goals = at(&[(5.0, 5.0), (6.0, 6.0)]);
    let frames = vec![frame(0, at(&[(0.0, 0.0), (0.05, 0.0)]), vec![true, true])];
    assert_eq!(score_run(&Trajectory { model: ModelKind::SimpleCar, goals, frames }, GOAL_TOL).safety_rate, 0.0);

    let mut cfg = ScenarioConfig::new(ModelKind::SimpleCar, Suite::KeepDensity, 2, 0);
    cfg.horizon = 5;
    let sc = Scenario { config: cfg, states: at(&[(1.0, 1.0), (1.05, 1.0)]), goals: at(&[(3.0, 3.0), (4.0, 4.0)]), obstacles: vec![] };
    let m = run_episode(&sc, &Controller::Nominal, &EpisodeOptions::default()).unwrap().metrics;
    assert_eq!(m.safety_rate, 0.0);
}

#[test]
fn lone_agent_reaches_its_goal() {
    let mut cfg = ScenarioConfig::new(ModelKind::SimpleCar, Suite::KeepDensity, 1, 3);
    cfg.horizon = 2500;
    let sc = Scenario { config: cfg, states: vec![vec![1.0, 1.0, 0.0, 0.0]], goals: vec![vec![4.0, 2.0]], obstacles: vec![] };
    for c in [Controller::Nominal, Controller::qp(QpMode::Centralized), Controller::qp(QpMode::Decentralized)] {
        let m = run_episode(&sc, &c, &EpisodeOptions::default()).unwrap().metrics;
        assert_eq!((m.safety_rate, m.reaching_rate, m.success_rate), (1.0, 1.0, 1.0));
        assert!(m.steps < 2500, "early termination");
    }
}

#[test]
fn recorded_trajectory_rescores_to_the_same_rates() {
    let sc = crossing_scenario(ModelKind::SimpleCar, 6, 0.6, 0.05, 1);
    let opts = EpisodeOptions { horizon: Some(200), record: true, ..EpisodeOptions::default() };
    let ep = run_episode(&sc, &Controller::Nominal, &opts).unwrap();
    let traj = ep.trajectory.unwrap();
    assert_eq!(traj.frames.len(), ep.metrics.steps + 1);
    assert!(traj.frames.windows(2).all(|w| w[1].t == w[0].t + 1));
    assert!(traj.frames.last().unwrap().controls.is_none());
    let again = score_run(&traj, GOAL_TOL);
    assert_eq!((again.safe, again.reached), (ep.metrics.safe.clone(), ep.metrics.reached.clone()));
}

#[test]
fn nominal_crossing_collides() {
    let sc = crossing_scenario(ModelKind::SimpleCar, 16, 1.5, 0.02, 0);
    let opts = EpisodeOptions { horizon: Some(600), ..EpisodeOptions::default() };
    let m = run_episode(&sc, &Controller::Nominal, &opts).unwrap().metrics;
    assert!(m.safety_rate < 1.0);
}

#[test]
fn qp_baseline_rejects_other_models() {
    let sc = crossing_scenario(ModelKind::DubinsCar, 2, 0.5, 0.0, 0);
    assert!(matches!(run_episode(&sc, &Controller::qp(QpMode::Centralized), &EpisodeOptions::default()), Err(Error::Config(_))));
}

#[test]
fn checkpoint_model_must_match() {
    let ck = untrained(ModelKind::DubinsCar);
    let sc = crossing_scenario(ModelKind::SimpleCar, 2, 0.5, 0.0, 0);
    let err = run_episode(&sc, &Controller::gcbf(&ck, SafetyConfig::default()), &EpisodeOptions::default()).unwrap_err();
    assert!(matches!(err, Error::ModelMismatch { .. }));
}

#[test]
fn gcbf_episode_reports_modes_and_certificate_values() {
    let ck = untrained(ModelKind::SimpleCar);
    let sc = crossing_scenario(ModelKind::SimpleCar, 4, 0.4, 0.05, 2);
    let opts = EpisodeOptions { horizon: Some(20), record: true, ..EpisodeOptions::default() };
    let ep = run_episode(&sc, &Controller::gcbf(&ck, SafetyConfig::default()), &opts).unwrap();
    let traj = ep.trajectory.unwrap();
    for f in &traj.frames[..traj.frames.len() - 1] {
        assert_eq!(f.h_values.as_ref().unwrap().len(), 4);
        assert_eq!(f.modes.as_ref().unwrap().len(), 4);
        assert!(f.controls.as_ref().unwrap().iter().flatten().all(|v| v.abs() <= 10.0));
    }
    assert_eq!(ep.metrics.controller, ControllerKind::Gcbf);
}

#[test]
fn ever_reached_dominates_reached_at_termination() {
    let sc = crossing_scenario(ModelKind::SimpleCar, 8, 0.5, 0.05, 4);
    let base = EpisodeOptions { horizon: Some(300), ..EpisodeOptions::default() };
    let a = run_episode(&sc, &Controller::Nominal, &base).unwrap().metrics;
    let b = run_episode(&sc, &Controller::Nominal, &EpisodeOptions { reach: ReachMetric::EverReached, ..base }).unwrap().metrics;
    assert!(a.reached.iter().zip(&b.reached).all(|(x, y)| !*x || *y));
}

fn small_spec() -> SuiteSpec {
    SuiteSpec { instances: 3, horizon: Some(40), ..SuiteSpec::new(ModelKind::SimpleCar, Suite::KeepDensity, vec![4, 8]) }
}

#[test]
fn suites_are_reproducible() {
    let spec = small_spec();
    let strip = |v: Vec<MetricsRecord>| -> Vec<(usize, u64, f64, f64, f64)> {
        v.into_iter().map(|r| (r.n_agents, r.seed, r.safety_rate, r.reaching_rate, r.success_rate)).collect()
    };
    let a = strip(run_suite(&spec, &Controller::Nominal, None).unwrap());
    let b = strip(run_suite(&spec, &Controller::Nominal, None).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.len(), 6);
    assert_eq!(a.iter().map(|r| (r.0, r.1)).collect::<Vec<_>>(), vec![(4, 0), (4, 1), (4, 2), (8, 0), (8, 1), (8, 2)]);
}

#[test]
fn zero_instance_suite_is_empty() {
    let spec = SuiteSpec { instances: 0, ..small_spec() };
    assert!(run_suite(&spec, &Controller::Nominal, None).unwrap().is_empty());
    assert!(aggregate(&[]).is_empty());
}

#[test]
fn sweep_values_and_zero_iterations() {
    assert_eq!(SweepKind::SensingRadius.default_values(), vec![0.05, 0.1, 0.2, 0.5, 0.75, 1.0]);
    assert_eq!(SweepKind::Alpha.default_values(), vec![0.01, 0.1, 1.0, 10.0, 100.0]);
    let it = SweepKind::RefineIters.default_values();
    assert_eq!((it[0], *it.last().unwrap(), it.len()), (0.0, 90.0, 10));

    let ck = untrained(ModelKind::SimpleCar);
    let spec = SuiteSpec { instances: 2, horizon: Some(30), ..SuiteSpec::new(ModelKind::SimpleCar, Suite::KeepDensity, vec![4]) };
    let base = SweepBase { checkpoint: ck.clone(), spec: spec.clone(), safety: SafetyConfig::default(), train: None };
    let rows = ablation_sweep(SweepKind::RefineIters, &[0.0], &base).unwrap();
    let mut plain = SafetyConfig::default();
    plain.refine.max_iters = 0;
    let direct = aggregate(&run_suite(&spec, &Controller::gcbf(&ck, plain), None).unwrap());
    assert_eq!(rows.len(), 1);
    assert_eq!(
        (rows[0].safety_mean, rows[0].reaching_mean, rows[0].success_mean),
        (direct[0].safety_mean, direct[0].reaching_mean, direct[0].success_mean)
    );
    assert!(matches!(ablation_sweep(SweepKind::Alpha, &[1.0], &base), Err(Error::Config(_))));
    assert!(ablation_sweep(SweepKind::RefineIters, &[1.5], &base).is_err());
}

#[test]
fn csv_exports_have_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let recs = run_suite(&small_spec(), &Controller::Nominal, Some(7)).unwrap();
    let p = dir.path().join("results.csv");
    write_results_csv(&p, &recs).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "suite,controller,n_agents,instance_seed,policy_seed,safety_rate,reaching_rate,success_rate"
    );
    assert_eq!(text.lines().count(), 7);
    assert!(text.lines().nth(1).unwrap().starts_with("keep_density,nominal,4,0,7,"));

    let p = dir.path().join("plot.csv");
    write_plot_csv(&p, &aggregate(&recs)).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("suite,controller,n_agents,runs,safety_mean,safety_std,"));

    let p = dir.path().join("empty.csv");
    write_results_csv(&p, &[]).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 1);
}

#[test]
fn qp_bench_emits_one_row_per_mode() {
    let rows = qp_bench(&[4], 2, Some(30), 0).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].mode, rows[1].mode), (QpMode::Centralized, QpMode::Decentralized));
    assert!(rows.iter().all(|r| r.n_agents == 4 && r.mean_step_time_s > 0.0 && (0.0..=1.0).contains(&r.safety_rate)));
}

#[test]
fn controller_names_round_trip() {
    for k in ControllerKind::ALL {
        assert_eq!(ControllerKind::from_name(k.name()), Some(k));
    }
    for k in SweepKind::ALL {
        assert_eq!(SweepKind::from_name(k.name()), Some(k));
    }
}

fn record(safety: f64, reaching: f64, success: f64, n: usize) -> MetricsRecord {
    MetricsRecord { safety_rate: safety, reaching_rate: reaching, success_rate: success, n_agents: n, ..MetricsRecord::from_flags(vec![], vec![]) }
}

proptest! {
    #[test]
    fn rates_obey_their_algebra(flags in prop::collection::vec((any::<bool>(), any::<bool>()), 1..40)) {
        let (safe, reached): (Vec<bool>, Vec<bool>) = flags.iter().copied().unzip();
        let n = flags.len();
        let m = MetricsRecord::from_flags(safe.clone(), reached.clone());
        prop_assert!(m.success_rate <= m.safety_rate.min(m.reaching_rate));
        prop_assert_eq!(m.safety_rate, safe.iter().filter(|b| **b).count() as f64 / n as f64);
        prop_assert_eq!(m.reaching_rate, reached.iter().filter(|b| **b).count() as f64 / n as f64);
    }

    #[test]
    fn aggregate_mean_is_the_arithmetic_mean(rates in prop::collection::vec(0.0f64..=1.0, 1..30)) {
        let recs: Vec<MetricsRecord> = rates.iter().map(|&r| record(r, r, r, 8)).collect();
        let rows = aggregate(&recs);
        prop_assert_eq!(rows.len(), 1);
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        prop_assert!((rows[0].safety_mean - mean).abs() < 1e-12);
        prop_assert!(rows[0].safety_std >= 0.0);
        prop_assert_eq!(rows[0].runs, rates.len());
    }
}
