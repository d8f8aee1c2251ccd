use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dynamics::DynamicsModel;
use crate::nets::{init, GcbfNet, PolicyNet};
use crate::world::SampleLabel;

fn tiny_config(model: ModelKind) -> TrainConfig {
    TrainConfig {
        total_steps: 3,
        segment_len: 2,
        episode_len: 8,
        n_agents: 3,
        side_length: 1.0,
        scale: 1.0 / 32.0,
        seed: 11,
        n_obstacles: 0,
        ..TrainConfig::for_model(model)
    }
}

/// Replace `h` by the constant `value` (output weights zeroed).
fn constant_h(h: &mut GcbfNet, value: f64) {
    let (w, b) = h.head_output_slots();
    let t = h.params.tensors_mut();
    t[w].data_mut().iter_mut().for_each(|v| *v = 0.0);
    t[b].data_mut()[0] = value;
}

fn randomize_policy_head(pi: &mut PolicyNet, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, b) = pi.head_output_slots();
    for slot in [w, b] {
        pi.params.tensors_mut()[slot].data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    }
}

fn car_sample(states: &[Vec<f64>], goals: &[Vec<f64>]) -> TrainSample {
    let model = DynamicsModel::new(ModelKind::SimpleCar);
    TrainSample::record(&model, states, goals, &[], None, 0.05, 1.0, DT).unwrap()
}

fn single_safe_sample() -> TrainSample {
    car_sample(&[vec![0.0, 0.0, 0.0, 0.0]], &[vec![1.0, 0.0]])
}

#[test]
fn defaults_follow_the_hyperparameter_table() {
    let c = TrainConfig::for_model(ModelKind::SimpleCar);
    assert_eq!((c.alpha, c.gamma, c.eta_safe, c.eta_unsafe), (1.0, 0.02, 1.0, 1.0));
    assert_eq!((c.eta_deriv, c.eta_ctrl), (0.5, 0.05));
    assert_eq!((c.lr_h, c.lr_pi), (3e-4, 1e-3));
    let d = TrainConfig::for_model(ModelKind::DubinsCar);
    assert_eq!((d.eta_deriv, d.eta_ctrl), (0.2, 0.05));
    for m in [ModelKind::SimpleDrone, ModelKind::CrazyFlie] {
        let c = TrainConfig::for_model(m);
        assert_eq!((c.eta_deriv, c.eta_ctrl), (0.5, 0.0001));
    }
}

#[test]
fn toml_overrides_defaults_and_rejects_unknown_keys() {
    let c = TrainConfig::from_toml("model = \"dubins_car\"\ntotal_steps = 12\nseed = 4\n").unwrap();
    assert_eq!(c.model, ModelKind::DubinsCar);
    assert_eq!((c.total_steps, c.seed), (12, 4));
    assert_eq!(c.eta_deriv, 0.2);
    assert!(matches!(TrainConfig::from_toml("model = \"simple_car\"\nlearning_rate = 1.0\n"), Err(Error::Config(_))));
    assert!(matches!(TrainConfig::from_toml("total_steps = 3\n"), Err(Error::Config(_))));
    assert!(matches!(TrainConfig::from_toml("model = \"simple_car\"\ngamma = -1.0\n"), Err(Error::Config(_))));
}

#[test]
fn validate_rejects_non_positive_rates() {
    let base = TrainConfig::for_model(ModelKind::SimpleCar);
    for bad in [
        TrainConfig { lr_h: 0.0, ..base.clone() },
        TrainConfig { lr_pi: -1.0, ..base.clone() },
        TrainConfig { alpha: 0.0, ..base.clone() },
        TrainConfig { gamma: 0.0, ..base.clone() },
        TrainConfig { scale: 2.0, ..base.clone() },
        TrainConfig { segment_len: 0, ..base.clone() },
    ] {
        assert!(bad.validate().is_err());
    }
    assert!(base.validate().is_ok());
}

#[test]
fn epsilon_schedule_is_linear() {
    assert_eq!(epsilon_at(0, 100), 1.0);
    assert_eq!(epsilon_at(50, 100), 0.5);
    assert_eq!(epsilon_at(100, 100), 0.0);
}

#[test]
fn epsilon_one_applies_nominal_and_zero_applies_policy() {
    let cfg = tiny_config(ModelKind::SimpleCar);
    let (_, mut pi) = init(cfg.model, 1, cfg.scale).unwrap();
    randomize_policy_head(&mut pi, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let mut env = RolloutEnv::new(&cfg, 3).unwrap();
    for s in collect_rollout(&pi, 1.0, &mut env, 5, &mut rng).unwrap() {
        assert_eq!(s.controls, s.u_nom);
    }
    let mut env = RolloutEnv::new(&cfg, 3).unwrap();
    for s in collect_rollout(&pi, 0.0, &mut env, 5, &mut rng).unwrap() {
        assert_eq!(s.controls, pi.eval(&s.graph, &s.u_nom));
        assert_ne!(s.controls, s.u_nom);
    }
}

#[test]
fn rollout_samples_are_consecutive() {
    let cfg = tiny_config(ModelKind::SimpleCar);
    let (_, pi) = init(cfg.model, 1, cfg.scale).unwrap();
    let mut env = RolloutEnv::new(&cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let samples = collect_rollout(&pi, 0.5, &mut env, 6, &mut rng).unwrap();
    let model = DynamicsModel::new(cfg.model);
    for s in &samples {
        assert_eq!(s.dt, cfg.dt);
        assert_eq!(s.labels.len(), cfg.n_agents);
        for i in 0..cfg.n_agents {
            let x = model.step(&s.graph.states()[i], &s.controls[i], s.dt).unwrap();
            assert_eq!(x, s.next.states()[i]);
        }
    }
    for w in samples.windows(2) {
        assert_eq!(w[0].next.states(), w[1].graph.states());
    }
}

#[test]
fn finite_difference_arithmetic() {
    assert!((finite_difference(0.10, 0.13, 0.03) - 1.0).abs() < 1e-12);
}

#[test]
fn hdot_of_identical_graphs_is_zero() {
    let (h, _) = init(ModelKind::SimpleCar, 0, 1.0 / 16.0).unwrap();
    let mut s = car_sample(&[vec![0.0, 0.0, 0.0, 0.0], vec![0.3, 0.0, 0.0, 0.0]], &[vec![0.0, 0.0], vec![0.3, 0.0]]);
    s.next = s.graph.clone();
    for i in 0..2 {
        assert_eq!(hdot_estimate(&h, &s, i), 0.0);
    }
}

#[test]
fn hdot_matches_linear_probe_slope() {
    let model = DynamicsModel::new(ModelKind::SimpleCar);
    let states = vec![vec![0.2, 0.1, 0.4, -0.3], vec![0.5, 0.6, -0.2, 0.1]];
    let s = TrainSample::record(&model, &states, &[vec![0.0; 2], vec![0.0; 2]], &[], Some(vec![vec![0.0; 2]; 2]), 0.05, 1.0, DT).unwrap();
    let (a, b) = (1.7, -0.6);
    let probe = |g: &GraphSnapshot, i: usize| a * g.states()[i][0] + b * g.states()[i][1] + 0.25;
    for (i, x) in states.iter().enumerate() {
        let slope = a * x[2] + b * x[3];
        assert!((hdot_estimate(&probe, &s, i) - slope).abs() < 1e-9);
    }
}

#[test]
fn classification_hinge_examples() {
    let cfg = TrainConfig { eta_deriv: 0.0, eta_ctrl: 0.0, ..TrainConfig::for_model(ModelKind::SimpleCar) };
    let (mut h, pi) = init(cfg.model, 0, 1.0 / 16.0).unwrap();
    let safe = single_safe_sample();
    assert_eq!(safe.labels, vec![SampleLabel::Safe]);

    constant_h(&mut h, 0.5);
    assert_eq!(loss(&h, &pi, &[safe.clone()], &cfg).0.safe, 0.0);
    constant_h(&mut h, -0.01);
    assert!((loss(&h, &pi, &[safe], &cfg).0.safe - 0.03).abs() < 1e-12);

    let unsafe_ = car_sample(&[vec![0.0, 0.0, 0.0, 0.0], vec![0.05, 0.0, 0.0, 0.0]], &[vec![0.0; 2], vec![0.05, 0.0]]);
    assert_eq!(unsafe_.labels, vec![SampleLabel::Unsafe; 2]);
    constant_h(&mut h, -0.5);
    assert_eq!(loss(&h, &pi, &[unsafe_], &cfg).0.unsafe_, 0.0);
}

#[test]
fn buffer_samples_skip_classification_terms() {
    let cfg = TrainConfig::for_model(ModelKind::SimpleCar);
    let (mut h, pi) = init(cfg.model, 0, 1.0 / 16.0).unwrap();
    let buffer = car_sample(&[vec![0.0, 0.0, 0.0, 0.0], vec![0.15, 0.0, 0.0, 0.0]], &[vec![0.0; 2], vec![0.15, 0.0]]);
    assert_eq!(buffer.labels, vec![SampleLabel::Buffer; 2]);
    for value in [-1.0, 0.0, 1.0] {
        constant_h(&mut h, value);
        let (t, _) = loss(&h, &pi, &[buffer.clone()], &cfg);
        assert_eq!((t.safe, t.unsafe_, t.n_safe, t.n_unsafe), (0.0, 0.0, 0, 0));
        assert_eq!(t.n_deriv, 2);
    }
    let off = TrainConfig { deriv_on_buffer: false, ..cfg };
    let (t, _) = loss(&h, &pi, &[buffer], &off);
    assert_eq!((t.deriv, t.n_deriv), (0.0, 0));
}

#[test]
fn derivative_gradient_reaches_the_neighbor_policy() {
    let cfg = TrainConfig { gamma: 1.0, eta_safe: 0.0, eta_unsafe: 0.0, eta_ctrl: 0.0, ..TrainConfig::for_model(ModelKind::SimpleCar) };
    let (h, mut pi) = init(cfg.model, 7, 1.0 / 16.0).unwrap();
    randomize_policy_head(&mut pi, 8);
    // agent 1 is close enough to sense agent 0, far enough to be safe
    let mut s = car_sample(&[vec![0.0, 0.0, 0.0, 0.0], vec![0.5, 0.0, 0.0, 0.0]], &[vec![-1.0, 0.0], vec![1.5, 0.0]]);
    assert_eq!(s.labels, vec![SampleLabel::Safe; 2]);
    s.labels[0] = SampleLabel::Unsafe;
    let (t, gh, gp) = loss_and_grads(&h, &pi, &[s], &cfg).unwrap();
    assert_eq!(t.n_deriv, 1);
    assert!(t.deriv > 0.0);
    let norm = |g: &[crate::autodiff::Tensor]| g.iter().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm(&gp) > 0.0);
    assert!(norm(&gh) > 0.0);
}

#[test]
fn zero_steps_leave_parameters_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { total_steps: 0, ..tiny_config(ModelKind::SimpleCar) };
    let out = train(&cfg, Some(dir.path())).unwrap();
    let (h, pi) = init(cfg.model, cfg.seed, cfg.scale).unwrap();
    assert_eq!(out.checkpoint.gcbf.params, h.params);
    assert_eq!(out.checkpoint.policy.params, pi.params);
    assert!(out.log.is_empty());
    let csv = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(csv.trim(), "step,loss_total,loss_safe,loss_unsafe,loss_deriv,loss_ctrl,epsilon");
}

#[test]
fn training_is_deterministic_and_logs_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { checkpoint_every: 2, total_steps: 5, ..tiny_config(ModelKind::SimpleCar) };
    let a = train(&cfg, Some(dir.path())).unwrap();
    let b = train(&cfg, None).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.checkpoint.gcbf.params, b.checkpoint.gcbf.params);
    assert_eq!(a.log.len(), 5);
    let names: Vec<_> = a.saved.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["ckpt_0000002.bin", "ckpt_0000004.bin", "ckpt_final.bin"]);
    let mut reader = csv::Reader::from_path(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(reader.records().count(), 5);
    assert_ne!(a.checkpoint.gcbf.params, init(cfg.model, cfg.seed, cfg.scale).unwrap().0.params);
}

#[test]
fn non_finite_loss_aborts_with_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(ModelKind::SimpleCar);
    let (mut h, pi) = init(cfg.model, 0, cfg.scale).unwrap();
    let (_, b) = h.head_output_slots();
    h.params.tensors_mut()[b].data_mut()[0] = f64::NAN;
    let err = train_from(&cfg, h, pi, Some(dir.path()), |_| {}).err().unwrap();
    assert!(matches!(err, Error::NonFiniteLoss { step: 0, .. }));
    assert!(dir.path().join("nan_dump.bin").exists());
    assert!(dir.path().join("nan_dump.txt").exists());
}

#[test]
fn gradients_match_finite_differences_on_a_micro_batch() {
    let cfg = TrainConfig { ..TrainConfig::for_model(ModelKind::SimpleCar) };
    let (h, mut pi) = init(cfg.model, 3, 1.0 / 32.0).unwrap();
    randomize_policy_head(&mut pi, 4);
    let states = vec![vec![0.0, 0.0, 0.1, 0.0], vec![0.3, 0.05, -0.1, 0.0], vec![0.12, 0.3, 0.0, -0.1]];
    let goals = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, -1.0]];
    let s = car_sample(&states, &goals);
    let batch = [s];
    let (_, gh, gp) = loss_and_grads(&h, &pi, &batch, &cfg).unwrap();
    let total = |h: &GcbfNet, pi: &PolicyNet| loss(h, pi, &batch, &cfg).0.total;
    let eps = 1e-6;
    let mut checked = 0;
    for (slot, g) in gh.iter().enumerate().step_by(3) {
        for k in [0, g.data().len() / 2] {
            let mut hp = h.clone();
            hp.params.tensors_mut()[slot].data_mut()[k] += eps;
            let mut hm = h.clone();
            hm.params.tensors_mut()[slot].data_mut()[k] -= eps;
            let fd = (total(&hp, &pi) - total(&hm, &pi)) / (2.0 * eps);
            let an = g.data()[k];
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "h slot {slot}[{k}]: fd {fd} vs {an}");
            checked += 1;
        }
    }
    for (slot, g) in gp.iter().enumerate().step_by(3) {
        let k = g.data().len() / 2;
        let mut pp = pi.clone();
        pp.params.tensors_mut()[slot].data_mut()[k] += eps;
        let mut pm = pi.clone();
        pm.params.tensors_mut()[slot].data_mut()[k] -= eps;
        let fd = (total(&h, &pp) - total(&h, &pm)) / (2.0 * eps);
        let an = g.data()[k];
        assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "pi slot {slot}[{k}]: fd {fd} vs {an}");
        checked += 1;
    }
    assert!(checked > 8);
}

fn arb_states(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-0.5f64..0.5, 4), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_loss_term_is_non_negative(states in arb_states(4), seed in 0u64..50) {
        let cfg = TrainConfig::for_model(ModelKind::SimpleCar);
        let (h, mut pi) = init(cfg.model, seed, 1.0 / 32.0).unwrap();
        randomize_policy_head(&mut pi, seed);
        let goals: Vec<Vec<f64>> = states.iter().map(|x| vec![x[1], x[0]]).collect();
        let s = car_sample(&states, &goals);
        let (t, _) = loss(&h, &pi, &[s], &cfg);
        for v in [t.safe, t.unsafe_, t.deriv, t.ctrl] {
            prop_assert!(v >= 0.0);
        }
        prop_assert!(t.total >= 0.0);
        prop_assert!((t.total - (t.safe + t.unsafe_ + t.deriv + t.ctrl)).abs() < 1e-12);
    }
}
