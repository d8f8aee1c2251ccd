//! Closed-loop episodes, metrics, experiment suites and ablation sweeps.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsModel, ModelKind};
use crate::error::{Error, Result};
use crate::learner::{train, TrainConfig};
use crate::nets::{Checkpoint, GcbfNet, PolicyNet};
use crate::qpbase::{filter, write_timing_csv, FilterConfig, QpMode, TimingRow};
use crate::safectl::{select_control, Mode, SafetyConfig};
use crate::world::{
    all_reached, collision_flags, generate_scenario, observe, raycast, reached, step_world, Obstacle, Scenario, ScenarioConfig,
    Suite, N_RAYS,
};

/// Distance at which an agent counts as having reached its goal.
pub const GOAL_TOL: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Gcbf,
    Nominal,
    QpCentralized,
    QpDecentralized,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] =
        [ControllerKind::Gcbf, ControllerKind::Nominal, ControllerKind::QpCentralized, ControllerKind::QpDecentralized];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Gcbf => "gcbf",
            ControllerKind::Nominal => "nominal",
            ControllerKind::QpCentralized => "qp_centralized",
            ControllerKind::QpDecentralized => "qp_decentralized",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// A closed-loop controller.
#[derive(Clone, Copy, Debug)]
pub enum Controller<'a> {
    /// Learned certificate as detector, learned policy as fallback.
    Gcbf { h: &'a GcbfNet, pi: &'a PolicyNet, safety: SafetyConfig },
    Nominal,
    Qp { mode: QpMode, filter: FilterConfig },
}

impl<'a> Controller<'a> {
    pub fn gcbf(ckpt: &'a Checkpoint, safety: SafetyConfig) -> Self {
        Controller::Gcbf { h: &ckpt.gcbf, pi: &ckpt.policy, safety }
    }

    pub fn qp(mode: QpMode) -> Self {
        Controller::Qp { mode, filter: FilterConfig::default() }
    }

    pub fn kind(&self) -> ControllerKind {
        match self {
            Controller::Gcbf { .. } => ControllerKind::Gcbf,
            Controller::Nominal => ControllerKind::Nominal,
            Controller::Qp { mode: QpMode::Centralized, .. } => ControllerKind::QpCentralized,
            Controller::Qp { mode: QpMode::Decentralized, .. } => ControllerKind::QpDecentralized,
        }
    }
}

/// How an applied control was chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    Nominal,
    Learned,
    Refined,
    /// Modified by a QP safety filter.
    Filtered,
}

impl StepMode {
    pub fn name(self) -> &'static str {
        match self {
            StepMode::Nominal => "nominal",
            StepMode::Learned => "learned",
            StepMode::Refined => "refined",
            StepMode::Filtered => "filtered",
        }
    }
}

impl From<Mode> for StepMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Nominal => StepMode::Nominal,
            Mode::Learned => StepMode::Learned,
            Mode::Refined => StepMode::Refined,
        }
    }
}

/// When an agent counts as having reached its goal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReachMetric {
    /// Within tolerance at the last timestep or at early termination.
    #[default]
    AtTermination,
    /// Within tolerance at any timestep.
    EverReached,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeOptions {
    /// Overrides the scenario horizon.
    pub horizon: Option<usize>,
    pub goal_tol: f64,
    /// Stop once every agent is at its goal.
    pub early_stop: bool,
    pub reach: ReachMetric,
    /// Keep every frame for export.
    pub record: bool,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        EpisodeOptions { horizon: None, goal_tol: GOAL_TOL, early_stop: true, reach: ReachMetric::AtTermination, record: false }
    }
}

/// One timestep of a closed-loop run. The last frame of a trajectory holds
/// the terminal state and no controls.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub t: usize,
    pub states: Vec<Vec<f64>>,
    pub controls: Option<Vec<Vec<f64>>>,
    pub modes: Option<Vec<StepMode>>,
    pub h_values: Option<Vec<f64>>,
    /// Collision flag of each agent in `states`.
    pub collisions: Vec<bool>,
    /// Valid LiDAR hit points of each agent, relative to the agent. Empty
    /// when the scenario has no obstacles.
    pub lidar: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub model: ModelKind,
    pub goals: Vec<Vec<f64>>,
    pub frames: Vec<Frame>,
}

/// Summary of one evaluated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub suite: String,
    pub controller: ControllerKind,
    pub n_agents: usize,
    pub seed: u64,
    pub policy_seed: Option<u64>,
    pub safety_rate: f64,
    pub reaching_rate: f64,
    pub success_rate: f64,
    /// Per agent: never in collision.
    pub safe: Vec<bool>,
    /// Per agent: at the goal under the chosen reach metric.
    pub reached: Vec<bool>,
    pub steps: usize,
    pub mean_step_time_s: f64,
    pub max_step_time_s: f64,
    pub wall_time_s: f64,
}

fn rate(flags: impl Iterator<Item = bool>, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    flags.filter(|b| *b).count() as f64 / n as f64
}

impl MetricsRecord {
    /// Rates from per-agent flags; context fields are left blank.
    pub fn from_flags(safe: Vec<bool>, reached: Vec<bool>) -> Self {
        let n = safe.len();
        MetricsRecord {
            suite: String::new(),
            controller: ControllerKind::Nominal,
            n_agents: n,
            seed: 0,
            policy_seed: None,
            safety_rate: rate(safe.iter().copied(), n),
            reaching_rate: rate(reached.iter().copied(), n),
            success_rate: rate(safe.iter().zip(&reached).map(|(s, r)| *s && *r), n),
            safe,
            reached,
            steps: 0,
            mean_step_time_s: 0.0,
            max_step_time_s: 0.0,
            wall_time_s: 0.0,
        }
    }
}

/// Safe iff never flagged; reaching iff within `goal_tol` of the goal in the
/// last frame.
pub fn score_run(traj: &Trajectory, goal_tol: f64) -> MetricsRecord {
    let model = DynamicsModel::new(traj.model);
    let n = traj.goals.len();
    let mut safe = vec![true; n];
    for f in &traj.frames {
        for (s, c) in safe.iter_mut().zip(&f.collisions) {
            *s &= !c;
        }
    }
    let reached = match traj.frames.last() {
        Some(f) => f.states.iter().zip(&traj.goals).map(|(x, g)| reached(&model, x, g, goal_tol)).collect(),
        None => vec![false; n],
    };
    let mut rec = MetricsRecord::from_flags(safe, reached);
    rec.steps = traj.frames.len().saturating_sub(1);
    rec
}

/// Result of [`run_episode`].
#[derive(Clone, Debug)]
pub struct Episode {
    pub metrics: MetricsRecord,
    /// Present when [`EpisodeOptions::record`] is set.
    pub trajectory: Option<Trajectory>,
}

struct Decision {
    controls: Vec<Vec<f64>>,
    modes: Vec<StepMode>,
    h_values: Option<Vec<f64>>,
}

fn decide(
    controller: &Controller,
    model: &DynamicsModel,
    sc: &ScenarioConfig,
    states: &[Vec<f64>],
    obstacles: &[Obstacle],
    u_nom: &[Vec<f64>],
) -> Decision {
    match controller {
        Controller::Nominal => Decision {
            controls: u_nom.iter().map(|u| model.clamp_control(u)).collect(),
            modes: vec![StepMode::Nominal; u_nom.len()],
            h_values: None,
        },
        Controller::Gcbf { h, pi, safety } => {
            let graph = observe(model, states, obstacles, sc.sensing_radius, N_RAYS);
            let cfg = SafetyConfig { dt: sc.dt, ..*safety };
            let ds = select_control(h, pi, &graph, u_nom, &cfg);
            Decision {
                controls: ds.iter().map(|d| model.clamp_control(&d.control)).collect(),
                modes: ds.iter().map(|d| d.mode.into()).collect(),
                h_values: Some(ds.iter().map(|d| d.h_value).collect()),
            }
        }
        Controller::Qp { mode, filter: fc } => {
            let fc = FilterConfig { r: sc.r, control_bound: model.control_bound, speed_bound: model.speed_bound, ..*fc };
            let out = filter(*mode, states, u_nom, &fc);
            let clamped: Vec<Vec<f64>> = u_nom.iter().map(|u| model.clamp_control(u)).collect();
            let modes = out
                .controls
                .iter()
                .zip(&clamped)
                .map(|(u, n)| if u == n { StepMode::Nominal } else { StepMode::Filtered })
                .collect();
            Decision { controls: out.controls, modes, h_values: None }
        }
    }
}

fn lidar_points(model: &DynamicsModel, states: &[Vec<f64>], obstacles: &[Obstacle], radius: f64) -> Vec<Vec<Vec<f64>>> {
    if obstacles.is_empty() {
        return Vec::new();
    }
    states
        .iter()
        .map(|x| raycast(model.position(x), obstacles, N_RAYS, radius).valid_hits().map(|h| h.rel.clone()).collect())
        .collect()
}

/// Run one scenario in closed loop.
pub fn run_episode(scenario: &Scenario, controller: &Controller, opts: &EpisodeOptions) -> Result<Episode> {
    let sc = &scenario.config;
    if let Controller::Qp { .. } = controller {
        if sc.model != ModelKind::SimpleCar || !scenario.obstacles.is_empty() {
            return Err(Error::Config("the QP baseline supports obstacle-free simple_car scenarios only".into()));
        }
    }
    if let Controller::Gcbf { h, .. } = controller {
        if h.model != sc.model {
            return Err(Error::ModelMismatch { expected: sc.model, got: h.model });
        }
    }
    let model = DynamicsModel::new(sc.model);
    let horizon = opts.horizon.unwrap_or(sc.horizon);
    let n = scenario.states.len();
    let wall = Instant::now();

    let mut states = scenario.states.clone();
    let mut obstacles = scenario.obstacles.clone();
    let mut collisions = collision_flags(&model, &states, &obstacles, sc.r);
    let mut safe: Vec<bool> = collisions.iter().map(|c| !c).collect();
    let mut ever: Vec<bool> = states.iter().zip(&scenario.goals).map(|(x, g)| reached(&model, x, g, opts.goal_tol)).collect();
    let mut frames = Vec::new();
    let (mut step_total, mut step_max, mut steps) = (0.0f64, 0.0f64, 0usize);

    for t in 0..horizon {
        if opts.early_stop && all_reached(&model, &states, &scenario.goals, opts.goal_tol) {
            break;
        }
        let t0 = Instant::now();
        let u_nom: Vec<Vec<f64>> = states.iter().zip(&scenario.goals).map(|(x, g)| model.nominal_control(x, g)).collect();
        let d = decide(controller, &model, sc, &states, &obstacles, &u_nom);
        let dt_step = t0.elapsed().as_secs_f64();
        step_total += dt_step;
        step_max = step_max.max(dt_step);
        steps += 1;

        let next = step_world(&model, &states, &d.controls, &obstacles, sc.dt, sc.r)?;
        if opts.record {
            let lidar = lidar_points(&model, &states, &obstacles, sc.sensing_radius);
            frames.push(Frame {
                t,
                lidar,
                states: std::mem::take(&mut states),
                controls: Some(d.controls),
                modes: Some(d.modes),
                h_values: d.h_values,
                collisions,
            });
        }
        states = next.states;
        obstacles = next.obstacles;
        collisions = next.collisions;
        for i in 0..n {
            safe[i] &= !collisions[i];
            ever[i] |= reached(&model, &states[i], &scenario.goals[i], opts.goal_tol);
        }
    }

    let reached_flags = match opts.reach {
        ReachMetric::AtTermination => {
            states.iter().zip(&scenario.goals).map(|(x, g)| reached(&model, x, g, opts.goal_tol)).collect()
        }
        ReachMetric::EverReached => ever,
    };
    let trajectory = opts.record.then(|| {
        let lidar = lidar_points(&model, &states, &obstacles, sc.sensing_radius);
        frames.push(Frame { t: steps, states: states.clone(), controls: None, modes: None, h_values: None, collisions, lidar });
        Trajectory { model: sc.model, goals: scenario.goals.clone(), frames }
    });
    let mut metrics = MetricsRecord::from_flags(safe, reached_flags);
    metrics.suite = sc.suite.name().to_string();
    metrics.controller = controller.kind();
    metrics.seed = sc.seed;
    metrics.steps = steps;
    metrics.mean_step_time_s = if steps > 0 { step_total / steps as f64 } else { 0.0 };
    metrics.max_step_time_s = step_max;
    metrics.wall_time_s = wall.elapsed().as_secs_f64();
    Ok(Episode { metrics, trajectory })
}

/// Which instances a suite runs.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteSpec {
    pub model: ModelKind,
    pub suite: Suite,
    pub n_agents: Vec<usize>,
    pub instances: usize,
    /// Instance `k` uses seed `base_seed + k`.
    pub base_seed: u64,
    pub horizon: Option<usize>,
    pub sensing_radius: Option<f64>,
    pub reach: ReachMetric,
}

impl SuiteSpec {
    pub fn new(model: ModelKind, suite: Suite, n_agents: Vec<usize>) -> Self {
        SuiteSpec { model, suite, n_agents, instances: 16, base_seed: 0, horizon: None, sensing_radius: None, reach: ReachMetric::AtTermination }
    }

    pub fn scenario_config(&self, n: usize, k: usize) -> ScenarioConfig {
        let mut c = ScenarioConfig::new(self.model, self.suite, n, self.base_seed + k as u64);
        if let Some(r) = self.sensing_radius {
            c.sensing_radius = r;
        }
        c
    }
}

/// One record per `(n, instance)`, in that order. Instances run in parallel.
pub fn run_suite(spec: &SuiteSpec, controller: &Controller, policy_seed: Option<u64>) -> Result<Vec<MetricsRecord>> {
    let opts = EpisodeOptions { horizon: spec.horizon, reach: spec.reach, ..EpisodeOptions::default() };
    let jobs: Vec<(usize, usize)> = spec.n_agents.iter().flat_map(|&n| (0..spec.instances).map(move |k| (n, k))).collect();
    jobs.par_iter()
        .map(|&(n, k)| {
            let sc = generate_scenario(&spec.scenario_config(n, k))?;
            let mut m = run_episode(&sc, controller, &opts)?.metrics;
            m.policy_seed = policy_seed;
            Ok(m)
        })
        .collect()
}

/// Mean and population standard deviation per `(suite, controller, n_agents)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub suite: String,
    pub controller: ControllerKind,
    pub n_agents: usize,
    pub runs: usize,
    pub safety_mean: f64,
    pub safety_std: f64,
    pub reaching_mean: f64,
    pub reaching_std: f64,
    pub success_mean: f64,
    pub success_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// Groups in order of first appearance.
pub fn aggregate(records: &[MetricsRecord]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, ControllerKind, usize)> = Vec::new();
    for r in records {
        let k = (r.suite.clone(), r.controller, r.n_agents);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(suite, controller, n_agents)| {
            let group: Vec<&MetricsRecord> =
                records.iter().filter(|r| r.suite == suite && r.controller == controller && r.n_agents == n_agents).collect();
            let col = |f: fn(&MetricsRecord) -> f64| mean_std(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (safety_mean, safety_std) = col(|r| r.safety_rate);
            let (reaching_mean, reaching_std) = col(|r| r.reaching_rate);
            let (success_mean, success_std) = col(|r| r.success_rate);
            AggregateRow {
                suite,
                controller,
                n_agents,
                runs: group.len(),
                safety_mean,
                safety_std,
                reaching_mean,
                reaching_std,
                success_mean,
                success_std,
            }
        })
        .collect()
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(csv::WriterBuilder::new().has_headers(false).from_path(path)?)
}

const RESULT_COLUMNS: [&str; 8] =
    ["suite", "controller", "n_agents", "instance_seed", "policy_seed", "safety_rate", "reaching_rate", "success_rate"];

/// One line per run.
pub fn write_results_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(RESULT_COLUMNS)?;
    for r in records {
        w.write_record([
            r.suite.clone(),
            r.controller.name().to_string(),
            r.n_agents.to_string(),
            r.seed.to_string(),
            r.policy_seed.map(|s| s.to_string()).unwrap_or_default(),
            r.safety_rate.to_string(),
            r.reaching_rate.to_string(),
            r.success_rate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const PLOT_COLUMNS: [&str; 10] = [
    "suite",
    "controller",
    "n_agents",
    "runs",
    "safety_mean",
    "safety_std",
    "reaching_mean",
    "reaching_std",
    "success_mean",
    "success_std",
];

/// Mean and std per curve point.
pub fn write_plot_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(PLOT_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.suite.clone(),
            r.controller.name().to_string(),
            r.n_agents.to_string(),
            r.runs.to_string(),
            r.safety_mean.to_string(),
            r.safety_std.to_string(),
            r.reaching_mean.to_string(),
            r.reaching_std.to_string(),
            r.success_mean.to_string(),
            r.success_std.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    SensingRadius,
    RefineIters,
    RefineLr,
    Alpha,
}

impl SweepKind {
    pub const ALL: [SweepKind; 4] = [SweepKind::SensingRadius, SweepKind::RefineIters, SweepKind::RefineLr, SweepKind::Alpha];

    pub fn name(self) -> &'static str {
        match self {
            SweepKind::SensingRadius => "sensing_radius",
            SweepKind::RefineIters => "refine_iters",
            SweepKind::RefineLr => "refine_lr",
            SweepKind::Alpha => "alpha",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepKind::SensingRadius => vec![0.05, 0.1, 0.2, 0.5, 0.75, 1.0],
            SweepKind::RefineIters => (0..=9).map(|k| 10.0 * k as f64).collect(),
            SweepKind::RefineLr => vec![0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0],
            SweepKind::Alpha => vec![0.01, 0.1, 1.0, 10.0, 100.0],
        }
    }
}

/// Fixed part of an ablation sweep.
#[derive(Clone, Debug)]
pub struct SweepBase {
    pub checkpoint: Checkpoint,
    pub spec: SuiteSpec,
    pub safety: SafetyConfig,
    /// Needed by the `alpha` sweep, which trains one checkpoint per value.
    pub train: Option<TrainConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: SweepKind,
    pub value: f64,
    pub n_agents: usize,
    pub runs: usize,
    pub safety_mean: f64,
    pub reaching_mean: f64,
    pub success_mean: f64,
}

/// One suite run per value.
pub fn ablation_sweep(kind: SweepKind, values: &[f64], base: &SweepBase) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &v in values {
        let mut spec = base.spec.clone();
        let mut safety = base.safety;
        let mut trained = None;
        match kind {
            SweepKind::SensingRadius => spec.sensing_radius = Some(v),
            SweepKind::RefineIters => {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Config(format!("refinement iterations must be a non-negative integer, got {v}")));
                }
                safety.refine.max_iters = v as usize;
            }
            SweepKind::RefineLr => safety.refine.step_size = v,
            SweepKind::Alpha => {
                let cfg = base.train.as_ref().ok_or_else(|| Error::Config("the alpha sweep needs a training config".into()))?;
                let cfg = TrainConfig { alpha: v, ..cfg.clone() };
                trained = Some(train(&cfg, None)?.checkpoint);
                safety.alpha = v;
            }
        }
        safety.refine.validate()?;
        let ckpt = trained.as_ref().unwrap_or(&base.checkpoint);
        let records = run_suite(&spec, &Controller::gcbf(ckpt, safety), None)?;
        for row in aggregate(&records) {
            rows.push(SweepRow {
                kind,
                value: v,
                n_agents: row.n_agents,
                runs: row.runs,
                safety_mean: row.safety_mean,
                reaching_mean: row.reaching_mean,
                success_mean: row.success_mean,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["kind", "value", "n_agents", "runs", "safety_mean", "reaching_mean", "success_mean"])?;
    for r in rows {
        w.write_record([
            r.kind.name().to_string(),
            r.value.to_string(),
            r.n_agents.to_string(),
            r.runs.to_string(),
            r.safety_mean.to_string(),
            r.reaching_mean.to_string(),
            r.success_mean.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Centralized and decentralized handcrafted QP on the increase-density
/// workspace. Timing is the controller's mean wall time per step.
pub fn qp_bench(n_agents: &[usize], instances: usize, horizon: Option<usize>, base_seed: u64) -> Result<Vec<TimingRow>> {
    let opts = EpisodeOptions { horizon, ..EpisodeOptions::default() };
    let mut rows = Vec::new();
    for &n in n_agents {
        for mode in [QpMode::Centralized, QpMode::Decentralized] {
            let spec = SuiteSpec { instances, base_seed, horizon, ..SuiteSpec::new(ModelKind::SimpleCar, Suite::IncreaseDensity, vec![n]) };
            // Sequential so that step timings are not shared with other episodes.
            let records = (0..instances)
                .map(|k| Ok(run_episode(&generate_scenario(&spec.scenario_config(n, k))?, &Controller::qp(mode), &opts)?.metrics))
                .collect::<Result<Vec<_>>>()?;
            let steps: usize = records.iter().map(|r| r.steps).sum();
            let time: f64 = records.iter().map(|r| r.mean_step_time_s * r.steps as f64).sum();
            rows.push(TimingRow {
                n_agents: n,
                mode,
                mean_step_time_s: if steps > 0 { time / steps as f64 } else { 0.0 },
                safety_rate: mean_std(&records.iter().map(|r| r.safety_rate).collect::<Vec<_>>()).0,
            });
        }
    }
    Ok(rows)
}

pub fn write_qp_bench_csv(path: &Path, rows: &[TimingRow]) -> Result<()> {
    write_timing_csv(path, rows)
}

#[cfg(test)]
mod tests;
