use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gcbf_core::evalx::{
    ablation_sweep, aggregate, qp_bench, run_episode, run_suite, write_plot_csv, write_qp_bench_csv, write_results_csv,
    write_sweep_csv, Controller, ControllerKind, EpisodeOptions, ReachMetric, StepMode, SuiteSpec, SweepBase, SweepKind,
};
use gcbf_core::learner::{train, TrainConfig};
use gcbf_core::nets::{load_checkpoint, Checkpoint};
use gcbf_core::qpbase::QpMode;
use gcbf_core::safectl::SafetyConfig;
use gcbf_core::world::{generate_scenario, ScenarioConfig, Suite};
use gcbf_core::ModelKind;

#[derive(Parser, Debug)]
#[command(name = "gcbf", version, about = "Train and evaluate graph control barrier functions for multi-agent collision avoidance")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Network width scale.
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a certificate and policy from a TOML config.
    Train(TrainArgs),
    /// Run one scenario and write a line-delimited trajectory.
    Simulate(SimulateArgs),
    /// Run a test suite and write per-instance and aggregated CSVs.
    Evaluate(EvaluateArgs),
    /// Ablation sweep over one parameter.
    Sweep(SweepArgs),
    /// Time the handcrafted QP filters.
    QpBench(QpBenchArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `total_steps`.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct SuiteArgs {
    /// simple_car, dubins_car, simple_drone or crazy_flie; defaults to the checkpoint's model.
    #[arg(long)]
    model: Option<String>,
    /// increase_density, keep_density, keep_distance or obstacles.
    #[arg(long, default_value = "increase_density")]
    suite: String,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
    agents: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    instances: usize,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    sensing_radius: Option<f64>,
    /// Count an agent as reaching if it was ever at its goal.
    #[arg(long)]
    ever_reached: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Scenario TOML; otherwise one instance of `--suite` is generated.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value = "increase_density")]
    suite: String,
    #[arg(long, default_value_t = 8)]
    agents: usize,
    #[arg(long)]
    horizon: Option<usize>,
    /// gcbf, nominal, qp_centralized or qp_decentralized.
    #[arg(long)]
    controller: Option<String>,
    /// Apply the nominal controller only.
    #[arg(long)]
    nominal_only: bool,
    /// Trajectory file; defaults to `<out-dir>/trajectory.jsonl`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated controller names; defaults to gcbf and nominal with a checkpoint, nominal otherwise.
    #[arg(long, value_delimiter = ',')]
    controllers: Vec<String>,
    #[command(flatten)]
    suite: SuiteArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// sensing_radius, refine_iters, refine_lr or alpha.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated values; defaults to the standard grid of the sweep.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    /// Training config for the alpha sweep.
    #[arg(long)]
    train_config: Option<PathBuf>,
    /// Training steps per alpha value.
    #[arg(long)]
    train_steps: Option<usize>,
    #[command(flatten)]
    suite: SuiteArgs,
}

#[derive(Args, Debug)]
struct QpBenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
    agents: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    instances: usize,
    #[arg(long)]
    horizon: Option<usize>,
}

/// A bad invocation or input file; exits with code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// One line of a trajectory file.
#[derive(Debug, Serialize)]
struct TrajectoryRecord<'a> {
    t: usize,
    agent_id: usize,
    state: &'a [f64],
    control: Option<&'a [f64]>,
    mode: Option<StepMode>,
    h_value: Option<f64>,
    collision: bool,
    /// LiDAR hit points relative to the agent.
    lidar: &'a [Vec<f64>],
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use gcbf_core::Error as E;
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<E>() {
            if matches!(err, E::Config(_) | E::ModelMismatch { .. } | E::Toml(_) | E::MissingCheckpoint(_)) {
                return 2;
            }
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(usage("--workers must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global().context("starting worker pool")?;
    }
    match &cli.command {
        Command::Train(a) => cmd_train(&cli, a),
        Command::Simulate(a) => cmd_simulate(&cli, a),
        Command::Evaluate(a) => cmd_evaluate(&cli, a),
        Command::Sweep(a) => cmd_sweep(&cli, a),
        Command::QpBench(a) => cmd_qp_bench(&cli, a),
    }
}

fn read_input(path: &Path, what: &str) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {what} {}: {e}", path.display())))
}

fn parse_model(name: &str) -> Result<ModelKind> {
    ModelKind::from_name(name).ok_or_else(|| usage(format!("unknown model `{name}`")))
}

fn parse_suite(name: &str) -> Result<Suite> {
    Suite::from_name(name).ok_or_else(|| usage(format!("unknown suite `{name}`")))
}

fn parse_controller(name: &str) -> Result<ControllerKind> {
    ControllerKind::from_name(name).ok_or_else(|| usage(format!("unknown controller `{name}`")))
}

fn load_train_config(cli: &Cli, path: &Path, steps: Option<usize>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::from_toml(&read_input(path, "config")?)
        .with_context(|| format!("in config {}", path.display()))?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(s) = cli.scale {
        cfg.scale = s;
    }
    if let Some(s) = steps {
        cfg.total_steps = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut cfg = load_train_config(cli, &a.config, a.steps)?;
    if let Some(k) = a.checkpoint_every {
        cfg.checkpoint_every = k;
    }
    std::fs::create_dir_all(&cli.out_dir)?;
    std::fs::write(cli.out_dir.join("train_config.toml"), toml_string(&cfg)?)?;
    let out = train(&cfg, Some(&cli.out_dir))?;
    if let Some(last) = out.log.last() {
        eprintln!("trained {} steps, final loss {:.6}", out.log.len(), last.loss_total);
    }
    for p in &out.saved {
        println!("{}", p.display());
    }
    Ok(())
}

fn toml_string(cfg: &TrainConfig) -> Result<String> {
    let table = toml::Table::try_from(cfg).context("serializing config")?;
    Ok(table.to_string())
}

fn load_ckpt(path: &Option<PathBuf>) -> Result<Option<Checkpoint>> {
    path.as_deref().map(|p| load_checkpoint(p).with_context(|| format!("loading {}", p.display()))).transpose()
}

fn controller<'a>(kind: ControllerKind, ckpt: Option<&'a Checkpoint>) -> Result<Controller<'a>> {
    Ok(match kind {
        ControllerKind::Gcbf => {
            let ck = ckpt.ok_or_else(|| usage("the gcbf controller needs --checkpoint"))?;
            Controller::gcbf(ck, SafetyConfig::default())
        }
        ControllerKind::Nominal => Controller::Nominal,
        ControllerKind::QpCentralized => Controller::qp(QpMode::Centralized),
        ControllerKind::QpDecentralized => Controller::qp(QpMode::Decentralized),
    })
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let ckpt = load_ckpt(&a.checkpoint)?;
    let kind = match (&a.controller, a.nominal_only) {
        (_, true) => ControllerKind::Nominal,
        (Some(name), false) => parse_controller(name)?,
        (None, false) if ckpt.is_some() => ControllerKind::Gcbf,
        (None, false) => ControllerKind::Nominal,
    };
    let config = match &a.scenario {
        Some(p) => ScenarioConfig::from_toml(&read_input(p, "scenario")?).with_context(|| format!("in scenario {}", p.display()))?,
        None => {
            let model = match (&a.model, &ckpt) {
                (Some(m), _) => parse_model(m)?,
                (None, Some(ck)) => ck.model,
                (None, None) => ModelKind::SimpleCar,
            };
            ScenarioConfig::new(model, parse_suite(&a.suite)?, a.agents, cli.seed.unwrap_or(0))
        }
    };
    let scenario = generate_scenario(&config)?;
    let ctrl = controller(kind, ckpt.as_ref())?;
    let opts = EpisodeOptions { horizon: a.horizon, record: true, ..EpisodeOptions::default() };
    let ep = run_episode(&scenario, &ctrl, &opts)?;
    let traj = ep.trajectory.expect("recorded");

    let path = a.out.clone().unwrap_or_else(|| cli.out_dir.join("trajectory.jsonl"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    for f in &traj.frames {
        for (i, x) in f.states.iter().enumerate() {
            let rec = TrajectoryRecord {
                t: f.t,
                agent_id: i,
                state: x,
                control: f.controls.as_ref().map(|c| c[i].as_slice()),
                mode: f.modes.as_ref().map(|m| m[i]),
                h_value: f.h_values.as_ref().map(|h| h[i]),
                collision: f.collisions[i],
                lidar: f.lidar.get(i).map(Vec::as_slice).unwrap_or(&[]),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    serde_json::to_writer(&mut w, &ep.metrics)?;
    w.write_all(b"\n")?;
    w.flush()?;
    let m = &ep.metrics;
    eprintln!("safety {:.3} reaching {:.3} success {:.3} in {} steps", m.safety_rate, m.reaching_rate, m.success_rate, m.steps);
    Ok(())
}

fn suite_spec(cli: &Cli, s: &SuiteArgs, ckpt: Option<&Checkpoint>) -> Result<SuiteSpec> {
    let model = match (&s.model, ckpt) {
        (Some(m), _) => parse_model(m)?,
        (None, Some(ck)) => ck.model,
        (None, None) => ModelKind::SimpleCar,
    };
    Ok(SuiteSpec {
        instances: s.instances,
        base_seed: cli.seed.unwrap_or(0),
        horizon: s.horizon,
        sensing_radius: s.sensing_radius,
        reach: if s.ever_reached { ReachMetric::EverReached } else { ReachMetric::AtTermination },
        ..SuiteSpec::new(model, parse_suite(&s.suite)?, s.agents.clone())
    })
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let ckpt = load_ckpt(&a.checkpoint)?;
    let spec = suite_spec(cli, &a.suite, ckpt.as_ref())?;
    let kinds: Vec<ControllerKind> = if a.controllers.is_empty() {
        match ckpt {
            Some(_) => vec![ControllerKind::Gcbf, ControllerKind::Nominal],
            None => vec![ControllerKind::Nominal],
        }
    } else {
        a.controllers.iter().map(|c| parse_controller(c)).collect::<Result<_>>()?
    };
    let policy_seed = ckpt.as_ref().map(|_| cli.seed.unwrap_or(0));
    let mut records = Vec::new();
    for k in kinds {
        let c = controller(k, ckpt.as_ref())?;
        let seed = if k == ControllerKind::Gcbf { policy_seed } else { None };
        records.extend(run_suite(&spec, &c, seed)?);
    }
    write_results_csv(&cli.out_dir.join("results.csv"), &records)?;
    let rows = aggregate(&records);
    write_plot_csv(&cli.out_dir.join("plot.csv"), &rows)?;
    for r in &rows {
        eprintln!(
            "{} {} n={} safety {:.3} reaching {:.3} success {:.3}",
            r.suite,
            r.controller.name(),
            r.n_agents,
            r.safety_mean,
            r.reaching_mean,
            r.success_mean
        );
    }
    Ok(())
}

fn cmd_sweep(cli: &Cli, a: &SweepArgs) -> Result<()> {
    let kind = SweepKind::from_name(&a.kind).ok_or_else(|| usage(format!("unknown sweep kind `{}`", a.kind)))?;
    let ckpt = load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let spec = suite_spec(cli, &a.suite, Some(&ckpt))?;
    let train = if kind == SweepKind::Alpha {
        let mut cfg = match &a.train_config {
            Some(p) => load_train_config(cli, p, None)?,
            None => TrainConfig {
                seed: cli.seed.unwrap_or(0),
                scale: cli.scale.unwrap_or(ckpt.scale),
                ..TrainConfig::for_model(ckpt.model)
            },
        };
        if let Some(s) = a.train_steps {
            cfg.total_steps = s;
        }
        Some(cfg)
    } else {
        None
    };
    let values = if a.values.is_empty() { kind.default_values() } else { a.values.clone() };
    let base = SweepBase { checkpoint: ckpt, spec, safety: SafetyConfig::default(), train };
    let rows = ablation_sweep(kind, &values, &base)?;
    write_sweep_csv(&cli.out_dir.join(format!("sweep_{}.csv", kind.name())), &rows)?;
    for r in &rows {
        eprintln!("{}={} n={} safety {:.3} success {:.3}", kind.name(), r.value, r.n_agents, r.safety_mean, r.success_mean);
    }
    Ok(())
}

fn cmd_qp_bench(cli: &Cli, a: &QpBenchArgs) -> Result<()> {
    let rows = qp_bench(&a.agents, a.instances, a.horizon, cli.seed.unwrap_or(0))?;
    write_qp_bench_csv(&cli.out_dir.join("qp_bench.csv"), &rows)?;
    for r in &rows {
        eprintln!("n={} {} step {:.2e}s safety {:.3}", r.n_agents, r.mode.name(), r.mean_step_time_s, r.safety_rate);
    }
    Ok(())
}
