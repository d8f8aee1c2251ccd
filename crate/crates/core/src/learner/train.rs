use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::adam::Adam;
use super::loss::{loss_and_grads, LossTerms};
use super::rollout::{collect_rollout, RolloutEnv};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nets::{init, save_checkpoint, Checkpoint, GcbfNet, PolicyNet};

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub loss_total: f64,
    pub loss_safe: f64,
    pub loss_unsafe: f64,
    pub loss_deriv: f64,
    pub loss_ctrl: f64,
    pub epsilon: f64,
}

impl LogRow {
    fn new(step: usize, t: &LossTerms, epsilon: f64) -> Self {
        LogRow {
            step,
            loss_total: t.total,
            loss_safe: t.safe,
            loss_unsafe: t.unsafe_,
            loss_deriv: t.deriv,
            loss_ctrl: t.ctrl,
            epsilon,
        }
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    /// Checkpoint files written, in order.
    pub saved: Vec<PathBuf>,
}

/// Exploration probability after `step` of `total` updates.
pub fn epsilon_at(step: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        1.0 - step as f64 / total as f64
    }
}

pub fn train(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    train_with(cfg, out_dir, |_| {})
}

/// Train from freshly initialized networks; `on_step` sees every log row.
pub fn train_with(cfg: &TrainConfig, out_dir: Option<&Path>, on_step: impl FnMut(&LogRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (h, pi) = init(cfg.model, cfg.seed, cfg.scale)?;
    train_from(cfg, h, pi, out_dir, on_step)
}

pub fn train_from(
    cfg: &TrainConfig,
    mut h: GcbfNet,
    mut pi: PolicyNet,
    out_dir: Option<&Path>,
    mut on_step: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut env = RolloutEnv::new(cfg, cfg.seed.wrapping_add(0x9e37_79b9))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam_h = Adam::new(cfg.lr_h, &h.params);
    let mut adam_pi = Adam::new(cfg.lr_pi, &pi.params);
    let mut writer = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(csv::Writer::from_path(dir.join("train_log.csv"))?)
        }
        None => None,
    };
    let mut log = Vec::with_capacity(cfg.total_steps);
    let mut saved = Vec::new();
    let snapshot = |h: &GcbfNet, pi: &PolicyNet, step: usize| Checkpoint {
        model: cfg.model,
        scale: cfg.scale,
        step: step as u64,
        gcbf: h.clone(),
        policy: pi.clone(),
    };

    for step in 0..cfg.total_steps {
        let eps = epsilon_at(step, cfg.total_steps);
        let batch = collect_rollout(&pi, eps, &mut env, cfg.segment_len, &mut rng)?;
        let (terms, gh, gp) = loss_and_grads(&h, &pi, &batch, cfg)?;
        let bad_grad = gh.iter().chain(&gp).any(|g| g.data().iter().any(|v| !v.is_finite()));
        if !terms.total.is_finite() || bad_grad {
            let detail = format!(
                "terms {terms:?}, non-finite gradient: {bad_grad}, epsilon {eps}, episode {} t {}",
                env.episodes, env.t
            );
            if let Some(dir) = out_dir {
                save_checkpoint(&dir.join("nan_dump.bin"), &snapshot(&h, &pi, step))?;
                std::fs::write(dir.join("nan_dump.txt"), &detail)?;
            }
            return Err(Error::NonFiniteLoss { step, detail });
        }
        adam_h.step(&mut h.params, &gh);
        adam_pi.step(&mut pi.params, &gp);
        let row = LogRow::new(step, &terms, eps);
        if let Some(w) = writer.as_mut() {
            w.serialize(row)?;
        }
        on_step(&row);
        log.push(row);
        let done = step + 1;
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.total_steps {
                let path = dir.join(format!("ckpt_{done:07}.bin"));
                save_checkpoint(&path, &snapshot(&h, &pi, done))?;
                saved.push(path);
            }
        }
    }
    if let Some(w) = writer.as_mut() {
        if cfg.total_steps == 0 {
            w.write_record(["step", "loss_total", "loss_safe", "loss_unsafe", "loss_deriv", "loss_ctrl", "epsilon"])?;
        }
        w.flush()?;
    }
    let checkpoint = snapshot(&h, &pi, cfg.total_steps);
    if let Some(dir) = out_dir {
        let path = dir.join("ckpt_final.bin");
        save_checkpoint(&path, &checkpoint)?;
        saved.push(path);
    }
    Ok(TrainOutcome { checkpoint, log, saved })
}
