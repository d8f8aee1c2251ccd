//! Joint training of the certificate and the policy.

mod adam;
mod loss;
mod rollout;
mod train;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ModelKind, DT};
use crate::error::{Error, Result};
use crate::nets::GcbfNet;
use crate::world::{keep_density_side, GraphSnapshot};

pub use adam::Adam;
pub use loss::{loss, loss_and_grads, record_loss, sample_stats, LossDetail, LossTerms, SampleStats};
pub use rollout::{collect_rollout, RolloutEnv, TrainSample};
pub use train::{epsilon_at, train, train_from, train_with, LogRow, TrainOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    /// Class-K slope in `alpha(h) = alpha * h`.
    pub alpha: f64,
    /// Margin of the hinge terms.
    pub gamma: f64,
    pub eta_safe: f64,
    pub eta_unsafe: f64,
    pub eta_deriv: f64,
    /// Weight of the control-deviation term.
    pub eta_ctrl: f64,
    pub lr_h: f64,
    pub lr_pi: f64,
    /// Number of optimizer steps.
    pub total_steps: usize,
    /// Environment steps collected per optimizer step; they form the batch.
    pub segment_len: usize,
    /// Environment steps before a new scenario is sampled.
    pub episode_len: usize,
    pub n_agents: usize,
    pub side_length: f64,
    pub r: f64,
    pub sensing_radius: f64,
    pub dt: f64,
    /// Small static obstacles placed in every training scenario.
    pub n_obstacles: usize,
    pub scale: f64,
    pub seed: u64,
    /// Also apply the derivative term to buffer-region samples.
    pub deriv_on_buffer: bool,
    /// Save a checkpoint every this many steps; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn for_model(model: ModelKind) -> Self {
        let (eta_deriv, eta_ctrl) = match model {
            ModelKind::DubinsCar => (0.2, 0.05),
            ModelKind::SimpleCar => (0.5, 0.05),
            ModelKind::SimpleDrone | ModelKind::CrazyFlie => (0.5, 0.0001),
        };
        let dim = model.space_dim();
        TrainConfig {
            model,
            alpha: 1.0,
            gamma: 0.02,
            eta_safe: 1.0,
            eta_unsafe: 1.0,
            eta_deriv,
            eta_ctrl,
            lr_h: 3e-4,
            lr_pi: 1e-3,
            total_steps: 20_000,
            segment_len: 16,
            episode_len: 256,
            n_agents: 16,
            side_length: keep_density_side(dim, 16),
            r: 0.05,
            sensing_radius: if dim == 2 { 1.0 } else { 0.5 },
            dt: DT,
            n_obstacles: if model == ModelKind::DubinsCar { 16 } else { 0 },
            scale: 0.125,
            seed: 0,
            deriv_on_buffer: true,
            checkpoint_every: 0,
        }
    }

    /// Parse a TOML file; `model` is required and every other key falls back
    /// to [`TrainConfig::for_model`].
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text)?;
        let model = table
            .get("model")
            .and_then(|v| v.as_str())
            .and_then(ModelKind::from_name)
            .ok_or_else(|| Error::Config("`model` must be one of simple_car, dubins_car, simple_drone, crazy_flie".into()))?;
        let mut merged = toml::Table::try_from(Self::for_model(model)).expect("config serializes");
        for (k, v) in table {
            if !merged.contains_key(&k) {
                return Err(Error::Config(format!("unknown training key `{k}`")));
            }
            merged.insert(k, v);
        }
        let cfg: TrainConfig = toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("lr_h", self.lr_h),
            ("lr_pi", self.lr_pi),
            ("side_length", self.side_length),
            ("r", self.r),
            ("sensing_radius", self.sensing_radius),
            ("dt", self.dt),
            ("scale", self.scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("eta_safe", self.eta_safe), ("eta_unsafe", self.eta_unsafe), ("eta_deriv", self.eta_deriv), ("eta_ctrl", self.eta_ctrl)] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.scale > 1.0 {
            return Err(Error::Config(format!("scale must be at most 1, got {}", self.scale)));
        }
        if self.segment_len == 0 || self.episode_len == 0 || self.n_agents == 0 {
            return Err(Error::Config("segment_len, episode_len and n_agents must be positive".into()));
        }
        Ok(())
    }
}

/// Anything that assigns a certificate value to an agent of a graph.
pub trait Certificate {
    fn certificate(&self, graph: &GraphSnapshot, i: usize) -> f64;
}

impl Certificate for GcbfNet {
    fn certificate(&self, graph: &GraphSnapshot, i: usize) -> f64 {
        self.eval_agent(graph, i).0
    }
}

impl<F: Fn(&GraphSnapshot, usize) -> f64> Certificate for F {
    fn certificate(&self, graph: &GraphSnapshot, i: usize) -> f64 {
        self(graph, i)
    }
}

pub fn finite_difference(h_now: f64, h_next: f64, dt: f64) -> f64 {
    (h_next - h_now) / dt
}

/// `(h(next) - h(now)) / dt` for agent `i` of a recorded sample.
pub fn hdot_estimate<C: Certificate + ?Sized>(h: &C, sample: &TrainSample, i: usize) -> f64 {
    finite_difference(h.certificate(&sample.graph, i), h.certificate(&sample.next, i), sample.dt)
}

#[cfg(test)]
mod tests;
