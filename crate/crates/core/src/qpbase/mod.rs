//! Handcrafted pairwise CBF for the double integrator and the QP safety
//! filters built on it.

mod solver;

use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::world::SpatialGrid;

pub use solver::{active_set, kkt_residual, operator_splitting, solve_qp, QpError, QpMethod, QpProblem, QpSolution};

pub const QP_TOL: f64 = 1e-8;
pub const QP_MAX_ITER: usize = 10_000;

fn split(x: &[f64]) -> ([f64; 2], [f64; 2]) {
    assert!(x.len() >= 4, "double-integrator state has four entries");
    ([x[0], x[1]], [x[2], x[3]])
}

fn diff(x1: &[f64], x2: &[f64]) -> ([f64; 2], [f64; 2]) {
    let ((p1, v1), (p2, v2)) = (split(x1), split(x2));
    ([p1[0] - p2[0], p1[1] - p2[1]], [v1[0] - v2[0], v1[1] - v2[1]])
}

/// `2 dp.dv + |dp|^2 - 4 r^2` with `dp = p1 - p2`, `dv = v1 - v2`.
pub fn pair_h(x1: &[f64], x2: &[f64], r: f64) -> f64 {
    let (dp, dv) = diff(x1, x2);
    2.0 * (dp[0] * dv[0] + dp[1] * dv[1]) + dp[0] * dp[0] + dp[1] * dp[1] - 4.0 * r * r
}

/// Affine form of the pair's `hdot`: `constant + c1.a1 + c2.a2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HdotCoeffs {
    pub constant: f64,
    pub a1: [f64; 2],
    pub a2: [f64; 2],
}

impl HdotCoeffs {
    pub fn eval(&self, a1: &[f64], a2: &[f64]) -> f64 {
        self.constant + self.a1[0] * a1[0] + self.a1[1] * a1[1] + self.a2[0] * a2[0] + self.a2[1] * a2[1]
    }
}

pub fn pair_hdot_coeffs(x1: &[f64], x2: &[f64]) -> HdotCoeffs {
    let (dp, dv) = diff(x1, x2);
    let constant = 2.0 * (dv[0] * dv[0] + dv[1] * dv[1]) + 2.0 * (dp[0] * dv[0] + dp[1] * dv[1]);
    HdotCoeffs { constant, a1: [2.0 * dp[0], 2.0 * dp[1]], a2: [-2.0 * dp[0], -2.0 * dp[1]] }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpMode {
    Centralized,
    Decentralized,
}

impl QpMode {
    pub fn name(self) -> &'static str {
        match self {
            QpMode::Centralized => "centralized",
            QpMode::Decentralized => "decentralized",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterConfig {
    pub alpha: f64,
    pub r: f64,
    /// Pairs farther apart are left unconstrained. Infinite by default.
    pub sensing_radius: f64,
    pub control_bound: f64,
    /// Agents at this speed may not accelerate along their velocity.
    pub speed_bound: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { alpha: 1.0, r: 0.05, sensing_radius: f64::INFINITY, control_bound: 10.0, speed_bound: f64::INFINITY }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutput {
    pub controls: Vec<Vec<f64>>,
    /// Agents whose QP was infeasible or unsolved and fell back to the clamped nominal.
    pub fallback: Vec<bool>,
    /// Pairs skipped because the agents coincide.
    pub degenerate_pairs: usize,
    /// Time spent in the QP solver.
    pub solve_time: Duration,
}

fn clamp_all(u: &[Vec<f64>], b: f64) -> Vec<Vec<f64>> {
    u.iter().map(|v| v.iter().map(|x| x.clamp(-b, b)).collect()).collect()
}

/// Pairs `(i, j)`, `i < j`, within the sensing radius.
fn sensed_pairs(states: &[Vec<f64>], radius: f64) -> Vec<(usize, usize)> {
    let n = states.len();
    if !radius.is_finite() {
        return (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    }
    let pos: Vec<Vec<f64>> = states.iter().map(|x| x[..2].to_vec()).collect();
    let grid = SpatialGrid::new(pos.iter().map(Vec::as_slice), radius);
    let mut out = Vec::new();
    for i in 0..states.len() {
        for j in grid.candidates(&pos[i]) {
            if j > i && crate::world::dist(&pos[i], &pos[j]) <= radius {
                out.push((i, j));
            }
        }
    }
    out
}

/// `-v.a >= 0` for an agent at the speed bound, so the speed clamp of the
/// simulator cannot discard part of the planned acceleration.
fn speed_row(x: &[f64], cfg: &FilterConfig) -> Option<[f64; 2]> {
    let (_, v) = split(x);
    (v[0].hypot(v[1]) >= cfg.speed_bound * (1.0 - 1e-9)).then_some([-v[0], -v[1]])
}

fn coincident(x1: &[f64], x2: &[f64]) -> bool {
    let (dp, _) = diff(x1, x2);
    dp[0] == 0.0 && dp[1] == 0.0
}

/// One joint QP over every agent's acceleration.
pub fn centralized_filter(states: &[Vec<f64>], nominals: &[Vec<f64>], cfg: &FilterConfig) -> FilterOutput {
    let n = states.len();
    let b = cfg.control_bound;
    let target: Vec<f64> = nominals.iter().flatten().copied().collect();
    let mut qp = QpProblem::nearest_to(target).with_bounds(vec![-b; 2 * n], vec![b; 2 * n]);
    let mut degenerate = 0;
    for (i, x) in states.iter().enumerate() {
        if let Some(r) = speed_row(x, cfg) {
            let mut row = vec![0.0; 2 * n];
            row[2 * i..2 * i + 2].copy_from_slice(&r);
            qp.constrain(row, 0.0);
        }
    }
    for (i, j) in sensed_pairs(states, cfg.sensing_radius) {
        if coincident(&states[i], &states[j]) {
            degenerate += 1;
            continue;
        }
        let c = pair_hdot_coeffs(&states[i], &states[j]);
        let mut row = vec![0.0; 2 * n];
        row[2 * i..2 * i + 2].copy_from_slice(&c.a1);
        row[2 * j..2 * j + 2].copy_from_slice(&c.a2);
        qp.constrain(row, -c.constant - cfg.alpha * pair_h(&states[i], &states[j], cfg.r));
    }
    let t0 = Instant::now();
    let sol = solve_qp(&qp, QP_TOL, QP_MAX_ITER);
    let solve_time = t0.elapsed();
    match sol {
        Ok(s) => FilterOutput {
            controls: s.u.chunks(2).map(<[f64]>::to_vec).collect(),
            fallback: vec![false; n],
            degenerate_pairs: degenerate,
            solve_time,
        },
        Err(_) => FilterOutput { controls: clamp_all(nominals, b), fallback: vec![true; n], degenerate_pairs: degenerate, solve_time },
    }
}

/// One two-variable QP per agent; neighbors are assumed to apply their nominal accelerations.
pub fn decentralized_filter(states: &[Vec<f64>], nominals: &[Vec<f64>], cfg: &FilterConfig) -> FilterOutput {
    let n = states.len();
    let b = cfg.control_bound;
    let mut neighbors = vec![Vec::new(); n];
    for (i, j) in sensed_pairs(states, cfg.sensing_radius) {
        neighbors[i].push(j);
        neighbors[j].push(i);
    }
    let t0 = Instant::now();
    let results: Vec<(Vec<f64>, bool, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut qp = QpProblem::nearest_to(nominals[i].clone()).with_bounds(vec![-b; 2], vec![b; 2]);
            let mut degenerate = 0;
            if let Some(r) = speed_row(&states[i], cfg) {
                qp.constrain(r.to_vec(), 0.0);
            }
            for &j in &neighbors[i] {
                if coincident(&states[i], &states[j]) {
                    degenerate += 1;
                    continue;
                }
                let c = pair_hdot_coeffs(&states[i], &states[j]);
                let fixed = c.a2[0] * nominals[j][0] + c.a2[1] * nominals[j][1];
                qp.constrain(c.a1.to_vec(), -c.constant - fixed - cfg.alpha * pair_h(&states[i], &states[j], cfg.r));
            }
            match solve_qp(&qp, QP_TOL, QP_MAX_ITER) {
                Ok(s) => (s.u, false, degenerate),
                Err(_) => (nominals[i].iter().map(|x| x.clamp(-b, b)).collect(), true, degenerate),
            }
        })
        .collect();
    let solve_time = t0.elapsed();
    let degenerate_pairs = results.iter().map(|r| r.2).sum::<usize>() / 2;
    let (controls, fallback) = results.into_iter().map(|(u, f, _)| (u, f)).unzip();
    FilterOutput { controls, fallback, degenerate_pairs, solve_time }
}

pub fn filter(mode: QpMode, states: &[Vec<f64>], nominals: &[Vec<f64>], cfg: &FilterConfig) -> FilterOutput {
    match mode {
        QpMode::Centralized => centralized_filter(states, nominals, cfg),
        QpMode::Decentralized => decentralized_filter(states, nominals, cfg),
    }
}

/// One row of the timing report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub n_agents: usize,
    pub mode: QpMode,
    pub mean_step_time_s: f64,
    pub safety_rate: f64,
}

pub fn write_timing_csv(path: &Path, rows: &[TimingRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["n_agents", "mode", "mean_step_time_s", "safety_rate"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
