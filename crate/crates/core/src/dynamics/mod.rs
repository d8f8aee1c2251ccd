//! Agent dynamics, Euler integration, nominal goal-reaching control and edge features.

mod nominal;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use nominal::{dlqr, lqr_gain};

/// Simulation timestep shared by every environment.
pub const DT: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SimpleCar,
    DubinsCar,
    SimpleDrone,
    CrazyFlie,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::SimpleCar,
        ModelKind::DubinsCar,
        ModelKind::SimpleDrone,
        ModelKind::CrazyFlie,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SimpleCar => "simple_car",
            ModelKind::DubinsCar => "dubins_car",
            ModelKind::SimpleDrone => "simple_drone",
            ModelKind::CrazyFlie => "crazy_flie",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn state_dim(self) -> usize {
        match self {
            ModelKind::SimpleCar | ModelKind::DubinsCar => 4,
            ModelKind::SimpleDrone => 6,
            ModelKind::CrazyFlie => 12,
        }
    }

    pub fn control_dim(self) -> usize {
        match self {
            ModelKind::SimpleCar | ModelKind::DubinsCar => 2,
            ModelKind::SimpleDrone => 3,
            ModelKind::CrazyFlie => 4,
        }
    }

    pub fn space_dim(self) -> usize {
        match self {
            ModelKind::SimpleCar | ModelKind::DubinsCar => 2,
            ModelKind::SimpleDrone | ModelKind::CrazyFlie => 3,
        }
    }

    /// Length of the per-edge relative feature.
    pub fn edge_dim(self) -> usize {
        match self {
            ModelKind::DubinsCar => 5,
            k => k.state_dim(),
        }
    }

    /// Maximum agent speed in m/s.
    pub fn default_speed_bound(self) -> f64 {
        if self.space_dim() == 2 {
            0.8
        } else {
            0.6
        }
    }
}

/// Physical constants of the CrazyFlie quadrotor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrazyFlieParams {
    pub mass: f64,
    pub i_xx: f64,
    pub i_yy: f64,
    pub i_zz: f64,
    pub c_t: f64,
    pub c_d: f64,
    pub arm: f64,
    pub gravity: f64,
}

impl Default for CrazyFlieParams {
    fn default() -> Self {
        CrazyFlieParams {
            mass: 0.0299,
            i_xx: 1.395e-5,
            i_yy: 1.395e-5,
            i_zz: 2.173e-5,
            c_t: 3.1582e-10,
            c_d: 7.9379e-12,
            arm: 0.03973,
            gravity: 9.8,
        }
    }
}

impl CrazyFlieParams {
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    /// The 4x4 map from squared motor speeds to `(U1, U2, U3, U4)`.
    pub fn mixing_matrix(&self) -> [[f64; 4]; 4] {
        let t = self.c_t;
        let l = self.arm * self.c_t * std::f64::consts::SQRT_2;
        let d = self.c_d;
        [
            [t, t, t, t],
            [-l, -l, l, l],
            [-l, l, l, -l],
            [-d, d, -d, d],
        ]
    }
}

/// Thrust and body moments produced by four motor speeds (rpm).
pub fn motor_mix(params: &CrazyFlieParams, motor_speeds: [f64; 4]) -> [f64; 4] {
    let m = params.mixing_matrix();
    let sq = motor_speeds.map(|w| w * w);
    let mut out = [0.0; 4];
    for (o, row) in out.iter_mut().zip(&m) {
        *o = row.iter().zip(&sq).map(|(a, b)| a * b).sum();
    }
    out
}

/// A dynamics model together with its actuation and speed limits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynamicsModel {
    pub kind: ModelKind,
    /// Per-axis control magnitude limit.
    pub control_bound: f64,
    /// Speed limit applied after each integration step.
    pub speed_bound: f64,
    pub crazyflie: CrazyFlieParams,
}

impl DynamicsModel {
    pub fn new(kind: ModelKind) -> Self {
        DynamicsModel {
            kind,
            control_bound: 10.0,
            speed_bound: kind.default_speed_bound(),
            crazyflie: CrazyFlieParams::default(),
        }
    }

    pub fn with_speed_bound(mut self, speed_bound: f64) -> Self {
        self.speed_bound = speed_bound;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.kind.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.kind.control_dim()
    }

    pub fn space_dim(&self) -> usize {
        self.kind.space_dim()
    }

    pub fn edge_dim(&self) -> usize {
        self.kind.edge_dim()
    }

    fn check(&self, x: &[f64], u: Option<&[f64]>) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                what: "state",
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        if let Some(u) = u {
            if u.len() != self.control_dim() {
                return Err(Error::DimensionMismatch {
                    what: "control",
                    expected: self.control_dim(),
                    got: u.len(),
                });
            }
        }
        Ok(())
    }

    /// Continuous-time `F(x, u)`.
    pub fn derivative(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check(x, Some(u))?;
        let mut dx = vec![0.0; x.len()];
        self.derivative_into(x, u, &mut dx);
        Ok(dx)
    }

    pub(crate) fn derivative_into(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        match self.kind {
            ModelKind::SimpleCar => {
                dx[0] = x[2];
                dx[1] = x[3];
                dx[2] = u[0];
                dx[3] = u[1];
            }
            ModelKind::DubinsCar => {
                let (theta, v) = (x[2], x[3]);
                dx[0] = v * theta.cos();
                dx[1] = v * theta.sin();
                dx[2] = u[0];
                dx[3] = u[1];
            }
            ModelKind::SimpleDrone => {
                dx[0] = x[3];
                dx[1] = x[4];
                dx[2] = x[5];
                dx[3] = -1.1 * x[3] + 1.1 * u[0];
                dx[4] = -1.1 * x[4] + 1.1 * u[1];
                dx[5] = -6.0 * x[5] + 6.0 * u[2];
            }
            ModelKind::CrazyFlie => crazyflie_derivative(&self.crazyflie, x, u, dx),
        }
    }

    /// `dF/du`, `state_dim x control_dim` row-major. Every model here is
    /// control-affine with a state-independent input matrix.
    pub fn control_matrix(&self) -> Vec<f64> {
        let (n, m) = (self.state_dim(), self.control_dim());
        let mut g = vec![0.0; n * m];
        let mut set = |r: usize, c: usize, v: f64| g[r * m + c] = v;
        match self.kind {
            ModelKind::SimpleCar | ModelKind::DubinsCar => {
                set(2, 0, 1.0);
                set(3, 1, 1.0);
            }
            ModelKind::SimpleDrone => {
                set(3, 0, 1.1);
                set(4, 1, 1.1);
                set(5, 2, 6.0);
            }
            ModelKind::CrazyFlie => {
                let p = &self.crazyflie;
                set(5, 0, 1.0 / p.mass);
                set(9, 1, 1.0 / p.i_zz);
                set(10, 2, 1.0 / p.i_yy);
                set(11, 3, 1.0 / p.i_xx);
            }
        }
        g
    }

    pub fn clamp_control(&self, u: &[f64]) -> Vec<f64> {
        let b = self.control_bound;
        u.iter().map(|v| v.clamp(-b, b)).collect()
    }

    /// Indices of the state entries that make up the speed.
    fn velocity_range(&self) -> std::ops::Range<usize> {
        match self.kind {
            ModelKind::SimpleCar => 2..4,
            ModelKind::DubinsCar => 3..4,
            ModelKind::SimpleDrone | ModelKind::CrazyFlie => 3..6,
        }
    }

    pub fn speed(&self, x: &[f64]) -> f64 {
        x[self.velocity_range()].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn position<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[..self.space_dim()]
    }

    /// One forward-Euler step with control and speed clamping.
    pub fn step(&self, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
        self.check(x, Some(u))?;
        if !(dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        Ok(self.step_unchecked(x, u, dt))
    }

    pub(crate) fn step_unchecked(&self, x: &[f64], u: &[f64], dt: f64) -> Vec<f64> {
        let uc = self.clamp_control(u);
        let mut dx = vec![0.0; x.len()];
        self.derivative_into(x, &uc, &mut dx);
        let mut next: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + dt * b).collect();
        let vr = self.velocity_range();
        let speed = self.speed(&next);
        if speed > self.speed_bound {
            let s = self.speed_bound / speed;
            next[vr].iter_mut().for_each(|v| *v *= s);
        }
        next
    }

    /// Jacobian of [`DynamicsModel::step`] with respect to the control,
    /// `state_dim x control_dim` row-major, including both clamps.
    pub fn step_control_jacobian(&self, x: &[f64], u: &[f64], dt: f64) -> Vec<f64> {
        let (n, m) = (self.state_dim(), self.control_dim());
        let b = self.control_bound;
        let mut j = self.control_matrix();
        for r in 0..n {
            for c in 0..m {
                let active = u[c] > -b && u[c] < b;
                j[r * m + c] = if active { dt * j[r * m + c] } else { 0.0 };
            }
        }
        // Speed clamp acts on the pre-clamp state.
        let uc = self.clamp_control(u);
        let mut dx = vec![0.0; n];
        self.derivative_into(x, &uc, &mut dx);
        let pre: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + dt * d).collect();
        let vr = self.velocity_range();
        let speed = self.speed(&pre);
        if speed > self.speed_bound {
            let vel = &pre[vr.clone()];
            let k = vel.len();
            // d(b v/|v|)/dv = b/|v| (I - v v^T/|v|^2)
            let mut s = vec![0.0; k * k];
            for a in 0..k {
                for c in 0..k {
                    let id = if a == c { 1.0 } else { 0.0 };
                    s[a * k + c] = self.speed_bound / speed * (id - vel[a] * vel[c] / (speed * speed));
                }
            }
            let block: Vec<f64> = vr.clone().flat_map(|r| j[r * m..(r + 1) * m].to_vec()).collect();
            for (a, r) in vr.enumerate() {
                for c in 0..m {
                    j[r * m + c] = (0..k).map(|t| s[a * k + t] * block[t * m + c]).sum();
                }
            }
        }
        j
    }

    /// Goal-reaching control without any safety awareness.
    pub fn nominal_control(&self, x: &[f64], goal: &[f64]) -> Vec<f64> {
        nominal::nominal_control(self, x, goal)
    }

    /// Per-node embedding whose differences form the edge features.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            ModelKind::DubinsCar => {
                let (theta, v) = (x[2], x[3]);
                vec![x[0], x[1], v * theta.cos(), v * theta.sin(), theta]
            }
            _ => x.to_vec(),
        }
    }

    /// `d embed / dx`, `edge_dim x state_dim`; `None` when the embedding is the identity.
    pub fn embed_jacobian(&self, x: &[f64]) -> Option<Vec<f64>> {
        match self.kind {
            ModelKind::DubinsCar => {
                let (theta, v) = (x[2], x[3]);
                let (s, c) = theta.sin_cos();
                Some(vec![
                    1.0, 0.0, 0.0, 0.0, //
                    0.0, 1.0, 0.0, 0.0, //
                    0.0, 0.0, -v * s, c, //
                    0.0, 0.0, v * c, s, //
                    0.0, 0.0, 1.0, 0.0,
                ])
            }
            _ => None,
        }
    }

    /// Information flowing from node `j` to agent `i`.
    pub fn edge_feature(&self, x_i: &[f64], x_j: &[f64]) -> Vec<f64> {
        let (ei, ej) = (self.embed(x_i), self.embed(x_j));
        ej.iter().zip(&ei).map(|(a, b)| a - b).collect()
    }

    /// Zero-velocity state placed at an observed point.
    pub fn virtual_state(&self, point: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.state_dim()];
        x[..point.len()].copy_from_slice(point);
        x
    }

    /// State at rest at `position`.
    pub fn rest_state(&self, position: &[f64]) -> Vec<f64> {
        self.virtual_state(position)
    }
}

/// 6-DOF quadrotor with state `[px, py, pz, u, v, w, phi, theta, psi, r, q, p]`
/// and input `(U1, U2, U3, U4)`. Body velocities keep the `u, v, w` naming.
fn crazyflie_derivative(p: &CrazyFlieParams, x: &[f64], u: &[f64], dx: &mut [f64]) {
    let (bu, bv, bw) = (x[3], x[4], x[5]);
    let (phi, theta, psi) = (x[6], x[7], x[8]);
    let (r, q, pr) = (x[9], x[10], x[11]);
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    let tt = theta.tan();
    let g = p.gravity;
    dx[0] = (cf * cp * st + sf * sp) * bw - (sp * cf - cp * sf * st) * bv + bu * cp * ct;
    dx[1] = (sf * sp * st + cf * cp) * bv - (cp * sf - sp * cf * st) * bw + bu * sp * ct;
    dx[2] = bw * cp * cf - bu * st + bv * sf * ct;
    dx[3] = r * bv - q * bw + g * st;
    dx[4] = pr * bw - r * bu - g * sf * ct;
    dx[5] = q * bu - pr * bv + u[0] / p.mass - g * ct * cf;
    dx[6] = r * cf / ct + q * sf / ct;
    dx[7] = q * cf - r * sf;
    dx[8] = pr + r * cf * tt + q * sf * tt;
    dx[9] = (u[1] - pr * q * (p.i_yy - p.i_xx)) / p.i_zz;
    dx[10] = (u[2] - pr * r * (p.i_xx - p.i_zz)) / p.i_yy;
    dx[11] = (u[3] + q * r * (p.i_zz - p.i_yy)) / p.i_xx;
}
