use std::sync::OnceLock;

use nalgebra::DMatrix;

use super::{DynamicsModel, ModelKind, DT};

const HEADING_GAIN: f64 = 3.0;
const SPEED_GAIN: f64 = 1.0;

/// Infinite-horizon discrete LQR gain `K` for `u = -K x`, found by iterating
/// the Riccati recursion until the cost matrix changes by less than `tol`.
pub fn dlqr(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let mut p = q.clone();
    let gain = |p: &DMatrix<f64>| {
        let s = r + b.transpose() * p * b;
        let rhs = b.transpose() * p * a;
        s.lu().solve(&rhs).expect("R + B'PB is positive definite")
    };
    for _ in 0..1_000_000 {
        let k = gain(&p);
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
        let next = (&next + next.transpose()) * 0.5;
        let diff = (&next - &p).abs().max();
        p = next;
        if diff < tol * (1.0 + p.abs().max()) {
            break;
        }
    }
    gain(&p)
}

fn numeric_jacobians(model: &DynamicsModel, x0: &[f64], u0: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (model.state_dim(), model.control_dim());
    let h = 1e-6;
    let f = |x: &[f64], u: &[f64]| {
        let mut d = vec![0.0; n];
        model.derivative_into(x, u, &mut d);
        d
    };
    let mut a = DMatrix::zeros(n, n);
    for c in 0..n {
        let (mut xp, mut xm) = (x0.to_vec(), x0.to_vec());
        xp[c] += h;
        xm[c] -= h;
        let (fp, fm) = (f(&xp, u0), f(&xm, u0));
        for r in 0..n {
            a[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    let mut b = DMatrix::zeros(n, m);
    for c in 0..m {
        let (mut up, mut um) = (u0.to_vec(), u0.to_vec());
        up[c] += h;
        um[c] -= h;
        let (fp, fm) = (f(x0, &up), f(x0, &um));
        for r in 0..n {
            b[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    (a, b)
}

fn equilibrium_control(model: &DynamicsModel) -> Vec<f64> {
    let mut u = vec![0.0; model.control_dim()];
    if model.kind == ModelKind::CrazyFlie {
        u[0] = model.crazyflie.hover_thrust();
    }
    u
}

/// LQR gain (`control_dim x state_dim`, row-major) about rest, with `Q = I`,
/// `R = I` on the Euler-discretized linearization.
pub fn lqr_gain(model: &DynamicsModel) -> Vec<f64> {
    let (n, m) = (model.state_dim(), model.control_dim());
    let x0 = vec![0.0; n];
    let u0 = equilibrium_control(model);
    let (ac, bc) = numeric_jacobians(model, &x0, &u0);
    let a = DMatrix::identity(n, n) + ac * DT;
    let b = bc * DT;
    let k = dlqr(&a, &b, &DMatrix::identity(n, n), &DMatrix::identity(m, m), 1e-9);
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        for c in 0..n {
            out[r * n + c] = k[(r, c)];
        }
    }
    out
}

fn cached_gain(model: &DynamicsModel) -> std::borrow::Cow<'static, [f64]> {
    static GAINS: [OnceLock<Vec<f64>>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let slot = match model.kind {
        ModelKind::SimpleCar => 0,
        ModelKind::SimpleDrone => 1,
        ModelKind::CrazyFlie => 2,
        ModelKind::DubinsCar => unreachable!("dubins uses a PID law"),
    };
    let default = DynamicsModel::new(model.kind);
    if model.crazyflie == default.crazyflie {
        std::borrow::Cow::Borrowed(GAINS[slot].get_or_init(|| lqr_gain(&default)).as_slice())
    } else {
        std::borrow::Cow::Owned(lqr_gain(model))
    }
}

pub(super) fn nominal_control(model: &DynamicsModel, x: &[f64], goal: &[f64]) -> Vec<f64> {
    if model.kind == ModelKind::DubinsCar {
        return dubins_pid(model, x, goal);
    }
    let (n, m) = (model.state_dim(), model.control_dim());
    let k = cached_gain(model);
    let mut err = x.to_vec();
    for (e, g) in err.iter_mut().zip(goal.iter().take(model.space_dim())) {
        *e -= g;
    }
    let mut u = equilibrium_control(model);
    for r in 0..m {
        u[r] -= (0..n).map(|c| k[r * n + c] * err[c]).sum::<f64>();
    }
    model.clamp_control(&u)
}

fn dubins_pid(model: &DynamicsModel, x: &[f64], goal: &[f64]) -> Vec<f64> {
    let (dx, dy) = (goal[0] - x[0], goal[1] - x[1]);
    let dist = dx.hypot(dy);
    let omega = if dist < 1e-6 {
        0.0
    } else {
        let err = dy.atan2(dx) - x[2];
        let wrapped = err.sin().atan2(err.cos());
        HEADING_GAIN * wrapped
    };
    let accel = SPEED_GAIN * (dist.min(model.speed_bound) - x[3]);
    model.clamp_control(&[omega, accel])
}
