use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// `min sum_k w_k (u_k - t_k)^2` subject to `A u >= b` and `lo <= u <= hi`.
#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub weights: Vec<f64>,
    pub target: Vec<f64>,
    /// Constraint rows, each of length `n`.
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl QpProblem {
    /// Unit weights around `target` with no constraints.
    pub fn nearest_to(target: Vec<f64>) -> Self {
        QpProblem {
            weights: vec![1.0; target.len()],
            target,
            rows: Vec::new(),
            rhs: Vec::new(),
            lower: None,
            upper: None,
        }
    }

    pub fn n(&self) -> usize {
        self.target.len()
    }

    pub fn constrain(&mut self, row: Vec<f64>, rhs: f64) {
        assert_eq!(row.len(), self.n(), "constraint row length");
        self.rows.push(row);
        self.rhs.push(rhs);
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = Some(lower);
        self.upper = Some(upper);
        self
    }

    /// All inequalities as `(row, rhs)`, general rows first, then lower and upper bounds.
    fn inequalities(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = self.n();
        let mut rows = self.rows.clone();
        let mut rhs = self.rhs.clone();
        if let Some(lo) = &self.lower {
            for (k, v) in lo.iter().enumerate().filter(|(_, v)| v.is_finite()) {
                let mut r = vec![0.0; n];
                r[k] = 1.0;
                rows.push(r);
                rhs.push(*v);
            }
        }
        if let Some(hi) = &self.upper {
            for (k, v) in hi.iter().enumerate().filter(|(_, v)| v.is_finite()) {
                let mut r = vec![0.0; n];
                r[k] = -1.0;
                rows.push(r);
                rhs.push(-v);
            }
        }
        (rows, rhs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpMethod {
    ActiveSet,
    OperatorSplitting,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub u: Vec<f64>,
    /// Multipliers of the general rows (bounds excluded).
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub method: QpMethod,
    pub kkt_residual: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("QP is infeasible")]
    Infeasible,
    #[error("QP solver stopped after {iterations} iterations with KKT residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("QP has non-positive weight {0}")]
    BadWeight(f64),
}

/// Worst violation of stationarity, primal and dual feasibility and
/// complementary slackness over all inequalities.
pub fn kkt_residual(p: &QpProblem, u: &[f64], lambda_all: &[f64]) -> f64 {
    let (rows, rhs) = p.inequalities();
    let mut grad: Vec<f64> = (0..p.n()).map(|k| 2.0 * p.weights[k] * (u[k] - p.target[k])).collect();
    let mut worst: f64 = 0.0;
    for ((row, b), l) in rows.iter().zip(&rhs).zip(lambda_all) {
        let slack = dot(row, u) - b;
        worst = worst.max(-slack).max(-l).max((l * slack).abs());
        for (g, a) in grad.iter_mut().zip(row) {
            *g -= l * a;
        }
    }
    grad.iter().fold(worst, |w, g| w.max(g.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn finish(p: &QpProblem, u: Vec<f64>, lambda_all: Vec<f64>, iterations: usize, method: QpMethod) -> QpSolution {
    let kkt = kkt_residual(p, &u, &lambda_all);
    let m = p.rows.len();
    QpSolution { u, multipliers: lambda_all[..m].to_vec(), iterations, method, kkt_residual: kkt }
}

/// Solve with the dual active-set method, falling back to operator splitting
/// when the active-set iteration stalls or its KKT residual exceeds `tol`.
pub fn solve_qp(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    if let Some(w) = p.weights.iter().find(|w| !(**w > 0.0)) {
        return Err(QpError::BadWeight(*w));
    }
    match active_set(p, tol, max_iter) {
        Ok(s) if s.kkt_residual < tol => Ok(s),
        Err(QpError::Infeasible) => Err(QpError::Infeasible),
        _ => {
            let s = operator_splitting(p, tol, max_iter)?;
            if s.kkt_residual < tol {
                Ok(s)
            } else {
                Err(QpError::NotConverged { iterations: s.iterations, residual: s.kkt_residual })
            }
        }
    }
}

/// Goldfarb-Idnani dual active-set method specialised to a diagonal Hessian.
pub fn active_set(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    let n = p.n();
    let (rows, rhs) = p.inequalities();
    let m = rows.len();
    let norms: Vec<f64> = rows.iter().map(|r| dot(r, r).sqrt().max(f64::MIN_POSITIVE)).collect();
    let mut x = p.target.clone();
    // J = L^-T Q with G = 2 diag(w) = L L^T.
    let mut jm = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        jm[(k, k)] = 1.0 / (2.0 * p.weights[k]).sqrt();
    }
    let mut r = DMatrix::<f64>::zeros(n, n);
    let mut active: Vec<usize> = Vec::new();
    let mut duals: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let viol_tol = 0.01 * tol;

    loop {
        let mut pick = None;
        let mut worst = viol_tol;
        for j in 0..m {
            if active.contains(&j) {
                continue;
            }
            let v = (rhs[j] - dot(&rows[j], &x)) / norms[j];
            if v > worst {
                worst = v;
                pick = Some(j);
            }
        }
        let Some(pc) = pick else { break };
        let a_p = DVector::from_column_slice(&rows[pc]);
        let mut u_plus = duals.clone();
        u_plus.push(0.0);
        loop {
            iterations += 1;
            if iterations > max_iter {
                let mut lam = vec![0.0; m];
                for (j, l) in active.iter().zip(&duals) {
                    lam[*j] = *l;
                }
                return Err(QpError::NotConverged { iterations, residual: kkt_residual(p, &x, &lam) });
            }
            let q = active.len();
            let d = jm.transpose() * &a_p;
            let z = jm.columns(q, n - q) * d.rows(q, n - q);
            let rv = if q > 0 {
                let rq = r.view((0, 0), (q, q)).into_owned();
                rq.solve_upper_triangular(&d.rows(0, q).into_owned()).expect("R is nonsingular")
            } else {
                DVector::zeros(0)
            };
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for k in 0..q {
                if rv[k] > 0.0 {
                    let t = u_plus[k] / rv[k];
                    if t < t1 {
                        t1 = t;
                        drop = Some(k);
                    }
                }
            }
            let za = z.dot(&a_p);
            let slack = dot(&rows[pc], &x) - rhs[pc];
            let t2 = if za > 1e-14 * norms[pc] * norms[pc] { -slack / za } else { f64::INFINITY };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpError::Infeasible);
            }
            for k in 0..q {
                u_plus[k] -= t * rv[k];
            }
            u_plus[q] += t;
            if t2.is_finite() {
                for (xi, zi) in x.iter_mut().zip(z.iter()) {
                    *xi += t * zi;
                }
            }
            if t2 <= t1 {
                add_constraint(&mut jm, &mut r, d, q, n);
                active.push(pc);
                duals = u_plus;
                break;
            }
            let l = drop.expect("partial step drops a constraint");
            drop_constraint(&mut jm, &mut r, l, q, n);
            active.remove(l);
            u_plus.remove(l);
        }
    }
    let mut lam = vec![0.0; m];
    for (j, l) in active.iter().zip(&duals) {
        lam[*j] = l.max(0.0);
    }
    Ok(finish(p, x, lam, iterations, QpMethod::ActiveSet))
}

fn rotate_cols(jm: &mut DMatrix<f64>, a: usize, b: usize, c: f64, s: f64) {
    for i in 0..jm.nrows() {
        let (x, y) = (jm[(i, a)], jm[(i, b)]);
        jm[(i, a)] = c * x + s * y;
        jm[(i, b)] = -s * x + c * y;
    }
}

fn add_constraint(jm: &mut DMatrix<f64>, r: &mut DMatrix<f64>, mut d: DVector<f64>, q: usize, n: usize) {
    for k in (q + 1..n).rev() {
        let (a, b) = (d[k - 1], d[k]);
        if b == 0.0 {
            continue;
        }
        let rho = a.hypot(b);
        let (c, s) = (a / rho, b / rho);
        d[k - 1] = rho;
        d[k] = 0.0;
        rotate_cols(jm, k - 1, k, c, s);
    }
    for i in 0..=q {
        r[(i, q)] = d[i];
    }
}

fn drop_constraint(jm: &mut DMatrix<f64>, r: &mut DMatrix<f64>, l: usize, q: usize, n: usize) {
    for col in l..q - 1 {
        for i in 0..n {
            r[(i, col)] = r[(i, col + 1)];
        }
    }
    for i in 0..n {
        r[(i, q - 1)] = 0.0;
    }
    for k in l..q - 1 {
        let (a, b) = (r[(k, k)], r[(k + 1, k)]);
        if b == 0.0 {
            continue;
        }
        let rho = a.hypot(b);
        let (c, s) = (a / rho, b / rho);
        for col in k..q - 1 {
            let (x, y) = (r[(k, col)], r[(k + 1, col)]);
            r[(k, col)] = c * x + s * y;
            r[(k + 1, col)] = -s * x + c * y;
        }
        rotate_cols(jm, k, k + 1, c, s);
    }
}

/// ADMM on `A u = z, z >= b` followed by an equality-constrained polish on
/// the detected active set.
pub fn operator_splitting(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    let n = p.n();
    let (rows, rhs) = p.inequalities();
    let m = rows.len();
    let a = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
    let g = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 * p.weights[i] } else { 0.0 });
    let qv = DVector::from_fn(n, |k, _| -2.0 * p.weights[k] * p.target[k]);
    let b = DVector::from_column_slice(&rhs);
    let (rho, sigma, relax) = (0.1, 1e-6, 1.6);
    let k = &g + DMatrix::identity(n, n) * sigma + a.transpose() * &a * rho;
    let chol = k.cholesky().expect("ADMM system is positive definite");
    let mut x = DVector::from_column_slice(&p.target);
    let mut z = &a * &x;
    let mut y = DVector::<f64>::zeros(m);
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let rhs_x = &x * sigma - &qv + a.transpose() * (&z * rho - &y);
        let xt = chol.solve(&rhs_x);
        let zt = &a * &xt;
        x = &xt * relax + &x * (1.0 - relax);
        let zr = &zt * relax + &z * (1.0 - relax);
        let mut zn = &zr + &y / rho;
        for i in 0..m {
            zn[i] = zn[i].max(b[i]);
        }
        y += (&zr - &zn) * rho;
        z = zn;
        let prim = (&a * &x - &z).amax();
        let dual = (&g * &x + &qv + a.transpose() * &y).amax();
        if prim < 1e-2 * tol && dual < 1e-2 * tol {
            break;
        }
    }
    // Polish: equality-constrained minimum on rows with negative ADMM duals.
    let act: Vec<usize> = (0..m).filter(|&i| y[i] < -1e-9 || (a.row(i) * &x)[0] - b[i] < 1e-9).collect();
    let mut best_u: Vec<f64> = x.iter().copied().collect();
    let mut best_l: Vec<f64> = y.iter().map(|v| (-v).max(0.0)).collect();
    if !act.is_empty() {
        let na = act.len();
        let mut kkt = DMatrix::<f64>::zeros(n + na, n + na);
        let mut rv = DVector::<f64>::zeros(n + na);
        kkt.view_mut((0, 0), (n, n)).copy_from(&g);
        for (c, &i) in act.iter().enumerate() {
            for j in 0..n {
                kkt[(j, n + c)] = -a[(i, j)];
                kkt[(n + c, j)] = a[(i, j)];
            }
            rv[n + c] = b[i];
        }
        for j in 0..n {
            rv[j] = -qv[j];
        }
        if let Ok(sol) = kkt.svd(true, true).solve(&rv, 1e-12) {
            let u: Vec<f64> = sol.rows(0, n).iter().copied().collect();
            let mut lam = vec![0.0; m];
            for (c, &i) in act.iter().enumerate() {
                lam[i] = sol[n + c];
            }
            if kkt_residual(p, &u, &lam) < kkt_residual(p, &best_u, &best_l) {
                best_u = u;
                best_l = lam;
            }
        }
    } else {
        best_u = p.target.clone();
        best_l = vec![0.0; m];
    }
    let s = finish(p, best_u, best_l, iterations, QpMethod::OperatorSplitting);
    if s.u.iter().any(|v| !v.is_finite()) {
        return Err(QpError::NotConverged { iterations, residual: f64::INFINITY });
    }
    Ok(s)
}
