//! Minimal reverse-mode automatic differentiation.
//!
//! Operations are recorded on a [`Tape`] as they run (define-by-run) and a
//! single [`Tape::backward`] call walks the record in reverse. Everything is
//! `f64` and single-threaded; one tape per worker.

mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[allow(unused_imports)]
pub(crate) use tensor::gemm;

/// Maximum relative error between analytic gradients and central differences.
///
/// Returns `max_c |ad_c - fd_c| / (|fd_c| + 1e-8)` over the coordinates in
/// `coords` (all coordinates when `None`).
pub fn grad_check_with<V, G>(
    value: V,
    value_and_grad: G,
    theta: &[f64],
    h: f64,
    coords: Option<&[usize]>,
) -> f64
where
    V: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, ad) = value_and_grad(theta);
    assert_eq!(ad.len(), theta.len(), "gradient length mismatch");
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..theta.len()).collect();
            &all
        }
    };
    let mut probe = theta.to_vec();
    let mut worst: f64 = 0.0;
    for &c in coords {
        let orig = probe[c];
        probe[c] = orig + h;
        let fp = value(&probe);
        probe[c] = orig - h;
        let fm = value(&probe);
        probe[c] = orig;
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((ad[c] - fd).abs() / (fd.abs() + 1e-8));
    }
    worst
}

/// [`grad_check_with`] for a scalar function written against the tape.
pub fn grad_check<F>(f: F, theta: &Tensor, h: f64) -> f64
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>,
{
    let shape = theta.shape().to_vec();
    let value = |x: &[f64]| {
        let tape = Tape::new();
        let p = tape.constant(Tensor::new(shape.clone(), x.to_vec()));
        f(&tape, p).item()
    };
    let value_and_grad = |x: &[f64]| {
        let tape = Tape::new();
        let p = tape.param(Tensor::new(shape.clone(), x.to_vec()));
        let loss = f(&tape, p);
        let v = loss.item();
        let g = tape.backward(loss).expect("scalar loss");
        (v, g.wrt(&p).into_data())
    };
    grad_check_with(value, value_and_grad, theta.data(), h, None)
}
