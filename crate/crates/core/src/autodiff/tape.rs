use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Per-row Jacobians of a [`Tape::row_map`] node, stored `[rows][out][in]`.
struct RowJacobians {
    out_cols: usize,
    in_cols: usize,
    data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Bcast {
    None,
    /// Right operand is a `[1, n]` row repeated over every row.
    Row,
    /// Right operand is a `[m, 1]` column repeated over every column.
    Col,
    /// Right operand is a single element.
    Scalar,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize, Bcast),
    Sub(usize, usize),
    Mul(usize, usize, Bcast),
    Scale(usize, f64),
    Shift(usize),
    Relu(usize),
    Softmax(usize, usize),
    SegmentSoftmax(usize, Rc<[usize]>),
    Sum(usize, Option<usize>),
    Concat(Vec<usize>, usize),
    Slice(usize, usize, usize),
    Gather(usize, Rc<[usize]>),
    SegmentSum(usize, Rc<[usize]>),
    RowNorm(usize),
    Clamp(usize, f64, f64),
    RowMap(usize, RowJacobians),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Define-by-run recording of tensor operations.
///
/// A tape supports one backward pass; call [`Tape::reset`] to reuse it.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by recorded node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when the loss does not depend on it.
    pub fn wrt(&self, v: &Var<'_>) -> Tensor {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.id]),
        }
    }

    pub fn take(&mut self, v: &Var<'_>) -> Tensor {
        self.grads[v.id]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.id]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop every recorded node so the tape can be reused.
    pub fn reset(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.clear();
        inner.consumed = false;
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.inner.borrow().nodes[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, false)
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let mut inner = self.inner.borrow_mut();
        if inner.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        if inner.consumed {
            return Err(Error::TapeConsumed);
        }
        let loss_shape = inner.nodes[loss.id].value.shape().to_vec();
        if inner.nodes[loss.id].value.numel() != 1 {
            return Err(Error::NotScalar(loss_shape));
        }
        inner.consumed = true;
        let nodes = &inner.nodes;
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        let mut seed = Tensor::zeros(&loss_shape);
        seed.fill(1.0);
        grads[loss.id] = Some(seed);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    /// Apply a function independently to every row of `x`.
    ///
    /// `f(row_index, row) -> (output_row, jacobian)` where the Jacobian is
    /// `out_cols x in_cols`, row-major.
    pub fn row_map<'t, F>(&'t self, x: Var<'t>, out_cols: usize, mut f: F) -> Var<'t>
    where
        F: FnMut(usize, &[f64]) -> (Vec<f64>, Vec<f64>),
    {
        let xv = self.value_of(x.id);
        let (rows, in_cols) = xv.dims2();
        let mut out = Vec::with_capacity(rows * out_cols);
        let mut jac = Vec::with_capacity(rows * out_cols * in_cols);
        for r in 0..rows {
            let (o, j) = f(r, xv.row_slice(r));
            assert_eq!(o.len(), out_cols, "row_map output width mismatch");
            assert_eq!(j.len(), out_cols * in_cols, "row_map jacobian size mismatch");
            out.extend_from_slice(&o);
            jac.extend_from_slice(&j);
        }
        let rg = self.needs(x.id);
        self.push(
            Tensor::matrix(rows, out_cols, out),
            Op::RowMap(
                x.id,
                RowJacobians {
                    out_cols,
                    in_cols,
                    data: jac,
                },
            ),
            rg,
        )
    }

    /// Concatenate along `axis` (0 = rows, 1 = columns).
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of nothing");
        assert!(axis < 2, "concat axis {axis} unsupported");
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|p| self.value_of(p.id)).collect();
        let out = if axis == 0 {
            let cols = vals[0].cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for v in &vals {
                assert_eq!(v.cols(), cols, "concat rows: column mismatch");
                rows += v.rows();
                data.extend_from_slice(v.data());
            }
            Tensor::matrix(rows, cols, data)
        } else {
            let rows = vals[0].rows();
            let total: usize = vals.iter().map(|v| v.cols()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for v in &vals {
                    assert_eq!(v.rows(), rows, "concat cols: row mismatch");
                    data.extend_from_slice(v.row_slice(r));
                }
            }
            Tensor::matrix(rows, total, data)
        };
        let rg = parts.iter().any(|p| self.needs(p.id));
        self.push(out, Op::Concat(parts.iter().map(|p| p.id).collect(), axis), rg)
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.needs(self.id)
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: &Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    /// Matrix product `[m, k] x [k, n]`.
    pub fn matmul(&self, other: &Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        let (m, k) = a.dims2();
        let (k2, n) = b.dims2();
        assert_eq!(k, k2, "matmul shape mismatch {:?} x {:?}", a.shape(), b.shape());
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut c);
        self.binary(other, Tensor::matrix(m, n, c), Op::MatMul(self.id, other.id))
    }

    fn broadcast_kind(a: &Tensor, b: &Tensor) -> Bcast {
        let (ar, ac) = a.dims2();
        let (br, bc) = b.dims2();
        if (ar, ac) == (br, bc) {
            Bcast::None
        } else if br == 1 && bc == 1 {
            Bcast::Scalar
        } else if br == 1 && bc == ac {
            Bcast::Row
        } else if bc == 1 && br == ar {
            Bcast::Col
        } else {
            panic!("incompatible shapes {:?} and {:?}", a.shape(), b.shape());
        }
    }

    fn zip_with(a: &Tensor, b: &Tensor, kind: Bcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (rows, cols) = a.dims2();
        let (ad, bd) = (a.data(), b.data());
        let data = match kind {
            Bcast::None => ad.iter().zip(bd).map(|(x, y)| f(*x, *y)).collect(),
            Bcast::Scalar => ad.iter().map(|x| f(*x, bd[0])).collect(),
            Bcast::Row => ad
                .iter()
                .enumerate()
                .map(|(i, x)| f(*x, bd[i % cols]))
                .collect(),
            Bcast::Col => ad
                .iter()
                .enumerate()
                .map(|(i, x)| f(*x, bd[i / cols]))
                .collect(),
        };
        let shape = if a.shape().len() == 2 {
            a.shape().to_vec()
        } else {
            vec![rows, cols]
        };
        Tensor::new(shape, data)
    }

    /// Elementwise sum; `other` may be a matching tensor, a `[1, n]` row,
    /// a `[m, 1]` column or a single element.
    pub fn add(&self, other: &Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        let kind = Self::broadcast_kind(&a, &b);
        let out = Self::zip_with(&a, &b, kind, |x, y| x + y);
        self.binary(other, out, Op::Add(self.id, other.id, kind))
    }

    pub fn sub(&self, other: &Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.dims2(), b.dims2(), "sub shape mismatch");
        let out = Self::zip_with(&a, &b, Bcast::None, |x, y| x - y);
        self.binary(other, out, Op::Sub(self.id, other.id))
    }

    /// Elementwise product with the same broadcasting rules as [`Var::add`].
    pub fn mul(&self, other: &Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        let kind = Self::broadcast_kind(&a, &b);
        let out = Self::zip_with(&a, &b, kind, |x, y| x * y);
        self.binary(other, out, Op::Mul(self.id, other.id, kind))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let a = self.value();
        let data = a.data().iter().map(|x| x * c).collect();
        self.unary(Tensor::new(a.shape().to_vec(), data), Op::Scale(self.id, c))
    }

    /// Add a constant to every element.
    pub fn shift(&self, c: f64) -> Var<'t> {
        let a = self.value();
        let data = a.data().iter().map(|x| x + c).collect();
        self.unary(Tensor::new(a.shape().to_vec(), data), Op::Shift(self.id))
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// `max(x, 0)`; the subgradient at exactly zero is zero.
    pub fn relu(&self) -> Var<'t> {
        let a = self.value();
        let data = a.data().iter().map(|x| if *x < 0.0 { 0.0 } else { *x }).collect();
        self.unary(Tensor::new(a.shape().to_vec(), data), Op::Relu(self.id))
    }

    /// Alias of [`Var::relu`], reads better for hinge terms.
    pub fn max0(&self) -> Var<'t> {
        self.relu()
    }

    /// Softmax along `axis` of a rank-2 view.
    pub fn softmax(&self, axis: usize) -> Var<'t> {
        assert!(axis < 2, "softmax axis {axis} unsupported");
        let a = self.value();
        let (rows, cols) = a.dims2();
        let mut out = vec![0.0; rows * cols];
        let (outer, inner, stride_o, stride_i) = if axis == 1 {
            (rows, cols, cols, 1)
        } else {
            (cols, rows, 1, cols)
        };
        for o in 0..outer {
            let idx = |i: usize| o * stride_o + i * stride_i;
            let mx = (0..inner).map(|i| a.data()[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for i in 0..inner {
                let e = (a.data()[idx(i)] - mx).exp();
                out[idx(i)] = e;
                z += e;
            }
            for i in 0..inner {
                out[idx(i)] /= z;
            }
        }
        self.unary(Tensor::matrix(rows, cols, out), Op::Softmax(self.id, axis))
    }

    /// Softmax of a `[E, 1]` column within groups of rows sharing a segment id.
    pub fn segment_softmax(&self, segments: Rc<[usize]>) -> Var<'t> {
        let a = self.value();
        assert_eq!(a.cols(), 1, "segment_softmax expects a column");
        assert_eq!(a.rows(), segments.len(), "segment ids length mismatch");
        let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
        let mut mx = vec![f64::NEG_INFINITY; n_seg];
        for (x, &s) in a.data().iter().zip(segments.iter()) {
            mx[s] = mx[s].max(*x);
        }
        let mut z = vec![0.0; n_seg];
        let mut out: Vec<f64> = a
            .data()
            .iter()
            .zip(segments.iter())
            .map(|(x, &s)| {
                let e = (x - mx[s]).exp();
                z[s] += e;
                e
            })
            .collect();
        for (o, &s) in out.iter_mut().zip(segments.iter()) {
            *o /= z[s];
        }
        self.unary(
            Tensor::matrix(segments.len(), 1, out),
            Op::SegmentSoftmax(self.id, segments),
        )
    }

    /// Sum over `axis`, or over everything when `None` (result `[1, 1]`).
    pub fn sum(&self, axis: Option<usize>) -> Var<'t> {
        let a = self.value();
        let (rows, cols) = a.dims2();
        let out = match axis {
            None => Tensor::matrix(1, 1, vec![a.data().iter().sum()]),
            Some(0) => {
                let mut s = vec![0.0; cols];
                for r in 0..rows {
                    for (acc, v) in s.iter_mut().zip(a.row_slice(r)) {
                        *acc += v;
                    }
                }
                Tensor::matrix(1, cols, s)
            }
            Some(1) => {
                Tensor::matrix(rows, 1, (0..rows).map(|r| a.row_slice(r).iter().sum()).collect())
            }
            Some(ax) => panic!("sum axis {ax} unsupported"),
        };
        self.unary(out, Op::Sum(self.id, axis))
    }

    /// Mean of all elements as a `[1, 1]` value.
    pub fn mean(&self) -> Var<'t> {
        let n = self.value().numel().max(1);
        self.sum(None).scale(1.0 / n as f64)
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&self, start: usize, len: usize) -> Var<'t> {
        let a = self.value();
        let (rows, cols) = a.dims2();
        assert!(start + len <= cols, "slice {start}+{len} beyond {cols} columns");
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&a.row_slice(r)[start..start + len]);
        }
        self.unary(Tensor::matrix(rows, len, data), Op::Slice(self.id, start, len))
    }

    /// Rows picked by `idx` (repeats allowed).
    pub fn gather_rows(&self, idx: Rc<[usize]>) -> Var<'t> {
        let a = self.value();
        let (rows, cols) = a.dims2();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx.iter() {
            assert!(i < rows, "gather index {i} out of {rows} rows");
            data.extend_from_slice(a.row_slice(i));
        }
        self.unary(Tensor::matrix(idx.len(), cols, data), Op::Gather(self.id, idx))
    }

    /// Scatter-add rows into `n_segments` output rows; empty segments are zero.
    pub fn segment_sum(&self, segments: Rc<[usize]>, n_segments: usize) -> Var<'t> {
        let a = self.value();
        let (rows, cols) = a.dims2();
        assert_eq!(rows, segments.len(), "segment ids length mismatch");
        let mut out = vec![0.0; n_segments * cols];
        for (r, &s) in segments.iter().enumerate() {
            assert!(s < n_segments, "segment id {s} out of range");
            for (o, v) in out[s * cols..(s + 1) * cols].iter_mut().zip(a.row_slice(r)) {
                *o += v;
            }
        }
        self.unary(
            Tensor::matrix(n_segments, cols, out),
            Op::SegmentSum(self.id, segments),
        )
    }

    /// Euclidean norm of each row, `[m, 1]`. Gradient at a zero row is zero.
    pub fn norm2(&self) -> Var<'t> {
        let a = self.value();
        let rows = a.rows();
        let data = (0..rows)
            .map(|r| a.row_slice(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        self.unary(Tensor::matrix(rows, 1, data), Op::RowNorm(self.id))
    }

    /// Elementwise clamp; gradient passes only strictly inside the bounds.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        let a = self.value();
        let data = a.data().iter().map(|x| x.clamp(lo, hi)).collect();
        self.unary(Tensor::new(a.shape().to_vec(), data), Op::Clamp(self.id, lo, hi))
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn reduce_broadcast(g: &Tensor, target: &Tensor, kind: Bcast) -> Tensor {
    let (rows, cols) = g.dims2();
    let data = match kind {
        Bcast::None => g.data().to_vec(),
        Bcast::Scalar => vec![g.data().iter().sum()],
        Bcast::Row => {
            let mut s = vec![0.0; cols];
            for r in 0..rows {
                for (acc, v) in s.iter_mut().zip(g.row_slice(r)) {
                    *acc += v;
                }
            }
            s
        }
        Bcast::Col => (0..rows).map(|r| g.row_slice(r).iter().sum()).collect(),
    };
    Tensor::new(target.shape().to_vec(), data)
}

fn backprop(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let needs = |p: usize| nodes[p].requires_grad;
    let val = |p: usize| &nodes[p].value;
    let out = &nodes[id].value;
    let like = |p: usize, data: Vec<f64>| Tensor::new(val(p).shape().to_vec(), data);
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k) = av.dims2();
            let n = bv.cols();
            if needs(*a) {
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, bv.data(), true, 0.0, &mut da);
                accumulate(grads, *a, like(*a, da));
            }
            if needs(*b) {
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, av.data(), true, g.data(), false, 0.0, &mut db);
                accumulate(grads, *b, like(*b, db));
            }
        }
        Op::Add(a, b, kind) => {
            if needs(*a) {
                accumulate(grads, *a, like(*a, g.data().to_vec()));
            }
            if needs(*b) {
                accumulate(grads, *b, reduce_broadcast(g, val(*b), *kind));
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, like(*a, g.data().to_vec()));
            }
            if needs(*b) {
                accumulate(grads, *b, like(*b, g.data().iter().map(|x| -x).collect()));
            }
        }
        Op::Mul(a, b, kind) => {
            let (av, bv) = (val(*a), val(*b));
            let cols = av.cols();
            let bd = bv.data();
            let b_at = |i: usize| match kind {
                Bcast::None => bd[i],
                Bcast::Scalar => bd[0],
                Bcast::Row => bd[i % cols],
                Bcast::Col => bd[i / cols],
            };
            if needs(*a) {
                let da = g.data().iter().enumerate().map(|(i, x)| x * b_at(i)).collect();
                accumulate(grads, *a, like(*a, da));
            }
            if needs(*b) {
                let prod: Vec<f64> =
                    g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                let full = Tensor::new(g.shape().to_vec(), prod);
                accumulate(grads, *b, reduce_broadcast(&full, bv, *kind));
            }
        }
        Op::Scale(a, c) => {
            if needs(*a) {
                accumulate(grads, *a, like(*a, g.data().iter().map(|x| x * c).collect()));
            }
        }
        Op::Shift(a) => {
            if needs(*a) {
                accumulate(grads, *a, like(*a, g.data().to_vec()));
            }
        }
        Op::Relu(a) => {
            if needs(*a) {
                let da = g
                    .data()
                    .iter()
                    .zip(val(*a).data())
                    .map(|(x, v)| if *v > 0.0 { *x } else { 0.0 })
                    .collect();
                accumulate(grads, *a, like(*a, da));
            }
        }
        Op::Softmax(a, axis) => {
            if needs(*a) {
                let (rows, cols) = out.dims2();
                let (outer, inner, so, si) = if *axis == 1 {
                    (rows, cols, cols, 1)
                } else {
                    (cols, rows, 1, cols)
                };
                let y = out.data();
                let mut da = vec![0.0; rows * cols];
                for o in 0..outer {
                    let idx = |i: usize| o * so + i * si;
                    let dot: f64 = (0..inner).map(|i| y[idx(i)] * g.data()[idx(i)]).sum();
                    for i in 0..inner {
                        da[idx(i)] = y[idx(i)] * (g.data()[idx(i)] - dot);
                    }
                }
                accumulate(grads, *a, like(*a, da));
            }
        }
        Op::SegmentSoftmax(a, segs) => {
            if needs(*a) {
                let y = out.data();
                let n_seg = segs.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; n_seg];
                for ((yi, gi), &s) in y.iter().zip(g.data()).zip(segs.iter()) {
                    dot[s] += yi * gi;
                }
                let da = y
                    .iter()
                    .zip(g.data())
                    .zip(segs.iter())
                    .map(|((yi, gi), &s)| yi * (gi - dot[s]))
                    .collect();
                accumulate(grads, *a, like(*a, da));
            }
        }
        Op::Sum(a, axis) => {
            if needs(*a) {
                let av = val(*a);
                let (rows, cols) = av.dims2();
                let da = match axis {
                    None => vec![g.data()[0]; rows * cols],
                    Some(0) => (0..rows * cols).map(|i| g.data()[i % cols]).collect(),
                    _ => (0..rows * cols).map(|i| g.data()[i / cols]).collect(),
                };
                accumulate(grads, *a, like(*a, da));
            }
        }
        Op::Concat(parts, axis) => {
            let mut offset = 0;
            for &p in parts {
                let pv = val(p);
                let (pr, pc) = pv.dims2();
                if needs(p) {
                    let mut d = Vec::with_capacity(pr * pc);
                    if *axis == 0 {
                        d.extend_from_slice(&g.data()[offset * pc..(offset + pr) * pc]);
                    } else {
                        for r in 0..pr {
                            d.extend_from_slice(&g.row_slice(r)[offset..offset + pc]);
                        }
                    }
                    accumulate(grads, p, like(p, d));
                }
                offset += if *axis == 0 { pr } else { pc };
            }
        }
        Op::Slice(a, start, len) => {
            if needs(*a) {
                let (rows, cols) = val(*a).dims2();
                let mut da = vec![0.0; rows * cols];
                for r in 0..rows {
                    da[r * cols + start..r * cols + start + len].copy_from_slice(g.row_slice(r));
                }
                accumulate(grads, *a, like(*a, da));
            }
        }
        Op::Gather(a, idx) => {
            if needs(*a) {
                let (rows, cols) = val(*a).dims2();
                let mut da = vec![0.0; rows * cols];
                for (r, &i) in idx.iter().enumerate() {
                    for (d, v) in da[i * cols..(i + 1) * cols].iter_mut().zip(g.row_slice(r)) {
                        *d += v;
                    }
                }
                accumulate(grads, *a, like(*a, da));
            }
        }
        Op::SegmentSum(a, segs) => {
            if needs(*a) {
                let cols = g.cols();
                let mut da = Vec::with_capacity(segs.len() * cols);
                for &s in segs.iter() {
                    da.extend_from_slice(g.row_slice(s));
                }
                accumulate(grads, *a, like(*a, da));
            }
        }
        Op::RowNorm(a) => {
            if needs(*a) {
                let av = val(*a);
                let (rows, cols) = av.dims2();
                let mut da = vec![0.0; rows * cols];
                for r in 0..rows {
                    let n = out.data()[r];
                    if n > 0.0 {
                        for c in 0..cols {
                            da[r * cols + c] = g.data()[r] * av.data()[r * cols + c] / n;
                        }
                    }
                }
                accumulate(grads, *a, like(*a, da));
            }
        }
        Op::Clamp(a, lo, hi) => {
            if needs(*a) {
                let da = g
                    .data()
                    .iter()
                    .zip(val(*a).data())
                    .map(|(x, v)| if *v > *lo && *v < *hi { *x } else { 0.0 })
                    .collect();
                accumulate(grads, *a, like(*a, da));
            }
        }
        Op::RowMap(a, jac) => {
            if needs(*a) {
                let rows = out.rows();
                let (oc, ic) = (jac.out_cols, jac.in_cols);
                let mut da = vec![0.0; rows * ic];
                for r in 0..rows {
                    let j = &jac.data[r * oc * ic..(r + 1) * oc * ic];
                    let gr = g.row_slice(r);
                    for o in 0..oc {
                        let go = gr[o];
                        if go == 0.0 {
                            continue;
                        }
                        for i in 0..ic {
                            da[r * ic + i] += go * j[o * ic + i];
                        }
                    }
                }
                accumulate(grads, *a, like(*a, da));
            }
        }
    }
}
