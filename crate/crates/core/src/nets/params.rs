use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};

/// Named parameter tensors of one network.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub(crate) fn push(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    /// Every parameter concatenated in slot order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Inverse of [`ParamStore::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.numel(), "flat parameter length mismatch");
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// Record every slot on `tape`, as trainable leaves or as constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.tensors
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }
}

/// Fully connected ReLU network; the last layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    /// `(weight slot, bias slot)` per layer.
    layers: Vec<(usize, usize)>,
    sizes: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputInit {
    /// Uniform in `±1/sqrt(fan_in)`.
    Default,
    Zero,
    /// Kaiming-uniform like the hidden layers, for outputs feeding another network.
    Kaiming,
}

impl Mlp {
    /// Allocate slots `prefix.{k}.w` (`[in, out]`) and `prefix.{k}.b` (`[1, out]`).
    pub(crate) fn new(
        store: &mut ParamStore,
        prefix: &str,
        sizes: &[usize],
        rng: &mut ChaCha8Rng,
        output: OutputInit,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let n_layers = sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let (fan_in, fan_out) = (sizes[k], sizes[k + 1]);
            let last = k + 1 == n_layers;
            let bound = if last && output != OutputInit::Kaiming {
                1.0 / (fan_in as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            let w: Vec<f64> = if last && output == OutputInit::Zero {
                vec![0.0; fan_in * fan_out]
            } else {
                (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect()
            };
            let wi = store.push(format!("{prefix}.{k}.w"), Tensor::matrix(fan_in, fan_out, w));
            let bi = store.push(format!("{prefix}.{k}.b"), Tensor::zeros(&[1, fan_out]));
            layers.push((wi, bi));
        }
        Mlp { layers, sizes: sizes.to_vec() }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn in_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn forward<'t>(&self, vars: &[Var<'t>], x: Var<'t>) -> Var<'t> {
        let mut h = x;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(&vars[w]).add(&vars[b]);
            if k + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        h
    }

    /// Slot index of the last layer's weight.
    pub(crate) fn output_weight(&self) -> usize {
        self.layers.last().unwrap().0
    }

    pub(crate) fn output_bias(&self) -> usize {
        self.layers.last().unwrap().1
    }
}
