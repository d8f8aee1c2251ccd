//! The graph-attention certificate network and the residual policy network.

mod checkpoint;
mod params;

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::dynamics::{DynamicsModel, ModelKind};
use crate::error::{Error, Result};
use crate::world::GraphSnapshot;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use params::{Mlp, OutputInit, ParamStore};

/// Layer widths of the backbone and heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Widths {
    pub encoder_hidden: usize,
    pub encoder_out: usize,
    pub gate_hidden: usize,
    pub value_hidden: usize,
    pub value_out: usize,
    pub head_hidden: [usize; 3],
}

impl Widths {
    pub const FULL: Widths = Widths {
        encoder_hidden: 2048,
        encoder_out: 256,
        gate_hidden: 128,
        value_hidden: 2048,
        value_out: 1024,
        head_hidden: [512, 128, 32],
    };

    /// Every width multiplied by `scale` and rounded, at least one unit.
    pub fn scaled(scale: f64) -> Result<Widths> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::Config(format!("width scale must be in (0, 1], got {scale}")));
        }
        let s = |w: usize| ((w as f64 * scale).round() as usize).max(1);
        let f = Widths::FULL;
        Ok(Widths {
            encoder_hidden: s(f.encoder_hidden),
            encoder_out: s(f.encoder_out),
            gate_hidden: s(f.gate_hidden),
            value_hidden: s(f.value_hidden),
            value_out: s(f.value_out),
            head_hidden: f.head_hidden.map(|w| s(w).max(16)),
        })
    }
}

/// Edge inputs `[feature, node_type]` grouped by destination agent.
#[derive(Clone, Debug)]
pub struct EdgeBatch {
    pub inputs: Tensor,
    pub segments: Rc<[usize]>,
    pub n_agents: usize,
}

impl EdgeBatch {
    fn from_edges<'a>(edges: impl Iterator<Item = &'a crate::world::Edge>, width: usize, n_agents: usize, remap: Option<usize>) -> Self {
        let mut data = Vec::new();
        let mut segs = Vec::new();
        for e in edges {
            data.extend_from_slice(&e.feature);
            data.push(e.node_type());
            segs.push(if remap.is_some() { 0 } else { e.dst });
        }
        let rows = segs.len();
        EdgeBatch { inputs: Tensor::matrix(rows, width, data), segments: Rc::from(segs), n_agents }
    }

    /// Every edge of the graph.
    pub fn from_graph(graph: &GraphSnapshot) -> Self {
        let width = graph.model().edge_dim() + 1;
        Self::from_edges(graph.edges().iter(), width, graph.n_agents(), None)
    }

    /// Only agent `i`'s in-edges, as a single-agent batch.
    pub fn for_agent(graph: &GraphSnapshot, i: usize) -> Self {
        let width = graph.model().edge_dim() + 1;
        Self::from_edges(graph.edges_of(i).iter(), width, 1, Some(i))
    }

    pub fn n_edges(&self) -> usize {
        self.segments.len()
    }
}

/// The shared encoder / gate / value stack producing one aggregated feature per agent.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    encoder: Mlp,
    gate: Mlp,
    value: Mlp,
}

impl Backbone {
    fn new(store: &mut ParamStore, prefix: &str, in_dim: usize, w: &Widths, rng: &mut ChaCha8Rng) -> Self {
        let encoder = Mlp::new(
            store,
            &format!("{prefix}.encoder"),
            &[in_dim, w.encoder_hidden, w.encoder_hidden, w.encoder_out],
            rng,
            OutputInit::Kaiming,
        );
        let gate = Mlp::new(
            store,
            &format!("{prefix}.gate"),
            &[w.encoder_out, w.gate_hidden, w.gate_hidden, 1],
            rng,
            OutputInit::Default,
        );
        let value = Mlp::new(
            store,
            &format!("{prefix}.value"),
            &[w.encoder_out, w.value_hidden, w.value_hidden, w.value_out],
            rng,
            OutputInit::Kaiming,
        );
        Backbone { encoder, gate, value }
    }

    pub fn feature_dim(&self) -> usize {
        self.value.out_dim()
    }

    /// `(aggregate [n, F], attention [E, 1])`.
    fn forward<'t>(&self, vars: &[Var<'t>], edges: Var<'t>, segments: &Rc<[usize]>, n: usize) -> (Var<'t>, Var<'t>) {
        let tape = edges.tape();
        if segments.is_empty() {
            return (
                tape.constant(Tensor::zeros(&[n, self.feature_dim()])),
                tape.constant(Tensor::zeros(&[0, 1])),
            );
        }
        let q = self.encoder.forward(vars, edges);
        let attention = self.gate.forward(vars, q).segment_softmax(segments.clone());
        let values = self.value.forward(vars, q);
        (values.mul(&attention).segment_sum(segments.clone(), n), attention)
    }
}

/// The certificate `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct GcbfNet {
    pub model: ModelKind,
    pub widths: Widths,
    pub params: ParamStore,
    backbone: Backbone,
    head: Mlp,
}

/// Output of a batched certificate forward pass.
pub struct GcbfOutput<'t> {
    /// `[n, 1]`
    pub h: Var<'t>,
    /// `[E, 1]`, softmax within each agent's in-edges.
    pub attention: Var<'t>,
}

impl GcbfNet {
    fn new(model: ModelKind, widths: Widths, rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParamStore::default();
        let backbone = Backbone::new(&mut params, "h", model.edge_dim() + 1, &widths, rng);
        let h = widths.head_hidden;
        let head = Mlp::new(&mut params, "h.head", &[widths.value_out, h[0], h[1], h[2], 1], rng, OutputInit::Default);
        GcbfNet { model, widths, params, backbone, head }
    }

    /// Batched forward with parameters already bound on the tape.
    pub fn forward<'t>(&self, vars: &[Var<'t>], edges: Var<'t>, segments: &Rc<[usize]>, n: usize) -> GcbfOutput<'t> {
        let (agg, attention) = self.backbone.forward(vars, edges, segments, n);
        GcbfOutput { h: self.head.forward(vars, agg), attention }
    }

    /// Slot indices of the head's output layer.
    pub fn head_output_slots(&self) -> (usize, usize) {
        (self.head.output_weight(), self.head.output_bias())
    }

    /// Certificate value of every agent.
    pub fn eval(&self, graph: &GraphSnapshot) -> Vec<f64> {
        self.eval_batch(&EdgeBatch::from_graph(graph))
    }

    pub fn eval_batch(&self, batch: &EdgeBatch) -> Vec<f64> {
        let tape = Tape::new();
        let vars = self.params.bind(&tape, false);
        let e = tape.constant(batch.inputs.clone());
        self.forward(&vars, e, &batch.segments, batch.n_agents).h.value().data().to_vec()
    }

    /// `(h_i, attention over agent i's in-edges)` from agent `i`'s edges only.
    pub fn eval_agent(&self, graph: &GraphSnapshot, i: usize) -> (f64, Vec<f64>) {
        let batch = EdgeBatch::for_agent(graph, i);
        let tape = Tape::new();
        let vars = self.params.bind(&tape, false);
        let e = tape.constant(batch.inputs.clone());
        let out = self.forward(&vars, e, &batch.segments, 1);
        (out.h.item(), out.attention.value().data().to_vec())
    }
}

/// The residual controller `u = clamp(head(aggregate, u_nom) + u_nom)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    pub model: ModelKind,
    pub widths: Widths,
    pub params: ParamStore,
    pub control_bound: f64,
    backbone: Backbone,
    head: Mlp,
}

impl PolicyNet {
    fn new(model: ModelKind, widths: Widths, rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParamStore::default();
        let backbone = Backbone::new(&mut params, "pi", model.edge_dim() + 1, &widths, rng);
        let h = widths.head_hidden;
        let m = model.control_dim();
        let head = Mlp::new(&mut params, "pi.head", &[widths.value_out + m, h[0], h[1], h[2], m], rng, OutputInit::Zero);
        PolicyNet { model, widths, params, control_bound: DynamicsModel::new(model).control_bound, backbone, head }
    }

    /// Batched forward; `u_nom` is `[n, control_dim]`.
    pub fn forward<'t>(&self, vars: &[Var<'t>], edges: Var<'t>, segments: &Rc<[usize]>, n: usize, u_nom: Var<'t>) -> Var<'t> {
        let tape = edges.tape();
        let (agg, _) = self.backbone.forward(vars, edges, segments, n);
        let inp = tape.concat(&[agg, u_nom], 1);
        let b = self.control_bound;
        self.head.forward(vars, inp).add(&u_nom).clamp(-b, b)
    }

    pub fn eval(&self, graph: &GraphSnapshot, u_nom: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.eval_batch(&EdgeBatch::from_graph(graph), u_nom)
    }

    pub fn eval_batch(&self, batch: &EdgeBatch, u_nom: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let m = self.model.control_dim();
        let tape = Tape::new();
        let vars = self.params.bind(&tape, false);
        let e = tape.constant(batch.inputs.clone());
        let un = tape.constant(Tensor::matrix(u_nom.len(), m, u_nom.concat()));
        let out = self.forward(&vars, e, &batch.segments, batch.n_agents, un).value();
        out.data().chunks(m).map(<[f64]>::to_vec).collect()
    }

    /// Agent `i`'s control from its own edges only.
    pub fn eval_agent(&self, graph: &GraphSnapshot, i: usize, u_nom: &[f64]) -> Vec<f64> {
        self.eval_batch(&EdgeBatch::for_agent(graph, i), &[u_nom.to_vec()]).remove(0)
    }

    /// Slot indices of the head's output layer.
    pub fn head_output_slots(&self) -> (usize, usize) {
        (self.head.output_weight(), self.head.output_bias())
    }
}

/// Fresh networks for `model`, deterministic in `seed`.
pub fn init(model: ModelKind, seed: u64, scale: f64) -> Result<(GcbfNet, PolicyNet)> {
    let widths = Widths::scaled(scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = GcbfNet::new(model, widths, &mut rng);
    let pi = PolicyNet::new(model, widths, &mut rng);
    Ok((h, pi))
}
