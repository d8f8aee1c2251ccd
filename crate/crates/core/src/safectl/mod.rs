//! Runtime switching between the nominal controller and the learned policy,
//! with online refinement of unsafe learned actions.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::dynamics::{DynamicsModel, ModelKind};
use crate::error::{Error, Result};
use crate::nets::{GcbfNet, PolicyNet};
use crate::world::{GraphSnapshot, NodeRef};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub max_iters: usize,
    pub step_size: f64,
    /// Margin `gamma` of the residue.
    pub gamma: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig { max_iters: 30, step_size: 0.3, gamma: 0.02 }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::Config(format!("refinement step size must be positive, got {}", self.step_size)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("refinement margin must be non-negative, got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Nominal,
    Learned,
    Refined,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Nominal => "nominal",
            Mode::Learned => "learned",
            Mode::Refined => "refined",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlDecision {
    pub control: Vec<f64>,
    pub mode: Mode,
    pub h_value: f64,
    /// `hdot` of the returned control under the virtual-step convention.
    pub hdot_value: f64,
}

/// Settings of the runtime controller.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SafetyConfig {
    pub alpha: f64,
    pub dt: f64,
    pub refine: RefineConfig,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        SafetyConfig { alpha: 1.0, dt: crate::dynamics::DT, refine: RefineConfig::default() }
    }
}

/// `hdot + alpha h >= 0`.
pub fn condition_holds(h: f64, hdot: f64, alpha: f64) -> bool {
    hdot + alpha * h >= 0.0
}

/// `max(0, gamma - hdot - alpha h)`.
pub fn residue(h: f64, hdot: f64, alpha: f64, gamma: f64) -> f64 {
    (gamma - hdot - alpha * h).max(0.0)
}

/// One virtual step of agent `i` under its candidate control while every
/// neighbor applies its nominal control. The sensing topology of `graph` is
/// kept and LiDAR hits stay where they are.
struct VirtualStep {
    model: DynamicsModel,
    n: usize,
    /// Embedded next state of each agent under its nominal control.
    nominal_emb: Vec<Vec<f64>>,
    hit_emb: Vec<Vec<f64>>,
    src: Vec<NodeRef>,
    dst: Rc<[usize]>,
    node_type: Tensor,
    h_now: Vec<f64>,
    /// Agents with at least one in-edge.
    sensed: Vec<bool>,
}

impl VirtualStep {
    fn new(h: &GcbfNet, graph: &GraphSnapshot, u_nom: &[Vec<f64>], dt: f64) -> Self {
        let model = *graph.model();
        let nominal_emb = graph
            .states()
            .iter()
            .zip(u_nom)
            .map(|(x, u)| model.embed(&model.step_unchecked(x, u, dt)))
            .collect();
        let hit_emb = graph.hits().iter().map(|hn| model.embed(&model.virtual_state(&hn.position))).collect();
        let edges = graph.edges();
        VirtualStep {
            model,
            n: graph.n_agents(),
            nominal_emb,
            hit_emb,
            src: edges.iter().map(|e| e.src).collect(),
            dst: edges.iter().map(|e| e.dst).collect(),
            node_type: Tensor::column(edges.iter().map(|e| e.node_type()).collect()),
            h_now: h.eval(graph),
            sensed: (0..graph.n_agents()).map(|i| !graph.edges_of(i).is_empty()).collect(),
        }
    }

    /// Next-step certificate values `[n, 1]` as a function of the candidate controls `u`.
    fn h_next<'t>(&self, h: &GcbfNet, vars: &[Var<'t>], states: &[Vec<f64>], u: Var<'t>, dt: f64) -> Var<'t> {
        let tape = u.tape();
        let model = self.model;
        let x_next = tape.row_map(u, model.state_dim(), |r, ur| {
            (model.step_unchecked(&states[r], ur, dt), model.step_control_jacobian(&states[r], ur, dt))
        });
        let own = if model.kind == ModelKind::DubinsCar {
            tape.row_map(x_next, model.edge_dim(), |_, x| (model.embed(x), model.embed_jacobian(x).unwrap()))
        } else {
            x_next
        };
        let d = model.edge_dim();
        if self.dst.is_empty() {
            return h.forward(vars, tape.constant(Tensor::zeros(&[0, d + 1])), &self.dst, self.n).h;
        }
        let src: Vec<f64> = self
            .src
            .iter()
            .flat_map(|s| match *s {
                NodeRef::Agent(j) => self.nominal_emb[j].iter().copied(),
                NodeRef::Hit(k) => self.hit_emb[k].iter().copied(),
            })
            .collect();
        let src = tape.constant(Tensor::matrix(self.src.len(), d, src));
        let feat = src.sub(&own.gather_rows(self.dst.clone()));
        let inp = tape.concat(&[feat, tape.constant(self.node_type.clone())], 1);
        h.forward(vars, inp, &self.dst, self.n).h
    }

    fn controls_tensor(&self, u: &[Vec<f64>]) -> Tensor {
        Tensor::matrix(self.n, self.model.control_dim(), u.iter().flatten().copied().collect())
    }

    /// Detector verdict per agent; nothing sensed means nothing to avoid.
    fn verdicts(&self, hdot: &[f64], alpha: f64) -> Vec<bool> {
        (0..self.n).map(|i| !self.sensed[i] || condition_holds(self.h_now[i], hdot[i], alpha)).collect()
    }

    /// Per-agent `hdot` of the candidate controls.
    fn hdot(&self, h: &GcbfNet, graph: &GraphSnapshot, u: &[Vec<f64>], dt: f64) -> Vec<f64> {
        let tape = Tape::new();
        let vars = h.params.bind(&tape, false);
        let uv = tape.constant(self.controls_tensor(u));
        let next = self.h_next(h, &vars, graph.states(), uv, dt);
        next.value().data().iter().zip(&self.h_now).map(|(a, b)| (a - b) / dt).collect()
    }

    /// Per-agent residues and their gradients with respect to each agent's own control.
    fn residue_and_grad(
        &self,
        h: &GcbfNet,
        graph: &GraphSnapshot,
        u: &[Vec<f64>],
        cfg: &SafetyConfig,
    ) -> (Vec<f64>, Vec<Vec<f64>>) {
        let tape = Tape::new();
        let vars = h.params.bind(&tape, false);
        let uv = tape.param(self.controls_tensor(u));
        let next = self.h_next(h, &vars, graph.states(), uv, cfg.dt);
        let now = tape.constant(Tensor::column(self.h_now.clone()));
        let hdot = next.sub(&now).scale(1.0 / cfg.dt);
        let delta = hdot.add(&now.scale(cfg.alpha)).neg().shift(cfg.refine.gamma).relu();
        let values = delta.value().data().to_vec();
        let grads = tape.backward(delta.sum(None)).expect("residue is a scalar");
        let g = grads.wrt(&uv);
        let m = self.model.control_dim();
        (values, g.data().chunks(m).map(<[f64]>::to_vec).collect())
    }
}

/// Whether each agent's candidate control satisfies `hdot + alpha h >= 0`
/// after one virtual step in which its neighbors apply their nominal controls.
/// Agents that sense nothing always pass.
pub fn check_safe(
    h: &GcbfNet,
    graph: &GraphSnapshot,
    candidates: &[Vec<f64>],
    u_nom: &[Vec<f64>],
    dt: f64,
    alpha: f64,
) -> Vec<bool> {
    let vs = VirtualStep::new(h, graph, u_nom, dt);
    vs.verdicts(&vs.hdot(h, graph, candidates, dt), alpha)
}

/// One descent step on the residue, clamped to `[-bound, bound]`.
fn descend(u: &[f64], grad: &[f64], step_size: f64, bound: f64) -> Vec<f64> {
    u.iter().zip(grad).map(|(a, g)| (a - step_size * g).clamp(-bound, bound)).collect()
}

/// Gradient descent on a residue `f(u) -> (delta, grad)`; returns the best
/// iterate by residue and the number of steps taken.
pub fn refine_with<F>(u: &[f64], cfg: &RefineConfig, bound: f64, mut f: F) -> (Vec<f64>, usize)
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut cur: Vec<f64> = u.iter().map(|v| v.clamp(-bound, bound)).collect();
    let (mut delta, mut grad) = f(&cur);
    let mut best = (cur.clone(), delta);
    let mut iters = 0;
    while delta > 0.0 && iters < cfg.max_iters {
        cur = descend(&cur, &grad, cfg.step_size, bound);
        iters += 1;
        (delta, grad) = f(&cur);
        if delta < best.1 {
            best = (cur.clone(), delta);
        }
    }
    (best.0, iters)
}

/// Refined controls for every agent. Each agent's residue depends only on its
/// own control, so one batched descent equals independent per-agent descents.
pub fn refine(
    h: &GcbfNet,
    graph: &GraphSnapshot,
    u: &[Vec<f64>],
    u_nom: &[Vec<f64>],
    cfg: &SafetyConfig,
) -> Vec<Vec<f64>> {
    let vs = VirtualStep::new(h, graph, u_nom, cfg.dt);
    refine_batch(&vs, h, graph, u, cfg).0
}

/// Returns `(best controls, best residues)`.
fn refine_batch(
    vs: &VirtualStep,
    h: &GcbfNet,
    graph: &GraphSnapshot,
    u: &[Vec<f64>],
    cfg: &SafetyConfig,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let model = graph.model();
    let bound = model.control_bound;
    let mut cur: Vec<Vec<f64>> = u.iter().map(|v| model.clamp_control(v)).collect();
    let (mut delta, mut grad) = vs.residue_and_grad(h, graph, &cur, cfg);
    let mut best = cur.clone();
    let mut best_delta = delta.clone();
    let mut active: Vec<bool> = delta.iter().map(|d| *d > 0.0).collect();
    for _ in 0..cfg.refine.max_iters {
        if !active.iter().any(|a| *a) {
            break;
        }
        for i in 0..cur.len() {
            if active[i] {
                cur[i] = descend(&cur[i], &grad[i], cfg.refine.step_size, bound);
            }
        }
        (delta, grad) = vs.residue_and_grad(h, graph, &cur, cfg);
        for i in 0..cur.len() {
            if !active[i] {
                continue;
            }
            if delta[i] < best_delta[i] {
                best[i] = cur[i].clone();
                best_delta[i] = delta[i];
            }
            active[i] = delta[i] > 0.0;
        }
    }
    (best, best_delta)
}

/// Nominal where it passes the detector, the learned policy otherwise, refined
/// while its residue stays positive.
pub fn select_control(
    h: &GcbfNet,
    pi: &PolicyNet,
    graph: &GraphSnapshot,
    u_nom: &[Vec<f64>],
    cfg: &SafetyConfig,
) -> Vec<ControlDecision> {
    let vs = VirtualStep::new(h, graph, u_nom, cfg.dt);
    let hdot_nom = vs.hdot(h, graph, u_nom, cfg.dt);
    let nominal_ok = vs.verdicts(&hdot_nom, cfg.alpha);
    if nominal_ok.iter().all(|b| *b) {
        return (0..u_nom.len())
            .map(|i| ControlDecision { control: u_nom[i].clone(), mode: Mode::Nominal, h_value: vs.h_now[i], hdot_value: hdot_nom[i] })
            .collect();
    }
    let learned = pi.eval(graph, u_nom);
    // Agents that keep the nominal control enter refinement with zero residue.
    let candidates: Vec<Vec<f64>> =
        (0..u_nom.len()).map(|i| if nominal_ok[i] { u_nom[i].clone() } else { learned[i].clone() }).collect();
    let mut refined = if cfg.refine.max_iters > 0 { refine_batch(&vs, h, graph, &candidates, cfg).0 } else { candidates };
    for i in 0..refined.len() {
        if nominal_ok[i] {
            refined[i] = u_nom[i].clone();
        }
    }
    let hdot = vs.hdot(h, graph, &refined, cfg.dt);
    (0..u_nom.len())
        .map(|i| {
            let mode = if nominal_ok[i] {
                Mode::Nominal
            } else if refined[i] != learned[i] {
                Mode::Refined
            } else {
                Mode::Learned
            };
            ControlDecision { control: refined[i].clone(), mode, h_value: vs.h_now[i], hdot_value: hdot[i] }
        })
        .collect()
}

/// Residue of each agent's control under the virtual-step convention.
pub fn residues(
    h: &GcbfNet,
    graph: &GraphSnapshot,
    u: &[Vec<f64>],
    u_nom: &[Vec<f64>],
    cfg: &SafetyConfig,
) -> Vec<f64> {
    let vs = VirtualStep::new(h, graph, u_nom, cfg.dt);
    let hdot = vs.hdot(h, graph, u, cfg.dt);
    vs.h_now.iter().zip(&hdot).map(|(h, d)| residue(*h, *d, cfg.alpha, cfg.refine.gamma)).collect()
}
