use std::rc::Rc;

use super::{TrainConfig, TrainSample};
use crate::autodiff::{Tape, Tensor, Var};
use crate::dynamics::{DynamicsModel, ModelKind};
use crate::nets::{GcbfNet, PolicyNet};
use crate::world::{NodeRef, SampleLabel};

/// Values of the individual weighted loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub safe: f64,
    pub unsafe_: f64,
    pub deriv: f64,
    pub ctrl: f64,
    pub n_safe: usize,
    pub n_unsafe: usize,
    pub n_deriv: usize,
}

/// Per-agent quantities behind the loss, in batch order.
#[derive(Clone, Debug, Default)]
pub struct LossDetail {
    pub h: Vec<f64>,
    pub hdot: Vec<f64>,
    pub labels: Vec<SampleLabel>,
}

/// A batch of samples stacked into one disjoint graph.
struct Stacked {
    model: DynamicsModel,
    n: usize,
    dt: f64,
    edges: Tensor,
    segs: Rc<[usize]>,
    states: Vec<Vec<f64>>,
    u_nom: Tensor,
    hit_embed: Tensor,
    next_src: Rc<[usize]>,
    next_dst: Rc<[usize]>,
    next_type: Tensor,
    next_segs: Rc<[usize]>,
    labels: Vec<SampleLabel>,
}

fn stack(batch: &[TrainSample]) -> Stacked {
    assert!(!batch.is_empty(), "loss needs a non-empty batch");
    let model = *batch[0].graph.model();
    let dt = batch[0].dt;
    let d = model.edge_dim();
    let m = model.control_dim();
    let n: usize = batch.iter().map(|s| s.graph.n_agents()).sum();
    let n_hits: usize = batch.iter().map(|s| s.graph.hits().len()).sum();

    let (mut edges, mut segs) = (Vec::new(), Vec::new());
    let (mut states, mut u_nom, mut labels) = (Vec::with_capacity(n), Vec::with_capacity(n * m), Vec::with_capacity(n));
    let mut hit_embed = Vec::with_capacity(n_hits * d);
    let (mut next_src, mut next_dst, mut next_type, mut next_segs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut agent_off, mut hit_off) = (0, 0);
    for s in batch {
        assert_eq!(s.dt, dt, "mixed timesteps in one batch");
        for e in s.graph.edges() {
            edges.extend_from_slice(&e.feature);
            edges.push(e.node_type());
            segs.push(agent_off + e.dst);
        }
        states.extend(s.graph.states().iter().cloned());
        u_nom.extend(s.u_nom.iter().flatten().copied());
        labels.extend_from_slice(&s.labels);
        for h in s.graph.hits() {
            hit_embed.extend(model.embed(&model.virtual_state(&h.position)));
        }
        for e in s.graph.edges() {
            next_src.push(match e.src {
                NodeRef::Agent(j) => agent_off + j,
                NodeRef::Hit(k) => n + hit_off + k,
            });
            next_dst.push(agent_off + e.dst);
            next_type.push(e.node_type());
            next_segs.push(agent_off + e.dst);
        }
        agent_off += s.graph.n_agents();
        hit_off += s.graph.hits().len();
    }
    let n_edges = segs.len();
    let n_next = next_segs.len();
    Stacked {
        model,
        n,
        dt,
        edges: Tensor::matrix(n_edges, d + 1, edges),
        segs: Rc::from(segs),
        states,
        u_nom: Tensor::matrix(n, m, u_nom),
        hit_embed: Tensor::matrix(n_hits, d, hit_embed),
        next_src: Rc::from(next_src),
        next_dst: Rc::from(next_dst),
        next_type: Tensor::matrix(n_next, 1, next_type),
        next_segs: Rc::from(next_segs),
        labels,
    }
}

fn masked_mean<'t>(tape: &'t Tape, x: Var<'t>, mask: &[bool]) -> (Var<'t>, usize) {
    let count = mask.iter().filter(|b| **b).count();
    if count == 0 {
        return (tape.constant(Tensor::matrix(1, 1, vec![0.0])), 0);
    }
    let w: Vec<f64> = mask.iter().map(|b| if *b { 1.0 / count as f64 } else { 0.0 }).collect();
    (x.mul(&tape.constant(Tensor::column(w))).sum(None), count)
}

/// Record the training loss on `tape`.
///
/// `h_vars` / `pi_vars` are the networks' parameters bound on the same tape.
/// The next state is recomputed from the policy's controls for every agent,
/// so the derivative term reaches the policy of each agent and its neighbors.
/// `h` at the next state is read on the current sensing topology with the
/// LiDAR hits held in place.
#[allow(clippy::too_many_arguments)]
pub fn record_loss<'t>(
    tape: &'t Tape,
    h_net: &GcbfNet,
    h_vars: &[Var<'t>],
    pi_net: &PolicyNet,
    pi_vars: &[Var<'t>],
    batch: &[TrainSample],
    cfg: &TrainConfig,
) -> (Var<'t>, LossTerms, LossDetail) {
    let st = stack(batch);
    let model = st.model;
    let (n, dt) = (st.n, st.dt);
    let edges = tape.constant(st.edges.clone());
    let h = h_net.forward(h_vars, edges, &st.segs, n).h;
    let u_nom = tape.constant(st.u_nom.clone());
    let u = pi_net.forward(pi_vars, edges, &st.segs, n, u_nom);

    let states = &st.states;
    let x_next = tape.row_map(u, model.state_dim(), |r, ur| {
        (model.step_unchecked(&states[r], ur, dt), model.step_control_jacobian(&states[r], ur, dt))
    });
    let emb = if model.kind == ModelKind::DubinsCar {
        tape.row_map(x_next, model.edge_dim(), |_, x| (model.embed(x), model.embed_jacobian(x).unwrap()))
    } else {
        x_next
    };
    let h_next = if st.next_segs.is_empty() {
        h_net.forward(h_vars, tape.constant(Tensor::zeros(&[0, model.edge_dim() + 1])), &st.next_segs, n).h
    } else {
        let nodes = if st.hit_embed.rows() > 0 { tape.concat(&[emb, tape.constant(st.hit_embed.clone())], 0) } else { emb };
        let feat = nodes.gather_rows(st.next_src.clone()).sub(&emb.gather_rows(st.next_dst.clone()));
        let inp = tape.concat(&[feat, tape.constant(st.next_type.clone())], 1);
        h_net.forward(h_vars, inp, &st.next_segs, n).h
    };
    let hdot = h_next.sub(&h).scale(1.0 / dt);

    let safe: Vec<bool> = st.labels.iter().map(|l| *l == SampleLabel::Safe).collect();
    let unsafe_: Vec<bool> = st.labels.iter().map(|l| *l == SampleLabel::Unsafe).collect();
    let deriv: Vec<bool> = st
        .labels
        .iter()
        .map(|l| *l == SampleLabel::Safe || (cfg.deriv_on_buffer && *l == SampleLabel::Buffer))
        .collect();

    let (l_safe, n_safe) = masked_mean(tape, h.neg().shift(cfg.gamma).relu(), &safe);
    let (l_unsafe, n_unsafe) = masked_mean(tape, h.shift(cfg.gamma).relu(), &unsafe_);
    let deriv_hinge = hdot.add(&h.scale(cfg.alpha)).neg().shift(cfg.gamma).relu();
    let (l_deriv, n_deriv) = masked_mean(tape, deriv_hinge, &deriv);
    let l_ctrl = u.sub(&u_nom).norm2().mean();

    let l_safe = l_safe.scale(cfg.eta_safe);
    let l_unsafe = l_unsafe.scale(cfg.eta_unsafe);
    let l_deriv = l_deriv.scale(cfg.eta_deriv);
    let l_ctrl = l_ctrl.scale(cfg.eta_ctrl);
    let total = l_safe.add(&l_unsafe).add(&l_deriv).add(&l_ctrl);
    let terms = LossTerms {
        total: total.item(),
        safe: l_safe.item(),
        unsafe_: l_unsafe.item(),
        deriv: l_deriv.item(),
        ctrl: l_ctrl.item(),
        n_safe,
        n_unsafe,
        n_deriv,
    };
    let detail = LossDetail { h: h.value().data().to_vec(), hdot: hdot.value().data().to_vec(), labels: st.labels };
    (total, terms, detail)
}

/// Loss value without gradients.
pub fn loss(h_net: &GcbfNet, pi_net: &PolicyNet, batch: &[TrainSample], cfg: &TrainConfig) -> (LossTerms, LossDetail) {
    let tape = Tape::new();
    let hv = h_net.params.bind(&tape, false);
    let pv = pi_net.params.bind(&tape, false);
    let (_, terms, detail) = record_loss(&tape, h_net, &hv, pi_net, &pv, batch, cfg);
    (terms, detail)
}

/// Loss value and gradients for both parameter stores, in slot order.
pub fn loss_and_grads(
    h_net: &GcbfNet,
    pi_net: &PolicyNet,
    batch: &[TrainSample],
    cfg: &TrainConfig,
) -> crate::Result<(LossTerms, Vec<Tensor>, Vec<Tensor>)> {
    let tape = Tape::new();
    let hv = h_net.params.bind(&tape, true);
    let pv = pi_net.params.bind(&tape, true);
    let (total, terms, _) = record_loss(&tape, h_net, &hv, pi_net, &pv, batch, cfg);
    let mut grads = tape.backward(total)?;
    let gh = hv.iter().map(|v| grads.take(v)).collect();
    let gp = pv.iter().map(|v| grads.take(v)).collect();
    Ok((terms, gh, gp))
}

/// Held-out diagnostics over labelled samples.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SampleStats {
    /// Fraction of derivative-term samples with `gamma - hdot - alpha h > 0`.
    pub deriv_violation: f64,
    /// Mean of the per-class sign accuracies over safe and unsafe samples.
    pub balanced_accuracy: f64,
    pub safe_accuracy: f64,
    pub unsafe_accuracy: f64,
    pub n_safe: usize,
    pub n_unsafe: usize,
}

pub fn sample_stats(h_net: &GcbfNet, pi_net: &PolicyNet, samples: &[TrainSample], cfg: &TrainConfig) -> SampleStats {
    let (mut viol, mut n_deriv) = (0usize, 0usize);
    let (mut safe_ok, mut n_safe, mut unsafe_ok, mut n_unsafe) = (0usize, 0usize, 0usize, 0usize);
    for chunk in samples.chunks(16) {
        let (_, d) = loss(h_net, pi_net, chunk, cfg);
        for ((h, hdot), l) in d.h.iter().zip(&d.hdot).zip(&d.labels) {
            let in_deriv = *l == SampleLabel::Safe || (cfg.deriv_on_buffer && *l == SampleLabel::Buffer);
            if in_deriv {
                n_deriv += 1;
                if cfg.gamma - hdot - cfg.alpha * h > 0.0 {
                    viol += 1;
                }
            }
            match l {
                SampleLabel::Safe => {
                    n_safe += 1;
                    safe_ok += usize::from(*h > 0.0);
                }
                SampleLabel::Unsafe => {
                    n_unsafe += 1;
                    unsafe_ok += usize::from(*h < 0.0);
                }
                SampleLabel::Buffer => {}
            }
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let safe_accuracy = frac(safe_ok, n_safe);
    let unsafe_accuracy = frac(unsafe_ok, n_unsafe);
    SampleStats {
        deriv_violation: frac(viol, n_deriv),
        balanced_accuracy: 0.5 * (safe_accuracy + unsafe_accuracy),
        safe_accuracy,
        unsafe_accuracy,
        n_safe,
        n_unsafe,
    }
}
