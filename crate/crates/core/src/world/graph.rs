use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::SpatialGrid;
use super::lidar::{dist, raycast, LidarScan, Obstacle};
use crate::dynamics::DynamicsModel;

/// Default number of LiDAR rays per agent.
pub const N_RAYS: usize = 32;

/// A LiDAR return promoted to a graph node.
#[derive(Clone, Debug, PartialEq)]
pub struct HitNode {
    /// Absolute position of the hit.
    pub position: Vec<f64>,
    /// Agent whose scan produced it.
    pub owner: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeRef {
    Agent(usize),
    Hit(usize),
}

/// Directed edge from `src` into agent `dst`.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub dst: usize,
    pub src: NodeRef,
    pub feature: Vec<f64>,
}

impl Edge {
    /// Node-type flag of the source: 0 for agents, 1 for LiDAR hits.
    pub fn node_type(&self) -> f64 {
        match self.src {
            NodeRef::Agent(_) => 0.0,
            NodeRef::Hit(_) => 1.0,
        }
    }
}

/// The sensing graph at one instant. Edges are grouped by destination agent.
#[derive(Clone, Debug)]
pub struct GraphSnapshot {
    model: DynamicsModel,
    states: Vec<Vec<f64>>,
    hits: Vec<HitNode>,
    edges: Vec<Edge>,
    offsets: Vec<usize>,
    sensing_radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleLabel {
    Safe,
    Unsafe,
    Buffer,
}

impl GraphSnapshot {
    pub fn model(&self) -> &DynamicsModel {
        &self.model
    }

    pub fn n_agents(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn hits(&self) -> &[HitNode] {
        &self.hits
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn sensing_radius(&self) -> f64 {
        self.sensing_radius
    }

    /// In-edges of agent `i`.
    pub fn edges_of(&self, i: usize) -> &[Edge] {
        &self.edges[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Destination agent of every edge, in edge order.
    pub fn segments(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.dst).collect()
    }

    /// State of any node; hits become zero-velocity virtual states.
    pub fn node_state(&self, node: NodeRef) -> Vec<f64> {
        match node {
            NodeRef::Agent(j) => self.states[j].clone(),
            NodeRef::Hit(k) => self.model.virtual_state(&self.hits[k].position),
        }
    }

    pub fn nearest_agent_distance(&self, i: usize) -> f64 {
        let pi = self.model.position(&self.states[i]);
        self.edges_of(i)
            .iter()
            .filter_map(|e| match e.src {
                NodeRef::Agent(j) => Some(dist(pi, self.model.position(&self.states[j]))),
                NodeRef::Hit(_) => None,
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn nearest_hit_range(&self, i: usize) -> f64 {
        let pi = self.model.position(&self.states[i]);
        self.edges_of(i)
            .iter()
            .filter_map(|e| match e.src {
                NodeRef::Hit(k) => Some(dist(pi, &self.hits[k].position)),
                NodeRef::Agent(_) => None,
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// The same topology with agent states replaced; edge features are recomputed.
    pub fn with_states(&self, states: Vec<Vec<f64>>) -> GraphSnapshot {
        assert_eq!(states.len(), self.states.len());
        let mut g = self.clone();
        g.states = states;
        for e in &mut g.edges {
            let src = match e.src {
                NodeRef::Agent(j) => g.states[j].clone(),
                NodeRef::Hit(k) => g.model.virtual_state(&g.hits[k].position),
            };
            e.feature = g.model.edge_feature(&g.states[e.dst], &src);
        }
        g
    }
}

/// Assemble the sensing graph from agent states and their LiDAR scans.
pub fn build_graph(model: &DynamicsModel, states: &[Vec<f64>], scans: &[LidarScan], sensing_radius: f64) -> GraphSnapshot {
    assert!(scans.is_empty() || scans.len() == states.len(), "one scan per agent");
    let n = states.len();
    let positions: Vec<&[f64]> = states.iter().map(|x| model.position(x)).collect();
    let grid = SpatialGrid::new(positions.iter().copied(), sensing_radius);

    let mut hits = Vec::new();
    let mut hit_ids: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, scan) in scans.iter().enumerate() {
        for h in scan.valid_hits() {
            if h.range() <= sensing_radius {
                let position: Vec<f64> = positions[i].iter().zip(&h.rel).map(|(p, r)| p + r).collect();
                hit_ids[i].push(hits.len());
                hits.push(HitNode { position, owner: i });
            }
        }
    }

    let per_agent: Vec<Vec<Edge>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            for j in grid.candidates(positions[i]) {
                if j != i && dist(positions[i], positions[j]) <= sensing_radius {
                    out.push(Edge { dst: i, src: NodeRef::Agent(j), feature: model.edge_feature(&states[i], &states[j]) });
                }
            }
            for &k in &hit_ids[i] {
                let virt = model.virtual_state(&hits[k].position);
                out.push(Edge { dst: i, src: NodeRef::Hit(k), feature: model.edge_feature(&states[i], &virt) });
            }
            out
        })
        .collect();

    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    let mut edges = Vec::new();
    for list in per_agent {
        edges.extend(list);
        offsets.push(edges.len());
    }
    GraphSnapshot { model: *model, states: states.to_vec(), hits, edges, offsets, sensing_radius }
}

/// Raycast every agent against `obstacles` and build the graph.
pub fn observe(
    model: &DynamicsModel,
    states: &[Vec<f64>],
    obstacles: &[Obstacle],
    sensing_radius: f64,
    n_rays: usize,
) -> GraphSnapshot {
    let scans: Vec<LidarScan> = if obstacles.is_empty() {
        Vec::new()
    } else {
        states
            .par_iter()
            .map(|x| raycast(model.position(x), obstacles, n_rays, sensing_radius))
            .collect()
    };
    build_graph(model, states, &scans, sensing_radius)
}

/// Classify agent `i`: unsafe within `2r` of an agent or `r` of an obstacle,
/// safe beyond `4r` of both, buffer in between.
pub fn label_sample(graph: &GraphSnapshot, i: usize, r: f64) -> SampleLabel {
    let da = graph.nearest_agent_distance(i);
    let dh = graph.nearest_hit_range(i);
    if da < 2.0 * r || dh < r {
        SampleLabel::Unsafe
    } else if da > 4.0 * r && dh > 4.0 * r {
        SampleLabel::Safe
    } else {
        SampleLabel::Buffer
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ModelKind;
    use proptest::prelude::*;

    fn car() -> DynamicsModel {
        DynamicsModel::new(ModelKind::SimpleCar)
    }

    fn at(p: &[(f64, f64)]) -> Vec<Vec<f64>> {
        p.iter().map(|&(x, y)| vec![x, y, 0.0, 0.0]).collect()
    }

    #[test]
    fn build_graph_examples() {
        let m = car();
        assert_eq!(build_graph(&m, &at(&[(0.0, 0.0), (0.5, 0.0)]), &[], 1.0).edges().len(), 2);
        assert_eq!(build_graph(&m, &at(&[(0.0, 0.0), (1.5, 0.0)]), &[], 1.0).edges().len(), 0);

        let obs = [Obstacle::circle(vec![0.3, 0.0], 0.1)];
        let scan = raycast(&[0.0, 0.0], &obs, 32, 1.0);
        let valid: Vec<_> = scan.valid_hits().cloned().collect();
        let one = LidarScan { hits: vec![valid[0].clone()], n_rays: 1 };
        let g = build_graph(&m, &at(&[(0.0, 0.0)]), &[one], 1.0);
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.edges()[0].node_type(), 1.0);
        assert_eq!(g.edges()[0].src, NodeRef::Hit(0));
        assert_eq!(g.hits()[0].owner, 0);
    }

    #[test]
    fn label_examples() {
        let m = car();
        let r = 0.05;
        for (d, want) in [(0.08, SampleLabel::Unsafe), (0.5, SampleLabel::Safe), (0.15, SampleLabel::Buffer)] {
            let g = build_graph(&m, &at(&[(0.0, 0.0), (d, 0.0)]), &[], 1.0);
            assert_eq!(label_sample(&g, 0, r), want, "distance {d}");
        }
        let g = build_graph(&m, &at(&[(0.0, 0.0)]), &[], 1.0);
        assert_eq!(label_sample(&g, 0, r), SampleLabel::Safe);
    }

    #[test]
    fn hits_are_zero_velocity_virtual_nodes() {
        let m = DynamicsModel::new(ModelKind::DubinsCar);
        let obs = [Obstacle::rect(vec![0.5, 0.0], vec![0.2, 0.2])];
        let g = observe(&m, &[vec![0.0, 0.0, 0.3, 0.5]], &obs, 1.0, 32);
        assert!(!g.hits().is_empty());
        let e = &g.edges_of(0)[0];
        let NodeRef::Hit(k) = e.src else { panic!("expected hit edge") };
        let v = g.node_state(NodeRef::Hit(k));
        assert_eq!(&v[2..], &[0.0, 0.0]);
        assert_eq!(e.feature.len(), 5);
    }

    #[test]
    fn with_states_recomputes_features() {
        let m = car();
        let g = build_graph(&m, &at(&[(0.0, 0.0), (0.5, 0.0)]), &[], 1.0);
        let moved = g.with_states(at(&[(0.1, 0.0), (0.5, 0.2)]));
        assert_eq!(moved.edges_of(0)[0].feature, vec![0.4, 0.2, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn agent_adjacency_is_symmetric(pts in prop::collection::vec((0.0f64..3.0, 0.0f64..3.0), 1..25)) {
            let g = build_graph(&car(), &at(&pts), &[], 1.0);
            for e in g.edges() {
                if let NodeRef::Agent(j) = e.src {
                    prop_assert!(j != e.dst);
                    prop_assert!(g.edges_of(j).iter().any(|b| b.src == NodeRef::Agent(e.dst)));
                }
            }
            // Grid candidates never miss an in-range pair.
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    let d = ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
                    let has = g.edges_of(i).iter().any(|e| e.src == NodeRef::Agent(j));
                    prop_assert_eq!(has, i != j && d <= 1.0);
                }
            }
        }

        #[test]
        fn shrinking_distances_never_makes_unsafe_safe(d in 0.0f64..0.5, s in 0.0f64..1.0) {
            let m = car();
            let r = 0.05;
            let before = label_sample(&build_graph(&m, &at(&[(0.0, 0.0), (d, 0.0)]), &[], 1.0), 0, r);
            let after = label_sample(&build_graph(&m, &at(&[(0.0, 0.0), (d * s, 0.0)]), &[], 1.0), 0, r);
            if before == SampleLabel::Unsafe {
                prop_assert_eq!(after, SampleLabel::Unsafe);
            }
            if after == SampleLabel::Safe {
                prop_assert_eq!(before, SampleLabel::Safe);
            }
        }
    }
}
