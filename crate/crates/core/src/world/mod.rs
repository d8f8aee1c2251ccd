//! Multi-agent environment: obstacles, LiDAR, sensing graphs, labels,
//! scenario generation and world stepping.

mod graph;
mod grid;
mod lidar;
mod scenario;

pub use graph::{build_graph, label_sample, observe, Edge, GraphSnapshot, HitNode, NodeRef, SampleLabel, N_RAYS};
pub use lidar::{ray_directions, raycast, LidarHit, LidarScan, Obstacle, ObstacleShape};
pub use grid::SpatialGrid;
pub use scenario::{
    crossing_scenario, generate_scenario, keep_density_side, suite_side_length, Scenario, ScenarioConfig, Suite,
    AGENTS_PER_OBSTACLE, MAX_OBSTACLES, MAX_REJECTIONS, MAX_TRAVEL,
};

pub(crate) use lidar::dist;

use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};

/// Result of advancing the world one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldStep {
    pub states: Vec<Vec<f64>>,
    pub obstacles: Vec<Obstacle>,
    /// Per agent: within `2r` of another agent or `r` of an obstacle after the step.
    pub collisions: Vec<bool>,
}

/// Step every agent and translate every obstacle.
pub fn step_world(
    model: &DynamicsModel,
    states: &[Vec<f64>],
    controls: &[Vec<f64>],
    obstacles: &[Obstacle],
    dt: f64,
    r: f64,
) -> Result<WorldStep> {
    if controls.len() != states.len() {
        return Err(Error::DimensionMismatch { what: "controls", expected: states.len(), got: controls.len() });
    }
    let next = states
        .iter()
        .zip(controls)
        .map(|(x, u)| model.step(x, u, dt))
        .collect::<Result<Vec<_>>>()?;
    let mut obs = obstacles.to_vec();
    obs.iter_mut().for_each(|o| o.advance(dt));
    let collisions = collision_flags(model, &next, &obs, r);
    Ok(WorldStep { states: next, obstacles: obs, collisions })
}

/// Per-agent collision test on a frozen configuration.
pub fn collision_flags(model: &DynamicsModel, states: &[Vec<f64>], obstacles: &[Obstacle], r: f64) -> Vec<bool> {
    let pos: Vec<&[f64]> = states.iter().map(|x| model.position(x)).collect();
    let grid = SpatialGrid::new(pos.iter().copied(), 2.0 * r);
    (0..pos.len())
        .map(|i| {
            grid.candidates(pos[i]).into_iter().any(|j| j != i && dist(pos[i], pos[j]) <= 2.0 * r)
                || obstacles.iter().any(|o| o.distance(pos[i]) <= r)
        })
        .collect()
}

pub fn reached(model: &DynamicsModel, x: &[f64], goal: &[f64], tol: f64) -> bool {
    dist(model.position(x), goal) < tol
}

/// True once every agent is within `tol` of its goal.
pub fn all_reached(model: &DynamicsModel, states: &[Vec<f64>], goals: &[Vec<f64>], tol: f64) -> bool {
    states.iter().zip(goals).all(|(x, g)| reached(model, x, g, tol))
}
