use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::dynamics::DynamicsModel;
use crate::error::Result;
use crate::nets::PolicyNet;
use crate::world::{
    all_reached, generate_scenario, label_sample, observe, step_world, GraphSnapshot, Obstacle, SampleLabel,
    ScenarioConfig, Suite, N_RAYS,
};

/// Two consecutive sensing graphs of one rollout.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub graph: GraphSnapshot,
    pub next: GraphSnapshot,
    pub labels: Vec<SampleLabel>,
    pub controls: Vec<Vec<f64>>,
    pub u_nom: Vec<Vec<f64>>,
    pub goals: Vec<Vec<f64>>,
    pub dt: f64,
}

impl TrainSample {
    /// Observe `states`, apply `controls` (nominal when `None`) for one step and
    /// label the first snapshot with agent radius `r`.
    #[allow(clippy::too_many_arguments)]
    pub fn record(
        model: &DynamicsModel,
        states: &[Vec<f64>],
        goals: &[Vec<f64>],
        obstacles: &[Obstacle],
        controls: Option<Vec<Vec<f64>>>,
        r: f64,
        sensing_radius: f64,
        dt: f64,
    ) -> Result<Self> {
        let graph = observe(model, states, obstacles, sensing_radius, N_RAYS);
        let u_nom: Vec<Vec<f64>> = states.iter().zip(goals).map(|(x, g)| model.nominal_control(x, g)).collect();
        let controls = controls.unwrap_or_else(|| u_nom.clone());
        let stepped = step_world(model, states, &controls, obstacles, dt, r)?;
        let next = observe(model, &stepped.states, &stepped.obstacles, sensing_radius, N_RAYS);
        let labels = (0..states.len()).map(|i| label_sample(&graph, i, r)).collect();
        Ok(TrainSample { graph, next, labels, controls, u_nom, goals: goals.to_vec(), dt })
    }
}

/// Episodic training environment; resamples a scenario whenever an episode ends.
#[derive(Clone, Debug)]
pub struct RolloutEnv {
    pub model: DynamicsModel,
    pub states: Vec<Vec<f64>>,
    pub goals: Vec<Vec<f64>>,
    pub obstacles: Vec<Obstacle>,
    pub t: usize,
    pub episodes: usize,
    config: TrainConfig,
    rng: ChaCha8Rng,
}

impl RolloutEnv {
    pub fn new(config: &TrainConfig, seed: u64) -> Result<Self> {
        let mut env = RolloutEnv {
            model: DynamicsModel::new(config.model),
            states: Vec::new(),
            goals: Vec::new(),
            obstacles: Vec::new(),
            t: 0,
            episodes: 0,
            config: config.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.reset()?;
        Ok(env)
    }

    pub fn reset(&mut self) -> Result<()> {
        let c = &self.config;
        let mut sc = ScenarioConfig::new(c.model, Suite::KeepDensity, c.n_agents, self.rng.gen());
        sc.side_length = c.side_length;
        sc.r = c.r;
        sc.sensing_radius = c.sensing_radius;
        sc.obstacles = (0..c.n_obstacles)
            .map(|_| {
                let center = (0..self.model.space_dim()).map(|_| self.rng.gen_range(0.0..c.side_length)).collect();
                Obstacle::circle(center, self.rng.gen_range(0.01..0.1))
            })
            .collect();
        let s = generate_scenario(&sc)?;
        self.states = s.states;
        self.goals = s.goals;
        self.obstacles = s.obstacles;
        self.t = 0;
        self.episodes += 1;
        Ok(())
    }

    pub fn observe(&self) -> GraphSnapshot {
        observe(&self.model, &self.states, &self.obstacles, self.config.sensing_radius, N_RAYS)
    }

    pub fn nominal(&self) -> Vec<Vec<f64>> {
        self.states.iter().zip(&self.goals).map(|(x, g)| self.model.nominal_control(x, g)).collect()
    }
}

/// Run `length` steps, choosing the nominal controller for all agents with
/// probability `epsilon` at each step and the learned policy otherwise.
pub fn collect_rollout(
    policy: &PolicyNet,
    epsilon: f64,
    env: &mut RolloutEnv,
    length: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TrainSample>> {
    let eps = epsilon.clamp(0.0, 1.0);
    let dt = env.config.dt;
    let r = env.config.r;
    let mut out = Vec::with_capacity(length);
    for _ in 0..length {
        let graph = env.observe();
        let u_nom = env.nominal();
        let use_nominal = rng.gen_bool(eps);
        let controls = if use_nominal { u_nom.clone() } else { policy.eval(&graph, &u_nom) };
        let stepped = step_world(&env.model, &env.states, &controls, &env.obstacles, dt, r)?;
        env.states = stepped.states;
        env.obstacles = stepped.obstacles;
        env.t += 1;
        let next = env.observe();
        let labels = (0..graph.n_agents()).map(|i| label_sample(&graph, i, r)).collect();
        out.push(TrainSample { graph, next, labels, controls, u_nom, goals: env.goals.clone(), dt });
        if env.t >= env.config.episode_len || all_reached(&env.model, &env.states, &env.goals, r) {
            env.reset()?;
        }
    }
    Ok(out)
}
