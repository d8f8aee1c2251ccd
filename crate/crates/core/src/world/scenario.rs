use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lidar::{dist, Obstacle, ObstacleShape};
use crate::dynamics::{DynamicsModel, ModelKind, DT};
use crate::error::{Error, Result};

/// Attempts per sampled point before generation gives up.
pub const MAX_REJECTIONS: usize = 10_000;
/// Start-to-goal cap of the keep-distance suite.
pub const MAX_TRAVEL: f64 = 4.0;
/// Agents per obstacle in the obstacle suite.
pub const AGENTS_PER_OBSTACLE: usize = 4;
pub const MAX_OBSTACLES: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    IncreaseDensity,
    KeepDensity,
    KeepDistance,
    Obstacles,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::IncreaseDensity, Suite::KeepDensity, Suite::KeepDistance, Suite::Obstacles];

    pub fn name(self) -> &'static str {
        match self {
            Suite::IncreaseDensity => "increase_density",
            Suite::KeepDensity => "keep_density",
            Suite::KeepDistance => "keep_distance",
            Suite::Obstacles => "obstacles",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

const TABLE_N: [usize; 9] = [16, 32, 64, 128, 256, 512, 1024, 2048, 4096];
const TABLE_2D: [f64; 7] = [8.0, 11.3, 16.0, 22.6, 32.0, 45.3, 64.0];
const TABLE_3D: [f64; 9] = [6.35, 8.0, 10.1, 12.7, 16.0, 20.2, 25.4, 32.0, 40.3];

/// Workspace side length that keeps agent density constant.
pub fn keep_density_side(space_dim: usize, n_agents: usize) -> f64 {
    let idx = TABLE_N.iter().position(|&n| n == n_agents);
    let n = n_agents as f64;
    match space_dim {
        2 => idx.and_then(|i| TABLE_2D.get(i).copied()).unwrap_or(8.0 * (n / 16.0).sqrt()),
        _ => idx.map(|i| TABLE_3D[i]).unwrap_or(6.35 * (n / 16.0).cbrt()),
    }
}

pub fn suite_side_length(suite: Suite, space_dim: usize, n_agents: usize) -> f64 {
    match suite {
        Suite::IncreaseDensity => {
            if space_dim == 2 {
                32.0
            } else {
                16.0
            }
        }
        Suite::KeepDensity | Suite::KeepDistance => keep_density_side(space_dim, n_agents),
        Suite::Obstacles => 12.0,
    }
}

fn default_r() -> f64 {
    0.05
}

fn default_dt() -> f64 {
    DT
}

/// Everything needed to reproduce one test instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelKind,
    pub n_agents: usize,
    pub side_length: f64,
    #[serde(default = "default_r")]
    pub r: f64,
    pub sensing_radius: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub horizon: usize,
    pub seed: u64,
    pub suite: Suite,
    /// Fixed obstacles. When empty the obstacle suite samples its own.
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

impl ScenarioConfig {
    /// Defaults for `suite` at `n_agents`.
    pub fn new(model: ModelKind, suite: Suite, n_agents: usize, seed: u64) -> Self {
        let dim = model.space_dim();
        ScenarioConfig {
            model,
            n_agents,
            side_length: suite_side_length(suite, dim, n_agents),
            r: default_r(),
            sensing_radius: if dim == 2 { 1.0 } else { 0.5 },
            dt: DT,
            horizon: if dim == 2 { 2500 } else { 2000 },
            seed,
            suite,
            obstacles: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.side_length > 0.0) {
            return bad(format!("side_length must be positive, got {}", self.side_length));
        }
        if !(self.r > 0.0) {
            return bad(format!("r must be positive, got {}", self.r));
        }
        if !(self.sensing_radius > 0.0) {
            return bad(format!("sensing_radius must be positive, got {}", self.sensing_radius));
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        let dim = self.model.space_dim();
        for (k, o) in self.obstacles.iter().enumerate() {
            if o.center.len() != dim {
                return bad(format!("obstacles[{k}]: center has {} entries, model needs {dim}", o.center.len()));
            }
        }
        Ok(())
    }
}

/// A generated instance: initial states, goals and obstacles.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub states: Vec<Vec<f64>>,
    pub goals: Vec<Vec<f64>>,
    pub obstacles: Vec<Obstacle>,
}

fn sample_point(rng: &mut ChaCha8Rng, dim: usize, side: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(0.0..side)).collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 && n <= 1.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn sample_obstacles(rng: &mut ChaCha8Rng, dim: usize, side: f64, count: usize) -> Vec<Obstacle> {
    (0..count)
        .map(|_| {
            let center = sample_point(rng, dim, side);
            let shape = if rng.gen_bool(0.5) {
                ObstacleShape::Circle { radius: 0.5 * rng.gen_range(0.0..0.5) }
            } else {
                ObstacleShape::Rect { size: (0..dim).map(|_| rng.gen_range(0.0..0.5)).collect() }
            };
            let speed = rng.gen_range(0.0..0.2);
            let velocity = random_unit(rng, dim).into_iter().map(|v| v * speed).collect();
            Obstacle { shape, center, velocity }
        })
        .collect()
}

/// Rejection-sample non-colliding starts and goals, deterministic in `config.seed`.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let model = DynamicsModel::new(config.model);
    let dim = model.space_dim();
    let side = config.side_length;
    let min_gap = 4.0 * config.r;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let obstacles = if config.suite == Suite::Obstacles && config.obstacles.is_empty() {
        let count = config.n_agents.div_ceil(AGENTS_PER_OBSTACLE).min(MAX_OBSTACLES);
        sample_obstacles(&mut rng, dim, side, count)
    } else {
        config.obstacles.clone()
    };
    let clear = |p: &[f64]| obstacles.iter().all(|o| o.distance(p) > min_gap);

    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(config.n_agents);
    let mut goals: Vec<Vec<f64>> = Vec::with_capacity(config.n_agents);
    for i in 0..config.n_agents {
        let mut placed = false;
        for _ in 0..MAX_REJECTIONS {
            let p = sample_point(&mut rng, dim, side);
            if clear(&p) && starts.iter().all(|q| dist(&p, q) >= min_gap) {
                starts.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place start {i} of {} in a side-{side} workspace after {MAX_REJECTIONS} attempts",
                config.n_agents
            )));
        }
        placed = false;
        for _ in 0..MAX_REJECTIONS {
            let g = if config.suite == Suite::KeepDistance {
                let dir = random_unit(&mut rng, dim);
                let len = MAX_TRAVEL * rng.gen_range(0.0f64..1.0).powf(1.0 / dim as f64);
                starts[i].iter().zip(&dir).map(|(s, d)| s + d * len).collect()
            } else {
                sample_point(&mut rng, dim, side)
            };
            let inside = g.iter().all(|v| (0.0..=side).contains(v));
            if inside && clear(&g) && goals.iter().all(|q| dist(&g, q) >= min_gap) {
                goals.push(g);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place goal {i} of {} after {MAX_REJECTIONS} attempts",
                config.n_agents
            )));
        }
    }

    let states = starts
        .iter()
        .map(|p| {
            let mut x = model.rest_state(p);
            if config.model == ModelKind::DubinsCar {
                x[2] = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            }
            x
        })
        .collect();
    Ok(Scenario { config: config.clone(), states, goals, obstacles })
}

/// `n` agents on a circle of `radius` around `center`, each heading to the
/// antipodal point. `jitter` perturbs the angles to break exact symmetry.
pub fn crossing_scenario(model: ModelKind, n: usize, radius: f64, jitter: f64, seed: u64) -> Scenario {
    let dyn_model = DynamicsModel::new(model);
    let dim = dyn_model.space_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = 2.0 * radius + 2.0;
    let center = vec![side / 2.0; dim];
    let mut states = Vec::with_capacity(n);
    let mut goals = Vec::with_capacity(n);
    for k in 0..n {
        let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64 + rng.gen_range(-jitter..=jitter);
        let mut offset = vec![0.0; dim];
        offset[0] = radius * a.cos();
        offset[1] = radius * a.sin();
        let start: Vec<f64> = center.iter().zip(&offset).map(|(c, o)| c + o).collect();
        let goal: Vec<f64> = center.iter().zip(&offset).map(|(c, o)| c - o).collect();
        let mut x = dyn_model.rest_state(&start);
        if model == ModelKind::DubinsCar {
            x[2] = a + std::f64::consts::PI;
        }
        states.push(x);
        goals.push(goal);
    }
    let mut config = ScenarioConfig::new(model, Suite::KeepDensity, n, seed);
    config.side_length = side;
    Scenario { config, states, goals, obstacles: Vec::new() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn side_length_examples() {
        let c = ScenarioConfig::new(ModelKind::SimpleCar, Suite::KeepDensity, 16, 0);
        assert_eq!(c.side_length, 8.0);
        let c = ScenarioConfig::new(ModelKind::SimpleDrone, Suite::KeepDensity, 4096, 0);
        assert_eq!(c.side_length, 40.3);
        assert_eq!(suite_side_length(Suite::IncreaseDensity, 2, 64), 32.0);
        assert_eq!(suite_side_length(Suite::IncreaseDensity, 3, 64), 16.0);
        assert_eq!(suite_side_length(Suite::Obstacles, 2, 64), 12.0);
        assert!((keep_density_side(2, 8) - 8.0 * 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn single_agent_and_spacing() {
        for suite in Suite::ALL {
            let kind = if suite == Suite::Obstacles { ModelKind::DubinsCar } else { ModelKind::SimpleCar };
            let mut c = ScenarioConfig::new(kind, suite, 1, 5);
            let s = generate_scenario(&c).unwrap();
            assert_eq!((s.states.len(), s.goals.len()), (1, 1));

            c.n_agents = 32;
            let s = generate_scenario(&c).unwrap();
            for i in 0..32 {
                assert!(s.goals[i].iter().all(|v| (0.0..=c.side_length).contains(v)));
                for j in 0..i {
                    assert!(dist(&s.states[i][..2], &s.states[j][..2]) >= 4.0 * c.r);
                    assert!(dist(&s.goals[i], &s.goals[j]) >= 4.0 * c.r);
                }
                if suite == Suite::KeepDistance {
                    assert!(dist(&s.states[i][..2], &s.goals[i]) <= MAX_TRAVEL + 1e-12);
                }
            }
            if suite == Suite::Obstacles {
                assert_eq!(s.obstacles.len(), 8);
                for o in &s.obstacles {
                    let speed = o.velocity.iter().map(|v| v * v).sum::<f64>().sqrt();
                    assert!(speed <= 0.2);
                }
            }
        }
    }

    #[test]
    fn identical_seeds_are_bitwise_identical() {
        let c = ScenarioConfig::new(ModelKind::SimpleDrone, Suite::KeepDistance, 64, 42);
        assert_eq!(generate_scenario(&c).unwrap(), generate_scenario(&c).unwrap());
        let mut d = c.clone();
        d.seed = 43;
        assert_ne!(generate_scenario(&c).unwrap(), generate_scenario(&d).unwrap());
    }

    #[test]
    fn infeasible_packing_errors() {
        let mut c = ScenarioConfig::new(ModelKind::SimpleCar, Suite::IncreaseDensity, 200, 1);
        c.side_length = 0.5;
        assert!(matches!(generate_scenario(&c), Err(Error::Generation(_))));
    }

    #[test]
    fn toml_roundtrip_and_strict_keys() {
        let mut c = ScenarioConfig::new(ModelKind::DubinsCar, Suite::Obstacles, 8, 3);
        c.obstacles.push(Obstacle::circle(vec![1.0, 2.0], 0.3).with_velocity(vec![0.1, 0.0]));
        c.obstacles.push(Obstacle::rect(vec![4.0, 2.0], vec![0.2, 0.4]));
        let back = ScenarioConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);

        let text = "model = \"simple_car\"\nn_agents = 4\nside_length = 4.0\nsensing_radius = 1.0\nhorizon = 10\nseed = 0\nsuite = \"keep_density\"\nbogus = 1\n";
        assert!(matches!(ScenarioConfig::from_toml(text), Err(Error::Toml(_))));
        let ok = text.replace("bogus = 1\n", "");
        let c = ScenarioConfig::from_toml(&ok).unwrap();
        assert_eq!((c.r, c.dt), (0.05, DT));
        let bad_obstacle = format!("{ok}[[obstacles]]\nshape = \"circle\"\nsize = [1.0, 1.0]\ncenter = [0.0, 0.0]\n");
        assert!(ScenarioConfig::from_toml(&bad_obstacle).is_err());
    }

    #[test]
    fn crossing_goals_are_antipodal() {
        let s = crossing_scenario(ModelKind::SimpleCar, 8, 2.0, 0.0, 0);
        let c = s.config.side_length / 2.0;
        for (x, g) in s.states.iter().zip(&s.goals) {
            assert!((x[0] + g[0] - 2.0 * c).abs() < 1e-12 && (x[1] + g[1] - 2.0 * c).abs() < 1e-12);
        }
    }
}
