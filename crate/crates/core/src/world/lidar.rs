use serde::{Deserialize, Serialize};

/// Geometry of an obstacle. In 3D a circle is a ball and a rect is a box.
#[derive(Clone, Debug, PartialEq)]
pub enum ObstacleShape {
    Circle { radius: f64 },
    /// Axis-aligned, full side lengths per axis.
    Rect { size: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObstacleRecord", into = "ObstacleRecord")]
pub struct Obstacle {
    pub shape: ObstacleShape,
    pub center: Vec<f64>,
    pub velocity: Vec<f64>,
}

/// On-disk form: `{ shape = "circle", radius = .., center = [..], velocity = [..] }`
/// or `{ shape = "rect", size = [..], center = [..] }`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObstacleRecord {
    shape: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    size: Option<Vec<f64>>,
    center: Vec<f64>,
    #[serde(default)]
    velocity: Vec<f64>,
}

impl TryFrom<ObstacleRecord> for Obstacle {
    type Error = String;

    fn try_from(r: ObstacleRecord) -> Result<Self, String> {
        let shape = match (r.shape.as_str(), r.radius, r.size) {
            ("circle", Some(radius), None) if radius >= 0.0 => ObstacleShape::Circle { radius },
            ("rect", None, Some(size)) if size.len() == r.center.len() && size.iter().all(|s| *s >= 0.0) => {
                ObstacleShape::Rect { size }
            }
            (s, _, _) => {
                return Err(format!(
                    "obstacle shape {s:?}: circle needs a non-negative radius, rect needs one size per axis"
                ))
            }
        };
        if !r.velocity.is_empty() && r.velocity.len() != r.center.len() {
            return Err("obstacle velocity and center lengths differ".into());
        }
        Ok(Obstacle { shape, center: r.center, velocity: r.velocity })
    }
}

impl From<Obstacle> for ObstacleRecord {
    fn from(o: Obstacle) -> Self {
        let (shape, radius, size) = match o.shape {
            ObstacleShape::Circle { radius } => ("circle", Some(radius), None),
            ObstacleShape::Rect { size } => ("rect", None, Some(size)),
        };
        ObstacleRecord { shape: shape.into(), radius, size, center: o.center, velocity: o.velocity }
    }
}

impl Obstacle {
    pub fn circle(center: Vec<f64>, radius: f64) -> Self {
        Obstacle { shape: ObstacleShape::Circle { radius }, center, velocity: Vec::new() }
    }

    pub fn rect(center: Vec<f64>, size: Vec<f64>) -> Self {
        Obstacle { shape: ObstacleShape::Rect { size }, center, velocity: Vec::new() }
    }

    pub fn with_velocity(mut self, velocity: Vec<f64>) -> Self {
        self.velocity = velocity;
        self
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Translate by `velocity * dt`.
    pub fn advance(&mut self, dt: f64) {
        for (c, v) in self.center.iter_mut().zip(&self.velocity) {
            *c += v * dt;
        }
    }

    /// Euclidean distance from `p` to the obstacle surface; zero inside.
    pub fn distance(&self, p: &[f64]) -> f64 {
        match &self.shape {
            ObstacleShape::Circle { radius } => (dist(p, &self.center) - radius).max(0.0),
            ObstacleShape::Rect { size } => p
                .iter()
                .zip(&self.center)
                .zip(size)
                .map(|((p, c), s)| ((p - c).abs() - 0.5 * s).max(0.0).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        match &self.shape {
            ObstacleShape::Circle { radius } => dist(p, &self.center) <= *radius,
            ObstacleShape::Rect { size } => {
                p.iter().zip(&self.center).zip(size).all(|((p, c), s)| (p - c).abs() <= 0.5 * s)
            }
        }
    }

    /// Smallest `t >= 0` with `origin + t * dir` on the obstacle, for unit `dir`.
    /// Returns `Some(0)` when the origin is inside.
    pub fn ray_hit(&self, origin: &[f64], dir: &[f64]) -> Option<f64> {
        if self.contains(origin) {
            return Some(0.0);
        }
        match &self.shape {
            ObstacleShape::Circle { radius } => {
                let oc: Vec<f64> = origin.iter().zip(&self.center).map(|(o, c)| o - c).collect();
                let b = dot(&oc, dir);
                let c = dot(&oc, &oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let t = -b - disc.sqrt();
                (t >= 0.0).then_some(t)
            }
            ObstacleShape::Rect { size } => {
                let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
                for k in 0..origin.len() {
                    let lo = self.center[k] - 0.5 * size[k];
                    let hi = self.center[k] + 0.5 * size[k];
                    if dir[k].abs() < 1e-300 {
                        if origin[k] < lo || origin[k] > hi {
                            return None;
                        }
                        continue;
                    }
                    let (mut a, mut b) = ((lo - origin[k]) / dir[k], (hi - origin[k]) / dir[k]);
                    if a > b {
                        std::mem::swap(&mut a, &mut b);
                    }
                    t0 = t0.max(a);
                    t1 = t1.min(b);
                    if t0 > t1 {
                        return None;
                    }
                }
                Some(t0)
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LidarHit {
    /// Hit point relative to the sensing agent.
    pub rel: Vec<f64>,
    pub valid: bool,
}

impl LidarHit {
    pub fn range(&self) -> f64 {
        self.rel.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LidarScan {
    pub hits: Vec<LidarHit>,
    pub n_rays: usize,
}

impl LidarScan {
    pub fn valid_hits(&self) -> impl Iterator<Item = &LidarHit> {
        self.hits.iter().filter(|h| h.valid)
    }
}

/// Unit ray directions: evenly spaced angles in 2D, a Fibonacci sphere in 3D.
pub fn ray_directions(dim: usize, n_rays: usize) -> Vec<Vec<f64>> {
    match dim {
        2 => (0..n_rays)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / n_rays as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..n_rays)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n_rays as f64;
                    let rad = (1.0 - z * z).sqrt();
                    let phi = golden * k as f64;
                    vec![rad * phi.cos(), rad * phi.sin(), z]
                })
                .collect()
        }
        d => panic!("unsupported space dimension {d}"),
    }
}

/// Nearest obstacle intersection within `range` along each ray.
pub fn raycast(position: &[f64], obstacles: &[Obstacle], n_rays: usize, range: f64) -> LidarScan {
    assert!(range > 0.0, "sensing radius must be positive");
    let dirs = ray_directions(position.len(), n_rays);
    let nearby: Vec<&Obstacle> = obstacles
        .iter()
        .filter(|o| o.distance(position) <= range)
        .collect();
    let hits = dirs
        .iter()
        .map(|d| {
            let best = nearby
                .iter()
                .filter_map(|o| o.ray_hit(position, d))
                .filter(|t| *t <= range)
                .fold(f64::INFINITY, f64::min);
            if best.is_finite() {
                LidarHit { rel: d.iter().map(|v| v * best).collect(), valid: true }
            } else {
                LidarHit { rel: vec![0.0; position.len()], valid: false }
            }
        })
        .collect();
    LidarScan { hits, n_rays }
}
