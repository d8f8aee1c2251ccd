use std::collections::HashMap;

/// Uniform hash grid for fixed-radius neighbor queries.
pub struct SpatialGrid {
    cell: f64,
    dim: usize,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl SpatialGrid {
    pub fn new<'a>(points: impl IntoIterator<Item = &'a [f64]>, cell: f64) -> Self {
        let cell = if cell > 0.0 { cell } else { 1.0 };
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        let mut dim = 2;
        for (i, p) in points.into_iter().enumerate() {
            dim = p.len();
            buckets.entry(key(p, cell)).or_default().push(i);
        }
        SpatialGrid { cell, dim, buckets }
    }

    /// Indices of points within one cell of `p` in every axis, in ascending order.
    pub fn candidates(&self, p: &[f64]) -> Vec<usize> {
        let k = key(p, self.cell);
        let mut out = Vec::new();
        let zr = if self.dim == 3 { -1..=1 } else { 0..=0 };
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in zr.clone() {
                    if let Some(b) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        out.extend_from_slice(b);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn key(p: &[f64], cell: f64) -> [i64; 3] {
    let mut k = [0i64; 3];
    for (slot, v) in k.iter_mut().zip(p) {
        *slot = (v / cell).floor() as i64;
    }
    k
}
