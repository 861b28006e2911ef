//! Bucketed uniform-grid index for ball queries on flat point arrays.

use std::collections::HashMap;

#[derive(Debug, Clone)]
pub(crate) struct GridIndex {
    dim: usize,
    cell: f64,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
}

impl GridIndex {
    /// Index `count` points stored with stride `dim` in `coords`.
    pub fn new(coords: &[f64], dim: usize, cell: f64) -> Self {
        let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (i, p) in coords.chunks_exact(dim).enumerate() {
            buckets.entry(key(p, cell)).or_default().push(i);
        }
        Self { dim, cell, buckets }
    }

    /// Call `visit` with the index of every point within distance `< radius`
    /// (or `≤ radius` when `closed`) of `center`, in unspecified order.
    pub fn for_each_in_ball(&self, coords: &[f64], center: &[f64], radius: f64, closed: bool, mut visit: impl FnMut(usize)) {
        let r2 = radius * radius;
        let inside = |i: usize| {
            let p = &coords[i * self.dim..(i + 1) * self.dim];
            let d2: f64 = p.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            if closed {
                d2 <= r2
            } else {
                d2 < r2
            }
        };
        let lo: Vec<i64> = center.iter().map(|c| ((c - radius) / self.cell).floor() as i64).collect();
        let hi: Vec<i64> = center.iter().map(|c| ((c + radius) / self.cell).floor() as i64).collect();
        let span: f64 = lo.iter().zip(&hi).map(|(a, b)| (b - a + 1) as f64).product();
        if span > self.buckets.len() as f64 {
            for (k, ids) in &self.buckets {
                if k.iter().zip(lo.iter().zip(&hi)).all(|(c, (a, b))| c >= a && c <= b) {
                    for &i in ids {
                        if inside(i) {
                            visit(i);
                        }
                    }
                }
            }
            return;
        }
        let mut cur = lo.clone();
        loop {
            if let Some(ids) = self.buckets.get(&cur) {
                for &i in ids {
                    if inside(i) {
                        visit(i);
                    }
                }
            }
            let mut axis = 0;
            loop {
                if axis == self.dim {
                    return;
                }
                cur[axis] += 1;
                if cur[axis] <= hi[axis] {
                    break;
                }
                cur[axis] = lo[axis];
                axis += 1;
            }
        }
    }

    pub fn ball(&self, coords: &[f64], center: &[f64], radius: f64, closed: bool) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_in_ball(coords, center, radius, closed, |i| out.push(i));
        out.sort_unstable();
        out
    }
}

fn key(p: &[f64], cell: f64) -> Vec<i64> {
    p.iter().map(|x| (x / cell).floor() as i64).collect()
}
