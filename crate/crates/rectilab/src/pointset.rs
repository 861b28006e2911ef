//! Weighted point clouds standing in for n-dimensional Hausdorff measure on a
//! set, the canonical test sets, and their projection statistics.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grassmann::{self, dist, GrassmannBall, Subspace};
use crate::spatial::GridIndex;

#[derive(Debug, Error)]
pub enum PointsetError {
    #[error("empty cloud")]
    Empty,
    #[error("coordinate array length {len} is not a multiple of dimension {dim}")]
    Shape { len: usize, dim: usize },
    #[error("weight {weight} at point {index} is not a finite nonnegative number")]
    BadWeight { index: usize, weight: f64 },
    #[error("total weight must be positive")]
    ZeroMass,
    #[error("points {a} and {b} are {distance:.3e} apart, closer than resolution/4")]
    TooClose { a: usize, b: usize, distance: f64 },
    #[error("{what} = {value} out of range {range}")]
    OutOfRange { what: &'static str, value: i64, range: &'static str },
    #[error("grid resolution {grid} finer than cloud resolution {resolution}")]
    GridTooFine { grid: f64, resolution: f64 },
    #[error("graph violates Lipschitz bound {bound}: |f(s) - f(t)| / |s - t| = {ratio:.6} at s = {s:?}, t = {t:?}")]
    LipschitzViolation { bound: f64, ratio: f64, s: Vec<f64>, t: Vec<f64> },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Grassmann(#[from] grassmann::GrassmannError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed cloud file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, PointsetError>;

/// An open Euclidean ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        grassmann::dist2(&self.center, x) < self.radius * self.radius
    }

    pub fn scaled(&self, factor: f64) -> Ball {
        Ball { center: self.center.clone(), radius: self.radius * factor }
    }
}

/// Where a cloud came from, written to the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub params: serde_json::Value,
    pub seed: Option<u64>,
}

/// Weighted points approximating H^n restricted to a set at a stated resolution.
#[derive(Debug, Clone)]
pub struct RegularCloud {
    dim: usize,
    n: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
    resolution: f64,
    provenance: Option<Provenance>,
    index: GridIndex,
}

impl RegularCloud {
    /// Build a cloud from flat coordinates (stride `dim`) and weights.
    pub fn new(dim: usize, n: usize, coords: Vec<f64>, weights: Vec<f64>, resolution: f64) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(PointsetError::Shape { len: coords.len(), dim });
        }
        let count = coords.len() / dim;
        if count == 0 {
            return Err(PointsetError::Empty);
        }
        if weights.len() != count {
            return Err(PointsetError::DimensionMismatch { expected: count, got: weights.len() });
        }
        if let Some((index, &weight)) = weights.iter().enumerate().find(|(_, w)| !w.is_finite() || **w < 0.0) {
            return Err(PointsetError::BadWeight { index, weight });
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(PointsetError::ZeroMass);
        }
        let (lo, hi) = bounds(&coords, dim);
        let diag = dist(&lo, &hi);
        let cell = (4.0 * resolution).max(diag / 256.0).max(f64::MIN_POSITIVE);
        let index = GridIndex::new(&coords, dim, cell);
        let cloud = Self { dim, n, coords, weights, resolution, provenance: None, index };
        cloud.check_separation()?;
        Ok(cloud)
    }

    fn check_separation(&self) -> Result<()> {
        let tol = self.resolution / 4.0 * (1.0 - 1e-9);
        for a in 0..self.len() {
            let mut clash = None;
            self.index.for_each_in_ball(&self.coords, self.point(a), tol, false, |b| {
                if b != a && clash.is_none() {
                    clash = Some(b);
                }
            });
            if let Some(b) = clash {
                return Err(PointsetError::TooClose { a, b, distance: dist(self.point(a), self.point(b)) });
            }
        }
        Ok(())
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Ambient dimension d.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Dimension n of the measure the cloud carries.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        bounds(&self.coords, self.dim)
    }

    /// Lower bound on the diameter from a few farthest-point sweeps; exact for
    /// segments, discs and other sets whose diameter is realised by extremes.
    pub fn diameter(&self) -> f64 {
        let mut a = 0;
        let mut best = 0.0;
        for _ in 0..4 {
            let (far, d) = (0..self.len())
                .map(|i| (i, dist(self.point(a), self.point(i))))
                .fold((a, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if d <= best {
                break;
            }
            best = d;
            a = far;
        }
        best
    }

    /// Largest ratio between a weight and resolution^n, in either direction.
    pub fn density_constant(&self) -> f64 {
        let unit = self.resolution.powi(self.n as i32);
        self.weights
            .iter()
            .filter(|w| **w > 0.0)
            .map(|w| (w / unit).max(unit / w))
            .fold(1.0, f64::max)
    }

    /// Indices of points strictly inside the ball, ascending.
    pub fn ball_indices(&self, ball: &Ball) -> Vec<usize> {
        self.index.ball(&self.coords, &ball.center, ball.radius, false)
    }

    /// Indices of points in the closed ball, ascending.
    pub fn closed_ball_indices(&self, center: &[f64], radius: f64) -> Vec<usize> {
        self.index.ball(&self.coords, center, radius, true)
    }

    pub fn ball_mass(&self, ball: &Ball) -> f64 {
        let mut m = 0.0;
        self.index.for_each_in_ball(&self.coords, &ball.center, ball.radius, false, |i| m += self.weights[i]);
        m
    }

    /// The smallest enclosing ball about the bounding-box center (slightly inflated).
    pub fn enclosing_ball(&self) -> Ball {
        let (lo, hi) = self.bounding_box();
        let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let r = (0..self.len()).map(|i| dist(&center, self.point(i))).fold(0.0, f64::max);
        Ball::new(center, r * (1.0 + 1e-9) + self.resolution)
    }

    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        let coords = self.coords.chunks_exact(self.dim).flat_map(|p| p.iter().zip(shift).map(|(a, b)| a + b)).collect();
        let mut out = Self::new(self.dim, self.n, coords, self.weights.clone(), self.resolution)?;
        out.provenance = self.provenance.clone();
        Ok(out)
    }

    /// Union of two clouds of equal dimensions; resolution is the finer one.
    pub fn merged(&self, other: &RegularCloud) -> Result<Self> {
        if other.dim != self.dim || other.n != self.n {
            return Err(PointsetError::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        let mut weights = self.weights.clone();
        weights.extend_from_slice(&other.weights);
        Self::new(self.dim, self.n, coords, weights, self.resolution.min(other.resolution))
    }
}

fn bounds(coords: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in coords.chunks_exact(dim) {
        for k in 0..dim {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

fn provenance(generator: &str, params: serde_json::Value) -> Provenance {
    Provenance { generator: generator.to_string(), params, seed: None }
}

/// Centers of the generation-k squares of the four-corner Cantor construction
/// on [0,1]²: each square keeps its four corner quarters.
pub fn four_corners(k: u32) -> Result<RegularCloud> {
    if !(1..=8).contains(&k) {
        return Err(PointsetError::OutOfRange { what: "generation", value: k as i64, range: "1..=8" });
    }
    let side = 0.25f64.powi(k as i32);
    let count = 1usize << (2 * k);
    let mut coords = Vec::with_capacity(2 * count);
    for code in 0..count {
        let (mut x, mut y) = (0.0, 0.0);
        let mut parent = 1.0;
        for g in 0..k {
            let digit = (code >> (2 * (k - 1 - g))) & 3;
            let offset = 0.75 * parent;
            if digit & 1 == 1 {
                x += offset;
            }
            if digit & 2 == 2 {
                y += offset;
            }
            parent *= 0.25;
        }
        coords.push(x + 0.5 * side);
        coords.push(y + 0.5 * side);
    }
    let weights = vec![side; count];
    Ok(RegularCloud::new(2, 1, coords, weights, side)?.with_provenance(provenance("four-corners", serde_json::json!({ "k": k }))))
}

/// A planar segment from `start`, heading `angle`, of length `length`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarSegment {
    pub start: [f64; 2],
    pub angle: f64,
    pub length: f64,
}

/// The m^m segments of the iterated subdivide-and-rotate construction: each
/// segment is cut into m equal pieces and every piece turns by 2π/m about its
/// own starting point. Turns accumulate from stage to stage.
pub fn hrycak_segments(m: u32) -> Result<Vec<PlanarSegment>> {
    if !(2..=5).contains(&m) {
        return Err(PointsetError::OutOfRange { what: "m", value: m as i64, range: "2..=5" });
    }
    let turn = 2.0 * PI / m as f64;
    let mut segs = vec![PlanarSegment { start: [0.0, 0.0], angle: 0.0, length: 1.0 }];
    for _ in 0..m {
        let mut next = Vec::with_capacity(segs.len() * m as usize);
        for s in &segs {
            let piece = s.length / m as f64;
            let (c, sn) = (s.angle.cos(), s.angle.sin());
            for i in 0..m {
                let t = i as f64 * piece;
                next.push(PlanarSegment {
                    start: [s.start[0] + t * c, s.start[1] + t * sn],
                    angle: s.angle + turn,
                    length: piece,
                });
            }
        }
        segs = next;
    }
    Ok(segs)
}

/// Cloud sampling the Hrycak set for parameter m at resolution m^{-m}.
pub fn hrycak(m: u32) -> Result<RegularCloud> {
    let segs = hrycak_segments(m)?;
    let res = (m as f64).powi(-(m as i32));
    let cloud = segments_cloud(&segs, res)?;
    Ok(cloud.with_provenance(provenance("hrycak", serde_json::json!({ "m": m }))))
}

/// Sample planar segments at cell midpoints with spacing at most `resolution`.
/// Samples that land within resolution/4 of an earlier one are merged into it.
pub fn segments_cloud(segs: &[PlanarSegment], resolution: f64) -> Result<RegularCloud> {
    let mut coords: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let merge = resolution / 4.0;
    let mut buckets: std::collections::HashMap<(i64, i64), Vec<usize>> = Default::default();
    for s in segs {
        let count = ((s.length / resolution) - 1e-9).ceil().max(1.0) as usize;
        let step = s.length / count as f64;
        let (c, sn) = (s.angle.cos(), s.angle.sin());
        for i in 0..count {
            let t = (i as f64 + 0.5) * step;
            let p = [s.start[0] + t * c, s.start[1] + t * sn];
            let key = ((p[0] / merge).floor() as i64, (p[1] / merge).floor() as i64);
            let mut hit = None;
            'search: for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(ids) = buckets.get(&(key.0 + dx, key.1 + dy)) {
                        for &j in ids {
                            if dist(&coords[2 * j..2 * j + 2], &p) < merge {
                                hit = Some(j);
                                break 'search;
                            }
                        }
                    }
                }
            }
            match hit {
                Some(j) => weights[j] += step,
                None => {
                    buckets.entry(key).or_default().push(weights.len());
                    coords.extend_from_slice(&p);
                    weights.push(step);
                }
            }
        }
    }
    RegularCloud::new(2, 1, coords, weights, resolution)
}

/// Straight segment between two points of R^d.
pub fn segment(a: &[f64], b: &[f64], resolution: f64) -> Result<RegularCloud> {
    let len = dist(a, b);
    let count = ((len / resolution) - 1e-9).ceil().max(1.0) as usize;
    let step = len / count as f64;
    let mut coords = Vec::with_capacity(count * a.len());
    for i in 0..count {
        let t = (i as f64 + 0.5) / count as f64;
        coords.extend(a.iter().zip(b).map(|(x, y)| x + t * (y - x)));
    }
    Ok(RegularCloud::new(a.len(), 1, coords, vec![step; count], step)?
        .with_provenance(provenance("segment", serde_json::json!({ "a": a, "b": b }))))
}

/// Planar circle sampled at equal arclength steps.
pub fn circle(center: [f64; 2], radius: f64, resolution: f64) -> Result<RegularCloud> {
    let len = 2.0 * PI * radius;
    let count = ((len / resolution) - 1e-9).ceil().max(3.0) as usize;
    let step = len / count as f64;
    let mut coords = Vec::with_capacity(2 * count);
    for i in 0..count {
        let t = 2.0 * PI * (i as f64 + 0.5) / count as f64;
        coords.push(center[0] + radius * t.cos());
        coords.push(center[1] + radius * t.sin());
    }
    Ok(RegularCloud::new(2, 1, coords, vec![step; count], step)?
        .with_provenance(provenance("circle", serde_json::json!({ "center": center, "radius": radius }))))
}

/// Flat n-disc of the given radius in the affine plane `center + plane`,
/// sampled on a square grid of side `resolution` in the plane's coordinates.
pub fn disc(center: &[f64], plane: &Subspace, radius: f64, resolution: f64) -> Result<RegularCloud> {
    let coords = disc_points(center, plane, radius, resolution);
    let count = coords.len() / center.len();
    if count == 0 {
        return Err(PointsetError::Empty);
    }
    let w = resolution.powi(plane.dim() as i32);
    Ok(RegularCloud::new(center.len(), plane.dim(), coords, vec![w; count], resolution)?
        .with_provenance(provenance("disc", serde_json::json!({ "radius": radius }))))
}

pub(crate) fn disc_points(center: &[f64], plane: &Subspace, radius: f64, resolution: f64) -> Vec<f64> {
    let n = plane.dim();
    let half = (radius / resolution).ceil() as i64;
    let mut out = Vec::new();
    let mut idx = vec![-half; n];
    if n == 0 {
        return center.to_vec();
    }
    loop {
        let t: Vec<f64> = idx.iter().map(|&i| (i as f64 + 0.5) * resolution).collect();
        if t.iter().map(|v| v * v).sum::<f64>() < radius * radius {
            let p = plane.embed(&t);
            out.extend(center.iter().zip(&p).map(|(a, b)| a + b));
        }
        let mut axis = 0;
        loop {
            if axis == n {
                return out;
            }
            idx[axis] += 1;
            if idx[axis] < half {
                break;
            }
            idx[axis] = -half;
            axis += 1;
        }
    }
}

/// Graph {v + f(v)} over the box [lo, hi]^n of `base` coordinates, where `f`
/// maps base coordinates to coordinates in the orthogonal complement of `base`.
pub fn lipschitz_graph_cloud(
    f: &dyn Fn(&[f64]) -> Vec<f64>,
    base: &Subspace,
    lipschitz: f64,
    resolution: f64,
    domain: (f64, f64),
) -> Result<RegularCloud> {
    let (d, n) = (base.ambient_dim(), base.dim());
    let comp = base.complement();
    let per_axis = (((domain.1 - domain.0) / resolution) - 1e-9).ceil().max(1.0) as usize;
    let h = (domain.1 - domain.0) / per_axis as f64;
    let total = per_axis.pow(n as u32);
    let grid_point = |flat: usize| -> Vec<f64> {
        let mut rem = flat;
        (0..n)
            .map(|_| {
                let i = rem % per_axis;
                rem /= per_axis;
                domain.0 + (i as f64 + 0.5) * h
            })
            .collect()
    };
    let values: Vec<Vec<f64>> = (0..total).map(|k| f(&grid_point(k))).collect();
    // Empirical Lipschitz check on grid neighbours.
    for k in 0..total {
        let mut stride = 1;
        for _axis in 0..n {
            let i = (k / stride) % per_axis;
            if i + 1 < per_axis {
                let j = k + stride;
                let ratio = dist(&values[k], &values[j]) / h;
                if ratio > lipschitz * (1.0 + 1e-9) + 1e-12 {
                    return Err(PointsetError::LipschitzViolation {
                        bound: lipschitz,
                        ratio,
                        s: grid_point(k),
                        t: grid_point(j),
                    });
                }
            }
            stride *= per_axis;
        }
    }
    let mut coords = Vec::with_capacity(total * d);
    let mut weights = Vec::with_capacity(total);
    for (k, value) in values.iter().enumerate() {
        let t = grid_point(k);
        let mut p = base.embed(&t);
        let off = comp.embed(value);
        for (a, b) in p.iter_mut().zip(&off) {
            *a += b;
        }
        let mut jac = DMatrix::zeros(d - n, n);
        for axis in 0..n {
            let mut up = t.clone();
            let mut down = t.clone();
            up[axis] += 0.5 * h;
            down[axis] -= 0.5 * h;
            let (fu, fd) = (f(&up), f(&down));
            for r in 0..d - n {
                jac[(r, axis)] = (fu[r] - fd[r]) / h;
            }
        }
        let gram = DMatrix::identity(n, n) + jac.transpose() * &jac;
        let area = gram.determinant().max(0.0).sqrt();
        coords.extend_from_slice(&p);
        weights.push(h.powi(n as i32) * area);
    }
    Ok(RegularCloud::new(d, n, coords, weights, h)?
        .with_provenance(provenance("graph", serde_json::json!({ "lipschitz": lipschitz, "resolution": h }))))
}

/// The planar tent t ↦ slope·|t − 1/2| over [0,1].
pub fn tent_graph(slope: f64, resolution: f64) -> Result<RegularCloud> {
    let base = Subspace::coordinate(2, &[0]);
    let f = move |t: &[f64]| vec![slope * (t[0] - 0.5).abs()];
    lipschitz_graph_cloud(&f, &base, slope.abs(), resolution, (0.0, 1.0))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegularityReport {
    pub c0_estimate: f64,
    pub worst_center: Vec<f64>,
    pub worst_radius: f64,
    pub samples: usize,
}

/// Sample balls centered on the cloud with radii log-uniform in [4·resolution, diameter].
pub fn estimate_regularity<R: Rng + ?Sized>(cloud: &RegularCloud, trials: usize, rng: &mut R) -> RegularityReport {
    let diam = cloud.diameter();
    let r_min = (4.0 * cloud.resolution()).min(diam);
    let (lmin, lmax) = (r_min.ln(), diam.max(r_min).ln());
    let n = cloud.n() as i32;
    let mut report = RegularityReport { c0_estimate: 1.0, worst_center: cloud.point(0).to_vec(), worst_radius: r_min, samples: 0 };
    for _ in 0..trials.max(1) {
        let i = rng.gen_range(0..cloud.len());
        let r = if lmax > lmin { rng.gen_range(lmin..=lmax).exp() } else { r_min };
        let ball = Ball::new(cloud.point(i).to_vec(), r);
        let mass = cloud.ball_mass(&ball);
        let scale = r.powi(n);
        let ratio = (mass / scale).max(scale / mass);
        report.samples += 1;
        if ratio > report.c0_estimate {
            report.c0_estimate = ratio;
            report.worst_center = ball.center;
            report.worst_radius = r;
        }
    }
    report
}

/// Occupied half-open grid cells of side `grid` in `v`'s coordinates covering
/// the projection of the cloud points inside `ball`.
pub fn shadow_cells(cloud: &RegularCloud, v: &Subspace, ball: &Ball, grid: f64) -> Result<HashSet<Vec<i64>>> {
    if v.ambient_dim() != cloud.dim() {
        return Err(PointsetError::DimensionMismatch { expected: cloud.dim(), got: v.ambient_dim() });
    }
    if grid < cloud.resolution() * (1.0 - 1e-12) {
        return Err(PointsetError::GridTooFine { grid, resolution: cloud.resolution() });
    }
    let mut cells = HashSet::new();
    for i in cloud.ball_indices(ball) {
        let c = v.coords(cloud.point(i));
        cells.insert(c.iter().map(|t| (t / grid).floor() as i64).collect::<Vec<_>>());
    }
    Ok(cells)
}

/// Outer grid estimate of H^n(π_V(E ∩ ball)) at scale `grid`.
pub fn projection_measure(cloud: &RegularCloud, v: &Subspace, ball: &Ball, grid: f64) -> Result<f64> {
    let cells = shadow_cells(cloud, v, ball, grid)?;
    Ok(cells.len() as f64 * grid.powi(v.dim() as i32))
}

/// A center plane together with the smallest normalised shadow over sampled
/// nearby planes, minus δ.
#[derive(Debug, Clone)]
pub struct PbpWitness {
    pub center: Subspace,
    pub margin: f64,
}

/// Candidate center planes: equally spaced lines in the plane, invariant-measure draws otherwise.
fn pbp_centers<R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> Vec<Subspace> {
    if d == 2 && n == 1 {
        (0..36).map(|k| Subspace::planar_line(k as f64 * PI / 36.0)).collect()
    } else {
        (0..32).map(|_| grassmann::sample_haar(d, n, rng).expect("valid dimensions")).collect()
    }
}

/// Best margin over candidate centers V0 of min_{V} |π_V(E ∩ ball)|/r^n − δ,
/// V ranging over V0 and `n_directions − 1` samples from the δ-ball about V0.
pub fn pbp_margin<R: Rng + ?Sized>(cloud: &RegularCloud, ball: &Ball, delta: f64, n_directions: usize, rng: &mut R) -> Result<PbpWitness> {
    let scale = ball.radius.powi(cloud.n() as i32);
    let grid = cloud.resolution();
    let mut best: Option<PbpWitness> = None;
    for v0 in pbp_centers(cloud.dim(), cloud.n(), rng) {
        let gb = GrassmannBall::new(v0.clone(), delta.min(2.0))?;
        let mut worst = projection_measure(cloud, &v0, ball, grid)? / scale;
        for _ in 1..n_directions {
            let v = gb.sample(rng);
            worst = worst.min(projection_measure(cloud, &v, ball, grid)? / scale);
        }
        let margin = worst - delta;
        if best.as_ref().map_or(true, |b| margin > b.margin) {
            best = Some(PbpWitness { center: v0, margin });
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// A witness for big projections in plenty of directions in `ball`, if the
/// sampled search finds one with nonnegative margin.
pub fn check_pbp<R: Rng + ?Sized>(cloud: &RegularCloud, ball: &Ball, delta: f64, n_directions: usize, rng: &mut R) -> Result<Option<PbpWitness>> {
    let n_directions = n_directions.max(16);
    let w = pbp_margin(cloud, ball, delta, n_directions, rng)?;
    Ok(if w.margin >= 0.0 { Some(w) } else { None })
}

/// Weight of cloud points in `ball` within 2·max(resolution) of the graph cloud.
pub fn graph_overlap(cloud: &RegularCloud, graph: &RegularCloud, ball: &Ball) -> Result<f64> {
    if cloud.dim() != graph.dim() {
        return Err(PointsetError::DimensionMismatch { expected: cloud.dim(), got: graph.dim() });
    }
    let tol = 2.0 * cloud.resolution().max(graph.resolution());
    Ok(cloud
        .ball_indices(ball)
        .into_iter()
        .filter(|&i| !graph.closed_ball_indices(cloud.point(i), tol).is_empty())
        .map(|i| cloud.weight(i))
        .sum())
}

/// JSON sidecar stored next to a cloud CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CloudSidecar {
    pub n: usize,
    pub resolution: f64,
    pub generator: String,
    pub params: serde_json::Value,
    pub seed: Option<u64>,
}

/// Path of the sidecar for a cloud CSV: same stem, `.json` extension.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn write_cloud(cloud: &RegularCloud, csv_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    let mut header: Vec<String> = (1..=cloud.dim()).map(|k| format!("x{k}")).collect();
    header.push("weight".into());
    w.write_record(&header)?;
    for i in 0..cloud.len() {
        let mut row: Vec<String> = cloud.point(i).iter().map(|x| format!("{x:?}")).collect();
        row.push(format!("{:?}", cloud.weight(i)));
        w.write_record(&row)?;
    }
    w.flush()?;
    let prov = cloud.provenance().cloned().unwrap_or_else(|| provenance("custom", serde_json::Value::Null));
    let side = CloudSidecar { n: cloud.n(), resolution: cloud.resolution(), generator: prov.generator, params: prov.params, seed: prov.seed };
    fs::write(sidecar_path(csv_path), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

pub fn read_cloud(csv_path: &Path) -> Result<RegularCloud> {
    let side: CloudSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(csv_path))?)?;
    let mut r = csv::Reader::from_path(csv_path)?;
    let header = r.headers()?.clone();
    let dim = header.len().checked_sub(1).filter(|d| *d > 0).ok_or_else(|| PointsetError::Format("need at least x1 and weight".into()))?;
    for (k, name) in header.iter().take(dim).enumerate() {
        if name != format!("x{}", k + 1) {
            return Err(PointsetError::Format(format!("unexpected column {name:?}")));
        }
    }
    if &header[dim] != "weight" {
        return Err(PointsetError::Format("last column must be weight".into()));
    }
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        for k in 0..=dim {
            let v: f64 = rec[k].trim().parse().map_err(|_| PointsetError::Format(format!("bad number {:?}", &rec[k])))?;
            if k == dim {
                weights.push(v);
            } else {
                coords.push(v);
            }
        }
    }
    let cloud = RegularCloud::new(dim, side.n, coords, weights, side.resolution)?;
    Ok(cloud.with_provenance(Provenance { generator: side.generator, params: side.params, seed: side.seed }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn unit_segment(res: f64) -> RegularCloud {
        segment(&[0.0, 0.0], &[1.0, 0.0], res).unwrap()
    }

    #[test]
    fn four_corners_counts_and_mass() {
        let c1 = four_corners(1).unwrap();
        assert_eq!(c1.len(), 4);
        assert!((c1.total_weight() - 1.0).abs() < 1e-12);
        let c2 = four_corners(2).unwrap();
        assert_eq!(c2.len(), 16);
        assert!((c2.total_weight() - 1.0).abs() < 1e-12);
        let mut min = f64::INFINITY;
        for i in 0..16 {
            for j in 0..i {
                min = min.min(dist(c2.point(i), c2.point(j)));
            }
        }
        // Siblings at generation 2 sit 3/16 apart.
        assert!((min - 3.0 / 16.0).abs() < 1e-12);
        assert!(four_corners(0).is_err());
        assert!(four_corners(9).is_err());
    }

    #[test]
    fn four_corners_x_shadow_is_the_quarter_cantor_set() {
        for k in 1..=6u32 {
            let cloud = four_corners(k).unwrap();
            let grid = 0.25f64.powi(k as i32);
            // Brute-force oracle: distinct floor(x / grid) values.
            let mut cells: Vec<i64> = (0..cloud.len()).map(|i| (cloud.point(i)[0] / grid).floor() as i64).collect();
            cells.sort_unstable();
            cells.dedup();
            assert_eq!(cells.len(), 1 << k);
            let m = projection_measure(&cloud, &Subspace::coordinate(2, &[0]), &cloud.enclosing_ball(), grid).unwrap();
            assert!((m - 0.5f64.powi(k as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn hrycak_segment_counts() {
        let s2 = hrycak_segments(2).unwrap();
        assert_eq!(s2.len(), 4);
        assert!(s2.iter().all(|s| (s.length - 0.25).abs() < 1e-15));
        let s3 = hrycak_segments(3).unwrap();
        assert_eq!(s3.len(), 27);
        assert!(s3.iter().all(|s| (s.length - 1.0 / 27.0).abs() < 1e-15));
        assert!(hrycak(1).is_err() && hrycak(6).is_err());
        let c = hrycak(3).unwrap();
        assert!((c.total_weight() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hrycak_projections_shrink() {
        let max_shadow = |m: u32| {
            let c = hrycak(m).unwrap();
            let ball = c.enclosing_ball();
            (0..180)
                .map(|k| projection_measure(&c, &Subspace::planar_line(k as f64 * PI / 180.0), &ball, c.resolution()).unwrap())
                .fold(0.0, f64::max)
        };
        assert!(max_shadow(4) < max_shadow(2));
    }

    #[test]
    fn flat_and_tent_graph_mass() {
        let base = Subspace::coordinate(2, &[0]);
        let res = 1e-3;
        let flat = lipschitz_graph_cloud(&|_| vec![0.0], &base, 1.0, res, (0.0, 1.0)).unwrap();
        assert!((flat.total_weight() - 1.0).abs() <= res);
        let tent = tent_graph(1.0, res).unwrap();
        assert!((tent.total_weight() - 2f64.sqrt()).abs() <= 2.0 * res);
    }

    #[test]
    fn sine_graph_matches_arclength_quadrature() {
        let base = Subspace::coordinate(2, &[0]);
        let f = |t: &[f64]| vec![0.2 * (2.0 * PI * t[0]).sin()];
        let cloud = lipschitz_graph_cloud(&f, &base, 0.2 * 2.0 * PI, 2e-3, (0.0, 1.0)).unwrap();
        // Composite Simpson on sqrt(1 + f'(t)^2), independent of the sampler.
        let m = 20_000;
        let g = |t: f64| (1.0 + (0.4 * PI * (2.0 * PI * t).cos()).powi(2)).sqrt();
        let h = 1.0 / m as f64;
        let mut s = g(0.0) + g(1.0);
        for i in 1..m {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
        }
        let arclength = s * h / 3.0;
        assert!((cloud.total_weight() / arclength - 1.0).abs() < 0.01);
    }

    #[test]
    fn lipschitz_violation_has_witness() {
        let base = Subspace::coordinate(2, &[0]);
        let f = |t: &[f64]| vec![3.0 * t[0]];
        match lipschitz_graph_cloud(&f, &base, 1.0, 0.01, (0.0, 1.0)) {
            Err(PointsetError::LipschitzViolation { ratio, s, t, .. }) => {
                assert!((ratio - 3.0).abs() < 1e-9);
                assert!((s[0] - t[0]).abs() > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn close_points_are_rejected() {
        let err = RegularCloud::new(1, 1, vec![0.0, 0.01], vec![1.0, 1.0], 0.1).unwrap_err();
        assert!(matches!(err, PointsetError::TooClose { .. }));
        assert!(matches!(RegularCloud::new(1, 1, vec![], vec![], 0.1), Err(PointsetError::Empty)));
    }

    #[test]
    fn segment_regularity() {
        let cloud = unit_segment(1e-3);
        let rep = estimate_regularity(&cloud, 2000, &mut rng(1));
        // A ball of radius r centered on a sample holds 2⌊r/h⌋ + 1 samples of
        // weight h, so the discrete ratio is at most 2 + h/r ≤ 2.25 for r ≥ 4h.
        let h = cloud.resolution();
        let r = rep.worst_radius;
        let interior = (2.0 * (r / h).floor() + 1.0) * h / r;
        assert!(rep.c0_estimate <= interior.max(2.0) + 1e-9, "{rep:?}");
        assert!(rep.c0_estimate <= 2.25, "{rep:?}");
    }

    #[test]
    fn four_corners_regularity() {
        let cloud = four_corners(4).unwrap();
        let rep = estimate_regularity(&cloud, 2000, &mut rng(2));
        // Brute-force scan oracle over every center and a radius ladder.
        let mut scan: f64 = 1.0;
        let diam = cloud.diameter();
        for i in 0..cloud.len() {
            let mut r = 4.0 * cloud.resolution();
            while r <= diam {
                let m: f64 = (0..cloud.len()).filter(|&j| dist(cloud.point(i), cloud.point(j)) < r).map(|j| cloud.weight(j)).sum();
                scan = scan.max((m / r).max(r / m));
                r *= 1.1;
            }
        }
        assert!(rep.c0_estimate <= scan * 1.1 + 1e-9);
        assert!(scan <= 10.0 && rep.c0_estimate <= 10.0, "{scan} {rep:?}");
    }

    #[test]
    fn disc_interior_density() {
        let plane = Subspace::coordinate(3, &[0, 1]);
        let cloud = disc(&[0.0, 0.0, 0.0], &plane, 1.0, 0.01).unwrap();
        for r in [0.1, 0.3, 0.5] {
            let m = cloud.ball_mass(&Ball::new(vec![0.1, 0.0, 0.0], r));
            assert!((m / (r * r) - PI).abs() < 0.05, "{r} {m}");
        }
    }

    #[test]
    fn segment_projections() {
        let res = 1e-3;
        let cloud = unit_segment(res);
        let ball = Ball::new(vec![0.0, 0.0], 2.0);
        let grid = 1e-3;
        let along = projection_measure(&cloud, &Subspace::coordinate(2, &[0]), &ball, grid).unwrap();
        assert!((along - 1.0).abs() <= grid);
        let across = projection_measure(&cloud, &Subspace::coordinate(2, &[1]), &ball, grid).unwrap();
        assert!(across <= grid);
        assert!(matches!(
            projection_measure(&cloud, &Subspace::coordinate(2, &[0]), &ball, 1e-4),
            Err(PointsetError::GridTooFine { .. })
        ));
    }

    #[test]
    fn four_corners_tiling_direction() {
        let cloud = four_corners(4).unwrap();
        let ball = cloud.enclosing_ball();
        let grid = cloud.resolution();
        // Slope-1/2 line: the four sub-squares project onto abutting intervals.
        let v = Subspace::line(&[2.0, 1.0]).unwrap();
        let m = projection_measure(&cloud, &v, &ball, grid).unwrap();
        let full_square = 3.0 / 5f64.sqrt();
        assert!(m >= 0.4 * full_square, "{m}");
        // Brute-force direction search: the tiling direction is near the top.
        let best = (0..360)
            .map(|k| projection_measure(&cloud, &Subspace::planar_line(k as f64 * PI / 360.0), &ball, grid).unwrap())
            .fold(0.0, f64::max);
        assert!(m >= 0.8 * best);
    }

    #[test]
    fn projection_measure_is_monotone_and_subadditive() {
        let cloud = four_corners(3).unwrap();
        let v = Subspace::planar_line(0.7);
        let grid = cloud.resolution();
        let big = Ball::new(vec![0.5, 0.5], 0.8);
        let small = Ball::new(vec![0.5, 0.5], 0.4);
        let whole = projection_measure(&cloud, &v, &big, grid).unwrap();
        assert!(projection_measure(&cloud, &v, &small, grid).unwrap() <= whole);
        // Split the big ball along x = 0.5 by reweighting clouds.
        let side = |keep_left: bool| {
            let idx: Vec<usize> = (0..cloud.len()).filter(|&i| (cloud.point(i)[0] < 0.5) == keep_left).collect();
            let coords = idx.iter().flat_map(|&i| cloud.point(i).to_vec()).collect();
            RegularCloud::new(2, 1, coords, idx.iter().map(|&i| cloud.weight(i)).collect(), cloud.resolution()).unwrap()
        };
        let a = projection_measure(&side(true), &v, &big, grid).unwrap();
        let b = projection_measure(&side(false), &v, &big, grid).unwrap();
        assert!(whole <= a + b + 1e-12);
    }

    #[test]
    fn segment_has_pbp_near_its_axis() {
        let cloud = unit_segment(1e-3);
        let ball = Ball::new(vec![0.5, 0.0], 0.5);
        let w = check_pbp(&cloud, &ball, 0.1, 32, &mut rng(3)).unwrap().expect("witness");
        assert!(metric_to_x(&w.center) < 0.5);
    }

    fn metric_to_x(v: &Subspace) -> f64 {
        grassmann::metric(v, &Subspace::coordinate(2, &[0])).unwrap()
    }

    #[test]
    fn four_corners_pbp_margin_decays() {
        let mut last = f64::INFINITY;
        for k in 2..=5 {
            let cloud = four_corners(k).unwrap();
            let ball = cloud.enclosing_ball();
            let w = pbp_margin(&cloud, &ball, 0.3, 32, &mut rng(4)).unwrap();
            assert!(w.margin < last, "k={k}: {} !< {last}", w.margin);
            last = w.margin;
        }
    }

    #[test]
    fn lipschitz_graph_has_pbp() {
        let cloud = tent_graph(1.0, 2e-3).unwrap();
        let mut r = rng(5);
        for ball in [Ball::new(vec![0.5, 0.0], 0.3), Ball::new(vec![0.2, 0.3], 0.1), cloud.enclosing_ball()] {
            assert!(check_pbp(&cloud, &ball, 0.2, 32, &mut r).unwrap().is_some());
        }
    }

    #[test]
    fn pbp_is_monotone_in_delta() {
        let cloud = tent_graph(1.0, 2e-3).unwrap();
        let ball = Ball::new(vec![0.5, 0.2], 0.3);
        for seed in 0..3 {
            assert!(check_pbp(&cloud, &ball, 0.2, 24, &mut rng(seed)).unwrap().is_some());
            assert!(check_pbp(&cloud, &ball, 0.09, 24, &mut rng(seed + 10)).unwrap().is_some());
        }
    }

    #[test]
    fn overlaps() {
        let seg = unit_segment(1e-2);
        let ball = Ball::new(vec![0.5, 0.0], 0.3);
        assert!((graph_overlap(&seg, &seg, &ball).unwrap() - seg.ball_mass(&ball)).abs() < 1e-12);

        let fc = four_corners(3).unwrap();
        let axis = segment(&[0.0, 0.0], &[1.0, 0.0], fc.resolution()).unwrap();
        let ball = fc.enclosing_ball();
        // Distance histogram oracle: only the bottom row sits within tolerance.
        let tol = 2.0 * fc.resolution();
        let near: f64 = (0..fc.len()).filter(|&i| fc.point(i)[1].abs() <= tol).map(|i| fc.weight(i)).sum();
        assert!((graph_overlap(&fc, &axis, &ball).unwrap() - near).abs() < 1e-12);
        assert!(near <= 0.25 * fc.total_weight());

        let rotated = segment(&[-0.5, -0.5], &[0.5, 0.5], 1e-2).unwrap();
        let flat = segment(&[-0.5, 0.0], &[0.5, 0.0], 1e-2).unwrap();
        let o = graph_overlap(&flat, &rotated, &Ball::new(vec![0.0, 0.0], 0.5)).unwrap();
        assert!(o > 0.0 && o <= 0.08, "{o}");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fc.csv");
        let cloud = four_corners(2).unwrap();
        write_cloud(&cloud, &path).unwrap();
        let back = read_cloud(&path).unwrap();
        assert_eq!(back.coords(), cloud.coords());
        assert_eq!(back.weights(), cloud.weights());
        assert_eq!(back.provenance().unwrap().generator, "four-corners");
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x1,x2,weight\n"));
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(hrycak(4).unwrap().coords(), hrycak(4).unwrap().coords());
        assert_eq!(four_corners(5).unwrap().coords(), four_corners(5).unwrap().coords());
    }

    proptest! {
        #[test]
        fn four_corners_mass_is_conserved(k in 1u32..7) {
            let a = four_corners(k).unwrap().total_weight();
            let b = four_corners(k + 1).unwrap().total_weight();
            prop_assert!((a - b).abs() < 1e-12 && (a - 1.0).abs() < 1e-12);
        }

        #[test]
        fn larger_ball_larger_shadow(seed in 0u64..500, r in 0.05f64..0.6) {
            let cloud = four_corners(3).unwrap();
            let mut g = rng(seed);
            let v = grassmann::sample_haar(2, 1, &mut g).unwrap();
            let c = vec![g.gen_range(0.0..1.0), g.gen_range(0.0..1.0)];
            let small = projection_measure(&cloud, &v, &Ball::new(c.clone(), r), cloud.resolution()).unwrap();
            let big = projection_measure(&cloud, &v, &Ball::new(c, 1.5 * r), cloud.resolution()).unwrap();
            prop_assert!(small <= big);
        }
    }
}
