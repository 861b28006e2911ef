//! Truncated cones around an n-plane's orthogonal axis, scale counting in
//! dyadic annuli, and the disc augmentation of separated leaves.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cubes::{CubeId, CubeLattice};
use crate::grassmann::{self, dist, dist2, norm, GrassmannError, Subspace};
use crate::pointset::{self, PointsetError, RegularCloud};
use crate::stopping::GridFunction;

#[derive(Debug, Error)]
pub enum ConeError {
    #[error("leaves {0} and {1} violate the 10-ball separation")]
    NotSeparated(CubeId, CubeId),
    #[error("plane has dimension {got}, cloud has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Pointset(#[from] PointsetError),
    #[error(transparent)]
    Grassmann(#[from] GrassmannError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, ConeError>;

/// Points y with r ≤ |y − apex| ≤ R and |π_V(y − apex)| ≤ α|y − apex|.
#[derive(Debug, Clone)]
pub struct TruncatedCone {
    pub apex: Vec<f64>,
    pub plane: Subspace,
    pub alpha: f64,
    pub inner: f64,
    pub outer: f64,
}

impl TruncatedCone {
    pub fn new(apex: Vec<f64>, plane: Subspace, alpha: f64, inner: f64, outer: f64) -> Self {
        assert!(alpha > 0.0 && alpha <= 1.0 && 0.0 < inner && inner < outer, "bad cone parameters");
        Self { apex, plane, alpha, inner, outer }
    }

    /// The annulus 2^{-j-1} ≤ |y − apex| ≤ 2^{-j}.
    pub fn dyadic(apex: Vec<f64>, plane: Subspace, alpha: f64, j: i32) -> Self {
        Self::new(apex, plane, alpha, 2f64.powi(-j - 1), 2f64.powi(-j))
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        let z: Vec<f64> = y.iter().zip(&self.apex).map(|(a, b)| a - b).collect();
        let len = norm(&z);
        len >= self.inner && len <= self.outer && in_aperture(&self.plane, &z, len, self.alpha)
    }
}

fn in_aperture(plane: &Subspace, z: &[f64], len: f64, alpha: f64) -> bool {
    norm(&plane.coords(z)) <= alpha * len
}

/// Scales j ∈ 0..=j_max whose dyadic annulus around `x` meets the cone.
fn hit_scales(cloud: &RegularCloud, x: &[f64], v: &Subspace, alpha: f64, j_max: u32) -> Vec<bool> {
    let mut hit = vec![false; j_max as usize + 1];
    for i in cloud.closed_ball_indices(x, 1.0) {
        let z: Vec<f64> = cloud.point(i).iter().zip(x).map(|(a, b)| a - b).collect();
        let len = norm(&z);
        if len == 0.0 || !in_aperture(v, &z, len, alpha) {
            continue;
        }
        let j0 = (-len.log2()).floor() as i64;
        for j in [j0 - 1, j0, j0 + 1] {
            if (0..=j_max as i64).contains(&j) {
                let (lo, hi) = (2f64.powi(-(j as i32) - 1), 2f64.powi(-(j as i32)));
                if lo <= len && len <= hi {
                    hit[j as usize] = true;
                }
            }
        }
    }
    hit
}

/// Number of scales j ∈ 0..=j_max whose dyadic-annulus cone around `x`
/// contains a cloud point.
pub fn cone_scale_count(cloud: &RegularCloud, x: &[f64], v: &Subspace, alpha: f64, j_max: u32) -> usize {
    hit_scales(cloud, x, v, alpha, j_max).iter().filter(|&&h| h).count()
}

/// Weight of the cloud inside the dyadic-annulus cone at scale j.
pub fn cone_mass(cloud: &RegularCloud, x: &[f64], v: &Subspace, alpha: f64, j: i32) -> f64 {
    let cone = TruncatedCone::dyadic(x.to_vec(), v.clone(), alpha, j);
    cloud.closed_ball_indices(x, cone.outer).into_iter().filter(|&i| cone.contains(cloud.point(i))).map(|i| cloud.weight(i)).sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeafSelection {
    pub selected: Vec<CubeId>,
    /// For each input leaf, a selected leaf whose 50-fold ball covers its 10-fold ball.
    pub covered_by: Vec<(CubeId, CubeId)>,
}

fn separated(lattice: &CubeLattice, a: CubeId, b: CubeId) -> bool {
    dist(&lattice.cube(a).center, &lattice.cube(b).center) >= 10.0 * (lattice.ball_radius(a) + lattice.ball_radius(b))
}

/// Greedy largest-first subset with pairwise disjoint 10-fold balls.
pub fn select_separated_leaves(lattice: &CubeLattice, leaves: &[CubeId]) -> LeafSelection {
    let mut order = leaves.to_vec();
    order.sort_by(|&a, &b| lattice.ball_radius(b).total_cmp(&lattice.ball_radius(a)).then(a.cmp(&b)));
    let mut selected: Vec<CubeId> = Vec::new();
    let mut covered_by = Vec::new();
    for q in order {
        match selected.iter().find(|&&s| !separated(lattice, q, s)) {
            Some(&s) => covered_by.push((q, s)),
            None => {
                selected.push(q);
                covered_by.push((q, q));
            }
        }
    }
    covered_by.sort();
    LeafSelection { selected, covered_by }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscInfo {
    pub leaf: CubeId,
    pub center: Vec<f64>,
    pub radius: f64,
    pub mass: f64,
    pub points: usize,
    /// Multiples of 2·resolution the disc was moved along the plane's complement.
    pub nudges: u32,
}

#[derive(Debug, Clone)]
pub struct AugmentedCloud {
    pub base: RegularCloud,
    pub discs: Vec<DiscInfo>,
    pub combined: RegularCloud,
}

impl AugmentedCloud {
    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::json!({
            "base_points": self.base.len(),
            "base_mass": self.base.total_weight(),
            "combined_points": self.combined.len(),
            "combined_mass": self.combined.total_weight(),
            "discs": self.discs,
        })
    }
}

/// Adds, for each selected leaf, a flat disc parallel to `plane` centered at
/// the cube's center with radius ℓ/4 and total weight μ(Q).
pub fn augment_with_discs(cloud: &RegularCloud, lattice: &CubeLattice, selected: &[CubeId], plane: &Subspace, disc_resolution: f64) -> Result<AugmentedCloud> {
    if plane.ambient_dim() != cloud.dim() || plane.dim() != cloud.n() {
        return Err(ConeError::Dimension { expected: cloud.dim(), got: plane.ambient_dim() });
    }
    for (i, &a) in selected.iter().enumerate() {
        for &b in &selected[i + 1..] {
            if !separated(lattice, a, b) {
                return Err(ConeError::NotSeparated(a, b));
            }
        }
    }
    let res = cloud.resolution().min(disc_resolution);
    let normal = plane.complement();
    let push: Vec<f64> = normal.basis().column(0).iter().map(|x| x * 2.0 * res).collect();
    let mut coords = cloud.coords().to_vec();
    let mut weights = cloud.weights().to_vec();
    let mut discs = Vec::new();
    for &q in selected {
        let cube = lattice.cube(q);
        let radius = cube.side() / 4.0;
        let mut center = cube.center.clone();
        let mut nudges = 0;
        let pts = loop {
            let pts = pointset::disc_points(&center, plane, radius, disc_resolution);
            let collides = pts.chunks_exact(cloud.dim()).any(|p| !cloud.closed_ball_indices(p, res / 2.0).is_empty());
            if !collides || nudges == 16 {
                break pts;
            }
            nudges += 1;
            center.iter_mut().zip(&push).for_each(|(c, p)| *c += p);
        };
        let count = pts.len() / cloud.dim();
        if count == 0 {
            return Err(PointsetError::Empty.into());
        }
        coords.extend_from_slice(&pts);
        weights.extend(std::iter::repeat(cube.weight / count as f64).take(count));
        discs.push(DiscInfo { leaf: q, center, radius, mass: cube.weight, points: count, nudges });
    }
    let combined = RegularCloud::new(cloud.dim(), cloud.n(), coords, weights, res)?;
    Ok(AugmentedCloud { base: cloud.clone(), discs, combined })
}

/// f_V = Σ_Q 1_{π_V(B_Q)} on a grid of side `grid` in `v`'s coordinates.
pub fn multiplicity_function(lattice: &CubeLattice, leaves: &[CubeId], v: &Subspace, grid: f64) -> GridFunction {
    let centers: Vec<Vec<f64>> = leaves.iter().map(|&q| lattice.cube(q).center.clone()).collect();
    let radii: Vec<f64> = leaves.iter().map(|&q| lattice.ball_radius(q)).collect();
    shadow_multiplicity(&centers, &radii, v, grid)
}

/// Per-cell count of the shadows π_V(B(c, r)) of the given balls.
pub fn shadow_multiplicity(centers: &[Vec<f64>], radii: &[f64], v: &Subspace, grid: f64) -> GridFunction {
    let n = v.dim();
    let shadows: Vec<(Vec<f64>, f64)> = centers.iter().zip(radii).map(|(c, &r)| (v.coords(c), r)).collect();
    if shadows.is_empty() {
        return GridFunction::zeros(vec![0.0; n], grid, vec![1; n]);
    }
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for (c, r) in &shadows {
        for a in 0..n {
            lo[a] = lo[a].min(c[a] - r);
            hi[a] = hi[a].max(c[a] + r);
        }
    }
    let origin: Vec<f64> = lo.iter().map(|x| (x / grid).floor() * grid - grid).collect();
    let shape: Vec<usize> = (0..n).map(|a| ((hi[a] - origin[a]) / grid).ceil() as usize + 2).collect();
    let mut f = GridFunction::zeros(origin, grid, shape);
    let values: Vec<f64> = (0..f.len())
        .into_par_iter()
        .map(|cell| {
            let x = f.cell_center(cell);
            shadows.iter().filter(|(c, r)| dist2(&x, c) < r * r).count() as f64
        })
        .collect();
    f.values_mut().copy_from_slice(&values);
    f
}

/// A finite set of n-planes with a declared covering mesh.
#[derive(Debug, Clone)]
pub struct PlaneNet {
    pub planes: Vec<Subspace>,
    /// Largest distance from a probe plane to the net; exact for lines in the plane.
    pub mesh: f64,
}

/// Equally spaced lines when d = 2, n = 1; otherwise invariant-measure draws
/// with the mesh estimated from 2000 probes.
pub fn plane_net<R: Rng + ?Sized>(d: usize, n: usize, size: usize, rng: &mut R) -> Result<PlaneNet> {
    if d == 2 && n == 1 {
        let planes = (0..size).map(|k| Subspace::planar_line(k as f64 * std::f64::consts::PI / size as f64)).collect();
        return Ok(PlaneNet { planes, mesh: (std::f64::consts::PI / (2.0 * size as f64)).sin() });
    }
    let planes: Vec<Subspace> = (0..size).map(|_| grassmann::sample_haar(d, n, rng)).collect::<std::result::Result<_, _>>()?;
    let mut mesh = 0.0f64;
    for _ in 0..2000 {
        let probe = grassmann::sample_haar(d, n, rng)?;
        let near = planes.iter().map(|p| grassmann::metric(p, &probe).expect("same shape")).fold(f64::INFINITY, f64::min);
        mesh = mesh.max(near);
    }
    Ok(PlaneNet { planes, mesh })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConeProfile {
    /// E-mass fraction whose minimum count over all tested planes is ≥ H.
    pub fraction: f64,
    pub threshold: usize,
    pub mesh: f64,
    pub planes: usize,
    /// Per point of E0: minimum count over tested planes (points outside E have weight 0).
    pub min_counts: Vec<usize>,
    /// (point index, plane index, count), for export.
    pub counts: Vec<(usize, usize, usize)>,
}

impl ConeProfile {
    pub fn export_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["point_index", "V_index", "count"])?;
        for (p, v, c) in &self.counts {
            w.write_record([p.to_string(), v.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// For each point of E (positive entries of `subset_weights`), the minimum
/// over a plane net plus `haar_samples` random planes of its cone-scale count
/// against E0.
#[allow(clippy::too_many_arguments)]
pub fn cone_count_profile<R: Rng + ?Sized>(
    cloud: &RegularCloud,
    subset_weights: &[f64],
    alpha: f64,
    threshold: usize,
    j_max: u32,
    net_size: usize,
    haar_samples: usize,
    rng: &mut R,
) -> Result<ConeProfile> {
    let net = plane_net(cloud.dim(), cloud.n(), net_size, rng)?;
    let mut planes = net.planes;
    for _ in 0..haar_samples {
        planes.push(grassmann::sample_haar(cloud.dim(), cloud.n(), rng)?);
    }
    let members: Vec<usize> = (0..cloud.len()).filter(|&i| subset_weights[i] > 0.0).collect();
    let rows: Vec<Vec<usize>> = members
        .par_iter()
        .map(|&i| planes.iter().map(|v| cone_scale_count(cloud, cloud.point(i), v, alpha, j_max)).collect())
        .collect();
    let mut min_counts = vec![0; cloud.len()];
    let mut counts = Vec::new();
    let (mut good, mut total) = (0.0, 0.0);
    for (&i, row) in members.iter().zip(&rows) {
        let m = row.iter().copied().min().unwrap_or(0);
        min_counts[i] = m;
        total += subset_weights[i];
        if m >= threshold {
            good += subset_weights[i];
        }
        counts.extend(row.iter().enumerate().map(|(v, &c)| (i, v, c)));
    }
    Ok(ConeProfile { fraction: if total > 0.0 { good / total } else { 0.0 }, threshold, mesh: net.mesh, planes: planes.len(), min_counts, counts })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InclusionCertificate {
    pub samples: usize,
    /// Largest distance to `plane` of a plane annihilating a sampled cone vector.
    pub worst_distance: f64,
    pub holds: bool,
}

/// Samples unit vectors z with |π_V z| ≤ α|z| and checks that each is
/// orthogonal to some plane within δ of V.
pub fn certify_cone_inclusion<R: Rng + ?Sized>(plane: &Subspace, alpha: f64, delta: f64, samples: usize, rng: &mut R) -> Result<InclusionCertificate> {
    let d = plane.ambient_dim();
    let normal = plane.complement();
    let mut worst = 0.0f64;
    let mut holds = true;
    for _ in 0..samples {
        // A normal direction tilted into the plane by a random admissible amount.
        let a: Vec<f64> = (0..normal.dim()).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let b: Vec<f64> = (0..plane.dim()).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let (out, inside) = (normal.embed(&a), plane.embed(&b));
        let (lo, li) = (norm(&out), norm(&inside));
        if lo == 0.0 {
            continue;
        }
        let s = alpha * rng.gen::<f64>().sqrt();
        let c = (1.0 - s * s).sqrt();
        let z: Vec<f64> = (0..d).map(|k| c * out[k] / lo + if li > 0.0 { s * inside[k] / li } else { 0.0 }).collect();
        let ratio = norm(&plane.coords(&z)) / norm(&z);
        let v = grassmann::annihilating_plane(&z, plane, (4.0 * ratio).max(1e-12) * (1.0 + 1e-9))?;
        let gap = grassmann::metric(&v, plane)?;
        let residual = norm(&v.coords(&z)) / norm(&z);
        worst = worst.max(gap);
        if gap >= delta || residual > 1e-10 {
            holds = false;
        }
    }
    Ok(InclusionCertificate { samples, worst_distance: worst, holds })
}
