//! Width of cubes: diameters of fibre slices averaged over the affine
//! Grassmannian, their Carleson sums, fibre counting for slicing integrals,
//! and the cone-spanning graph used to bound widths by fibre cardinalities.

use std::collections::BTreeSet;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cubes::{CubeId, CubeLattice};
use crate::grassmann::{dist, dist2, norm, sample_haar, AffinePlane, Estimate, GrassmannError, Subspace};
use crate::pointset::{Ball, RegularCloud};
use crate::stopping::maximal_function;

#[derive(Debug, Error)]
pub enum WidthError {
    #[error("need at least {min} Monte Carlo fibres, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("tube radius {tube} is below the cloud resolution {resolution}")]
    ThinTube { tube: f64, resolution: f64 },
    #[error("cone graph needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("points {0} and {1} coincide")]
    Duplicate(usize, usize),
    #[error(transparent)]
    Grassmann(#[from] GrassmannError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, WidthError>;

/// Hits are merged into one cluster when closer than this many resolutions.
pub const CLUSTER_FACTOR: f64 = 3.0;
pub const MIN_FIBRES: usize = 100;

#[derive(Debug, Clone)]
pub struct FiberSlice {
    pub plane: AffinePlane,
    pub tube_radius: f64,
    pub hits: Vec<usize>,
}

/// Cloud points of `region` within `tube_radius` of `plane`.
pub fn fiber_slice(cloud: &RegularCloud, region: &Ball, plane: AffinePlane, tube_radius: f64) -> FiberSlice {
    let hits = cloud.ball_indices(region).into_iter().filter(|&i| plane.distance(cloud.point(i)) <= tube_radius).collect();
    FiberSlice { plane, tube_radius, hits }
}

/// Single-linkage clusters of `pts` at merging distance `radius`.
fn cluster_count(pts: &[&[f64]], radius: f64) -> usize {
    let mut parent: Vec<usize> = (0..pts.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let r2 = radius * radius;
    let mut clusters = pts.len();
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            if dist2(pts[i], pts[j]) <= r2 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                    clusters -= 1;
                }
            }
        }
    }
    clusters
}

fn diameter(pts: &[&[f64]]) -> f64 {
    let mut d2 = 0.0f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d2 = d2.max(dist2(pts[i], pts[j]));
        }
    }
    d2.sqrt()
}

/// Diameter of a set of hits, or 0 when they form a single resolution cluster.
fn hits_width(pts: &[&[f64]], merge: f64) -> f64 {
    if pts.len() < 2 || cluster_count(pts, merge) < 2 {
        0.0
    } else {
        diameter(pts)
    }
}

/// diam(B_Q ∩ E ∩ W) with W thickened to a tube.
pub fn width_fiber(cloud: &RegularCloud, lattice: &CubeLattice, q: CubeId, plane: &AffinePlane, tube_radius: f64) -> f64 {
    let slice = fiber_slice(cloud, &lattice.ball(q), plane.clone(), tube_radius);
    let pts: Vec<&[f64]> = slice.hits.iter().map(|&i| cloud.point(i)).collect();
    hits_width(&pts, CLUSTER_FACTOR * cloud.resolution())
}

/// Monte Carlo resolution of the double integral over (V, w).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WidthParams {
    /// Haar samples of V.
    pub directions: usize,
    /// Jittered strata per axis of the w-grid over π_V(B_Q).
    pub offsets_per_axis: usize,
    /// Tube radius as a multiple of the cloud resolution.
    pub tube_factor: f64,
}

impl Default for WidthParams {
    fn default() -> Self {
        Self { directions: 32, offsets_per_axis: 16, tube_factor: 2.0 }
    }
}

impl WidthParams {
    pub fn tube_radius(&self, cloud: &RegularCloud) -> f64 {
        self.tube_factor * cloud.resolution()
    }

    fn fibres(&self, n: usize) -> usize {
        self.directions * self.offsets_per_axis.pow(n as u32)
    }
}

/// ∫_V width_Q(π_V^{-1}{w}) dw / ℓ(Q) for one V, over a jittered w-grid.
fn width_for_direction<R: Rng + ?Sized>(
    cloud: &RegularCloud,
    lattice: &CubeLattice,
    q: CubeId,
    members: &[usize],
    v: &Subspace,
    params: &WidthParams,
    rng: &mut R,
) -> f64 {
    let n = cloud.n();
    let cube = lattice.cube(q);
    let radius = lattice.ball_radius(q);
    let tube = params.tube_radius(cloud);
    let merge = CLUSTER_FACTOR * cloud.resolution();
    let shadow: Vec<Vec<f64>> = members
        .iter()
        .map(|&i| {
            let y: Vec<f64> = cloud.point(i).iter().zip(&cube.center).map(|(a, b)| a - b).collect();
            v.coords(&y)
        })
        .collect();
    let k = params.offsets_per_axis;
    let h = 2.0 * radius / k as f64;
    let mut idx = vec![0usize; n];
    let mut total = 0.0;
    loop {
        let w: Vec<f64> = idx.iter().map(|&i| -radius + (i as f64 + rng.gen::<f64>()) * h).collect();
        if norm(&w) <= radius + tube {
            let hits: Vec<&[f64]> = members
                .iter()
                .zip(&shadow)
                .filter(|(_, s)| dist2(s, &w) <= tube * tube)
                .map(|(&i, _)| cloud.point(i))
                .collect();
            total += hits_width(&hits, merge);
        }
        let mut axis = 0;
        loop {
            if axis == n {
                return total * h.powi(n as i32) / cube.side();
            }
            idx[axis] += 1;
            if idx[axis] < k {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}

/// Monte Carlo estimate of width(Q), with the standard error over V samples.
pub fn width_cube<R: Rng + ?Sized>(cloud: &RegularCloud, lattice: &CubeLattice, q: CubeId, params: &WidthParams, rng: &mut R) -> Result<Estimate> {
    let fibres = params.fibres(cloud.n());
    if fibres < MIN_FIBRES {
        return Err(WidthError::TooFewSamples { min: MIN_FIBRES, got: fibres });
    }
    let tube = params.tube_radius(cloud);
    if tube < cloud.resolution() {
        return Err(WidthError::ThinTube { tube, resolution: cloud.resolution() });
    }
    let members = cloud.ball_indices(&lattice.ball(q));
    let mass = lattice.cube(q).weight;
    let mut values = Vec::with_capacity(params.directions);
    for _ in 0..params.directions {
        let v = sample_haar(cloud.dim(), cloud.n(), rng)?;
        values.push(width_for_direction(cloud, lattice, q, &members, &v, params, rng) / mass);
    }
    Ok(Estimate::from_samples(&values))
}

#[derive(Debug, Clone, Serialize)]
pub struct CubeWidth {
    pub cube: CubeId,
    pub width: f64,
    pub std_error: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyWidth {
    /// Σ width(Q)·μ(Q).
    pub total: f64,
    pub std_error: f64,
    pub tube_radius: f64,
    pub cubes: Vec<CubeWidth>,
}

impl FamilyWidth {
    /// Write `level,cell_index,width,std_error,samples,tube_radius` rows.
    pub fn export_csv<W: Write>(&self, lattice: &CubeLattice, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["level", "cell_index", "width", "std_error", "samples", "tube_radius"])?;
        for c in &self.cubes {
            let cube = lattice.cube(c.cube);
            let cells = cube.cell.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
            out.write_record([
                cube.level.to_string(),
                cells,
                format!("{:?}", c.width),
                format!("{:?}", c.std_error),
                c.samples.to_string(),
                format!("{:?}", self.tube_radius),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn cube_seed(seed: u64, q: CubeId) -> u64 {
    seed ^ (q as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// width(F) = Σ_{Q ∈ F} width(Q)μ(Q); each cube draws from its own stream
/// derived from `seed`, so the result does not depend on thread scheduling.
pub fn width_family(cloud: &RegularCloud, lattice: &CubeLattice, family: &[CubeId], params: &WidthParams, seed: u64) -> Result<FamilyWidth> {
    let cubes = family
        .par_iter()
        .map(|&q| {
            let mut rng = ChaCha8Rng::seed_from_u64(cube_seed(seed, q));
            let est = width_cube(cloud, lattice, q, params, &mut rng)?;
            Ok(CubeWidth { cube: q, width: est.value, std_error: est.std_error, samples: est.samples })
        })
        .collect::<Result<Vec<_>>>()?;
    let total = cubes.iter().map(|c| c.width * lattice.cube(c.cube).weight).sum();
    let var: f64 = cubes.iter().map(|c| (c.std_error * lattice.cube(c.cube).weight).powi(2)).sum();
    Ok(FamilyWidth { total, std_error: var.sqrt(), tube_radius: params.tube_radius(cloud), cubes })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CarlesonRatio {
    pub ratio: f64,
    pub std_error: f64,
}

/// width(D(Q0)) / μ(Q0) over the whole lattice below `q0`.
pub fn width_carleson(cloud: &RegularCloud, lattice: &CubeLattice, q0: CubeId, params: &WidthParams, seed: u64) -> Result<CarlesonRatio> {
    let fam = width_family(cloud, lattice, &lattice.descendants(q0), params, seed)?;
    let m = lattice.cube(q0).weight;
    Ok(CarlesonRatio { ratio: fam.total / m, std_error: fam.std_error / m })
}

/// Resolution clusters of `region ∩ E` in the tube around π_V^{-1}{w}, where
/// `w` is given in the coordinates of V.
pub fn fiber_count(cloud: &RegularCloud, region: &Ball, v: &Subspace, w: &[f64], tube_radius: f64) -> usize {
    let pts: Vec<&[f64]> = cloud
        .ball_indices(region)
        .into_iter()
        .map(|i| cloud.point(i))
        .filter(|p| dist(&v.coords(p), w) <= tube_radius)
        .collect();
    if pts.is_empty() {
        0
    } else {
        cluster_count(&pts, CLUSTER_FACTOR * cloud.resolution())
    }
}

/// ∫_V fiber_count dw for one V (a line in the plane or any n = 1 case),
/// by the midpoint rule with `steps` cells across the shadow of `region`.
pub fn slicing_integral(cloud: &RegularCloud, region: &Ball, v: &Subspace, tube_radius: f64, steps: usize) -> f64 {
    assert_eq!(v.dim(), 1, "slicing integral is over a line");
    let c = v.coords(&region.center)[0];
    let h = 2.0 * region.radius / steps as f64;
    (0..steps).map(|i| fiber_count(cloud, region, v, &[c - region.radius + (i as f64 + 0.5) * h], tube_radius) as f64 * h).sum()
}

/// Directed cone-spanning graph on a finite point set.
#[derive(Debug, Clone, Serialize)]
pub struct ConeGraph {
    pub vertices: Vec<Vec<f64>>,
    /// Distinct directed pairs (from, to).
    pub edges: Vec<(usize, usize)>,
    pub net: Vec<Vec<f64>>,
    /// Largest distance from a dense sphere sample to the net.
    pub covering_radius: f64,
}

/// A maximal 1/4-separated subset of a dense deterministic sample of S^{d−1}.
pub fn sphere_net(d: usize) -> (Vec<Vec<f64>>, f64) {
    let candidates: Vec<Vec<f64>> = match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..4096)
            .map(|k| {
                let t = k as f64 * std::f64::consts::TAU / 4096.0;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => {
            let m = 6000;
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..m)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / m as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let t = golden * k as f64;
                    vec![rho * t.cos(), rho * t.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
            (0..40_000)
                .map(|_| {
                    let g: Vec<f64> = (0..d).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
                    let l = norm(&g);
                    g.into_iter().map(|x| x / l).collect()
                })
                .collect()
        }
    };
    let mut net: Vec<Vec<f64>> = Vec::new();
    for c in &candidates {
        if net.iter().all(|x| dist(x, c) >= 0.25) {
            net.push(c.clone());
        }
    }
    let cover = candidates.iter().map(|c| net.iter().map(|x| dist(x, c)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max);
    (net, cover)
}

fn in_cone(xi: &[f64], from: &[f64], to: &[f64]) -> bool {
    let diff: Vec<f64> = to.iter().zip(from).map(|(a, b)| a - b).collect();
    let l = norm(&diff);
    l > 0.0 && diff.iter().zip(xi).map(|(a, b)| (a / l - b).powi(2)).sum::<f64>() < 0.25
}

/// For each vertex and each cone x_i + C_j, an edge to the nearest vertex in
/// that cone (lowest index on ties).
pub fn build_cone_graph(points: &[Vec<f64>]) -> Result<ConeGraph> {
    if points.len() < 2 {
        return Err(WidthError::TooFewPoints(points.len()));
    }
    let d = points[0].len();
    let (net, covering_radius) = sphere_net(d);
    assert!(covering_radius < 0.5, "cone net does not cover the sphere: {covering_radius}");
    let mut edges = BTreeSet::new();
    for (i, x) in points.iter().enumerate() {
        let mut best: Vec<Option<(f64, usize)>> = vec![None; net.len()];
        for (k, y) in points.iter().enumerate() {
            if k == i {
                continue;
            }
            let r = dist(x, y);
            if r == 0.0 {
                return Err(WidthError::Duplicate(i.min(k), i.max(k)));
            }
            for (j, xi) in net.iter().enumerate() {
                if in_cone(xi, x, y) && best[j].is_none_or(|(br, _)| r < br) {
                    best[j] = Some((r, k));
                }
            }
        }
        edges.extend(best.into_iter().flatten().map(|(_, k)| (i, k)));
    }
    Ok(ConeGraph { vertices: points.to_vec(), edges: edges.into_iter().collect(), net, covering_radius })
}

/// A pair (i, j) with no directed path from i to j inside B̄(x_i, 2|x_i − x_j|).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConnectivityFailure {
    pub from: usize,
    pub to: usize,
}

impl ConeGraph {
    pub fn max_out_degree(&self) -> usize {
        let mut deg = vec![0usize; self.vertices.len()];
        for &(i, _) in &self.edges {
            deg[i] += 1;
        }
        deg.into_iter().max().unwrap_or(0)
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for &(i, k) in &self.edges {
            adj[i].push(k);
        }
        adj
    }

    /// Check connectivity for every ordered pair. For each source the targets
    /// are visited by increasing distance, and one breadth-first search grows
    /// with the admissible ball, resuming from vertices it had to skip.
    pub fn check_connectivity(&self) -> std::result::Result<(), ConnectivityFailure> {
        let adj = self.adjacency();
        let q = self.vertices.len();
        for s in 0..q {
            let xs = &self.vertices[s];
            let mut order: Vec<usize> = (0..q).filter(|&t| t != s).collect();
            order.sort_by(|&a, &b| dist2(xs, &self.vertices[a]).total_cmp(&dist2(xs, &self.vertices[b])));
            let mut reached = vec![false; q];
            reached[s] = true;
            let mut frontier = vec![s];
            let mut blocked: Vec<usize> = Vec::new();
            for &t in &order {
                let r2 = 4.0 * dist2(xs, &self.vertices[t]) * (1.0 + 1e-12);
                let inside = |v: usize| dist2(xs, &self.vertices[v]) <= r2;
                let mut still = Vec::new();
                for v in blocked.drain(..) {
                    if reached[v] {
                        continue;
                    }
                    if inside(v) {
                        reached[v] = true;
                        frontier.push(v);
                    } else {
                        still.push(v);
                    }
                }
                blocked = still;
                while let Some(u) = frontier.pop() {
                    for &v in &adj[u] {
                        if reached[v] {
                            continue;
                        }
                        if inside(v) {
                            reached[v] = true;
                            frontier.push(v);
                        } else {
                            blocked.push(v);
                        }
                    }
                }
                if !reached[t] {
                    return Err(ConnectivityFailure { from: s, to: t });
                }
            }
        }
        Ok(())
    }

    /// The greedy path of the connectivity argument: from `from`, repeatedly
    /// follow the edge of a cone containing `to`.
    pub fn greedy_path(&self, from: usize, to: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let mut path = vec![from];
        let mut cur = from;
        while cur != to {
            let x = &self.vertices[cur];
            let t = &self.vertices[to];
            let cone = self.net.iter().position(|xi| in_cone(xi, x, t)).expect("net covers every direction");
            let next = adj[cur]
                .iter()
                .copied()
                .filter(|&k| in_cone(&self.net[cone], x, &self.vertices[k]))
                .min_by(|&a, &b| dist2(x, &self.vertices[a]).total_cmp(&dist2(x, &self.vertices[b])).then(a.cmp(&b)))
                .expect("cone holding the target has an edge");
            assert!(dist(&self.vertices[next], t) < dist(x, t), "greedy step did not approach the target");
            path.push(next);
            cur = next;
        }
        path
    }
}

/// Rejection-sample the inclusion B̄(x,|x−y|) ∩ (x + C_j) ⊂ B(y,|x−y|) at the
/// origin with |y| = 1; returns a violating (y, z) pair if one is found.
pub fn check_cone_inclusion<R: Rng + ?Sized>(net: &[Vec<f64>], samples: usize, rng: &mut R) -> Option<(Vec<f64>, Vec<f64>)> {
    let d = net[0].len();
    let origin = vec![0.0; d];
    let unit = |rng: &mut R| {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let l = norm(&g);
        g.into_iter().map(|x| x / l).collect::<Vec<f64>>()
    };
    for _ in 0..samples {
        let xi = &net[rng.gen_range(0..net.len())];
        let y = loop {
            let e = unit(rng);
            if in_cone(xi, &origin, &e) {
                break e;
            }
        };
        let z: Vec<f64> = loop {
            let e = unit(rng);
            if in_cone(xi, &origin, &e) {
                let r = rng.gen::<f64>();
                break e.into_iter().map(|c| c * r).collect();
            }
        };
        if dist(&z, &y) >= 1.0 {
            return Some((y, z));
        }
    }
    None
}

#[derive(Debug, Clone)]
pub struct CriterionStats {
    /// ∫_{H_V} f_V.
    pub mass_in_high_multiplicity: f64,
    /// ‖f_V‖₁.
    pub total_mass: f64,
    /// Grid cells of V (integer coordinates at the grid resolution) where Mf_V ≥ N.
    pub high_cells: Vec<Vec<i64>>,
    pub max_multiplicity: f64,
}

/// f_V = Σ_{Q ∈ G} 1_{π_V(B_Q)} on a grid in V, its centered maximal function,
/// and the mass of f_V on {Mf_V ≥ N}.
pub fn criterion_stats(lattice: &CubeLattice, leaves: &[CubeId], v: &Subspace, threshold: f64, grid: f64) -> CriterionStats {
    let n = v.dim();
    let f = crate::cones::multiplicity_function(lattice, leaves, v, grid);
    let origin: Vec<f64> = f.cell_center(0).iter().map(|c| c - grid / 2.0).collect();
    let mf = maximal_function(&f);
    let vol = grid.powi(n as i32);
    let mut mass = 0.0;
    let mut high_cells = Vec::new();
    for cell in 0..f.len() {
        if mf.values()[cell] >= threshold {
            mass += f.values()[cell] * vol;
            let idx = f.multi_index(cell);
            high_cells.push(idx.iter().zip(&origin).map(|(&i, o)| i as i64 + (o / grid).round() as i64).collect());
        }
    }
    CriterionStats {
        mass_in_high_multiplicity: mass,
        total_mass: f.integral(),
        high_cells,
        max_multiplicity: f.values().iter().copied().fold(0.0, f64::max),
    }
}
