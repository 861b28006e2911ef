//! Heavy-cube stopping for weighted ball families on the unit cube.
//!
//! Everything is evaluated on a uniform grid of side 2^{-depth}: functions are
//! their values at cell centers and integrals are cell sums, so every
//! inequality the algorithm relies on is checked exactly at that resolution.
//!
//! Cubes come from 2^d adjacent dyadic systems: along each axis a system uses
//! either the standard intervals or the intervals 2^{-j}([0,1) + m + (−1)^j/3).
//! Any interval of length L lies in an interval of one of the two families
//! with side at most 6L, which gives the covering constant 12^d/ω_d for balls.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoppingError {
    #[error("dimension {0} not supported (1..=4)")]
    Dimension(usize),
    #[error("ball {index} is not inside the unit cube")]
    OutsideUnitCube { index: usize },
    #[error("ball {index} has dimension {got}, family has {expected}")]
    Shape { index: usize, expected: usize, got: usize },
    #[error("ball {index} has negative weight or radius")]
    Negative { index: usize },
    #[error("ball {index} is too small for the finest cube level")]
    TooSmall { index: usize },
    #[error("guarantee mode needs N > A^((γ+1)²)·M^(γ+2)/c = {bound}, got N = {n}")]
    Guarantee { n: f64, bound: f64 },
    #[error("bad configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, StoppingError>;

/// Values on a regular grid, row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    origin: Vec<f64>,
    cell: f64,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(origin: Vec<f64>, cell: f64, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { origin, cell, shape, values: vec![0.0; len] }
    }

    /// The grid of side 2^{-depth} on [0,1)^d.
    pub fn unit_cube(d: usize, depth: u32) -> Self {
        Self::zeros(vec![0.0; d], 2f64.powi(-(depth as i32)), vec![1 << depth; d])
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell.powi(self.dim() as i32)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.shape[a];
            flat /= self.shape[a];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &s)| acc * s + i)
    }

    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat).iter().zip(&self.origin).map(|(&i, o)| o + (i as f64 + 0.5) * self.cell).collect()
    }

    /// Σ values · cell volume.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    /// ∫ f over the cells where `keep` holds for the cell index.
    pub fn integral_where(&self, keep: impl Fn(usize) -> bool) -> f64 {
        self.values.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, v)| v).sum::<f64>() * self.cell_volume()
    }
}

/// Centered maximal function over radii cell·2^k, k ≥ 0, up to the grid
/// diameter. Each average divides by the number of lattice points of the open
/// ball, counting points outside the grid as zeros.
pub fn maximal_function(f: &GridFunction) -> GridFunction {
    let d = f.dim();
    let last = d - 1;
    let row_len = f.shape[last];
    let rows = f.len() / row_len;
    let mut prefix = vec![0.0; rows * (row_len + 1)];
    for r in 0..rows {
        for i in 0..row_len {
            prefix[r * (row_len + 1) + i + 1] = prefix[r * (row_len + 1) + i] + f.values[r * row_len + i];
        }
    }
    let extent = f.shape.iter().map(|&s| (s * s) as f64).sum::<f64>().sqrt();
    let mut radii = vec![1i64];
    while (*radii.last().unwrap() as f64) < 2.0 * extent {
        radii.push(radii.last().unwrap() * 2);
    }
    // Offsets over the leading axes, with the half-width left on the last axis.
    let stencils: Vec<(Vec<(Vec<i64>, i64)>, f64)> = radii
        .iter()
        .map(|&r| {
            let mut rowsets = Vec::new();
            let mut count = 0i64;
            let mut off = vec![-r; last];
            loop {
                let s: i64 = off.iter().map(|x| x * x).sum();
                if s < r * r {
                    let rem = r * r - s;
                    let mut h = ((rem as f64).sqrt()) as i64;
                    while h * h >= rem {
                        h -= 1;
                    }
                    while (h + 1) * (h + 1) < rem {
                        h += 1;
                    }
                    rowsets.push((off.clone(), h));
                    count += 2 * h + 1;
                }
                let mut a = 0;
                loop {
                    if a == last {
                        return (rowsets, count as f64);
                    }
                    off[a] += 1;
                    if off[a] <= r {
                        break;
                    }
                    off[a] = -r;
                    a += 1;
                }
            }
        })
        .collect();
    let values = (0..f.len())
        .into_par_iter()
        .map(|flat| {
            let idx = f.multi_index(flat);
            let mut best = 0.0f64;
            for (rowsets, count) in &stencils {
                let mut sum = 0.0;
                'rows: for (off, h) in rowsets {
                    let mut row = 0usize;
                    for a in 0..last {
                        let i = idx[a] as i64 + off[a];
                        if i < 0 || i >= f.shape[a] as i64 {
                            continue 'rows;
                        }
                        row = row * f.shape[a] + i as usize;
                    }
                    let lo = (idx[last] as i64 - h).max(0) as usize;
                    let hi = ((idx[last] as i64 + h + 1).min(row_len as i64)).max(lo as i64) as usize;
                    let base = row * (row_len + 1);
                    sum += prefix[base + hi] - prefix[base + lo];
                }
                best = best.max(sum / count);
            }
            best
        })
        .collect();
    GridFunction { origin: f.origin.clone(), cell: f.cell, shape: f.shape.clone(), values }
}

/// Finite family of open balls in [0,1)^d with nonnegative weights.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BallFamily {
    pub dim: usize,
    pub centers: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
    pub weights: Vec<f64>,
}

impl BallFamily {
    pub fn new(dim: usize, centers: Vec<Vec<f64>>, radii: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if !(1..=4).contains(&dim) {
            return Err(StoppingError::Dimension(dim));
        }
        for (index, c) in centers.iter().enumerate() {
            if c.len() != dim {
                return Err(StoppingError::Shape { index, expected: dim, got: c.len() });
            }
            let (r, w) = (radii[index], weights[index]);
            if !(r > 0.0) || !(w >= 0.0) {
                return Err(StoppingError::Negative { index });
            }
            if c.iter().any(|&x| x - r < 0.0 || x + r > 1.0) {
                return Err(StoppingError::OutsideUnitCube { index });
            }
        }
        Ok(Self { dim, centers, radii, weights })
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn contains(&self, b: usize, x: &[f64]) -> bool {
        let r = self.radii[b];
        self.centers[b].iter().zip(x).map(|(c, y)| (c - y) * (c - y)).sum::<f64>() < r * r
    }

    pub fn volume(&self, b: usize) -> f64 {
        unit_ball_volume(self.dim) * self.radii[b].powi(self.dim as i32)
    }

    /// f = Σ w_B 1_B on the unit-cube grid, restricted to the balls in `subset`.
    pub fn grid_function(&self, depth: u32, subset: impl Fn(usize) -> bool + Sync) -> GridFunction {
        let mut g = GridFunction::unit_cube(self.dim, depth);
        let vals: Vec<f64> = (0..g.len())
            .into_par_iter()
            .map(|i| {
                let x = g.cell_center(i);
                (0..self.len()).filter(|&b| subset(b) && self.contains(b, &x)).map(|b| self.weights[b]).sum()
            })
            .collect();
        g.values = vals;
        g
    }
}

pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 / 3.0 * std::f64::consts::PI,
        4 => std::f64::consts::PI.powi(2) / 2.0,
        _ => unreachable!("dimension checked on construction"),
    }
}

/// Coarsest level: one cube of every system contains [0,1)^d.
pub const TOP_LEVEL: i32 = -1;
/// Finest cube level searched.
pub const FINEST_LEVEL: i32 = 8;

/// A cube of one adjacent system.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SystemCube {
    pub system: usize,
    pub level: i32,
    pub index: Vec<i64>,
}

/// The 2^d adjacent dyadic systems on R^d.
#[derive(Debug, Clone)]
pub struct AdjacentSystems {
    dim: usize,
}

impl AdjacentSystems {
    pub fn new(d: usize) -> Result<Self> {
        if !(1..=4).contains(&d) {
            return Err(StoppingError::Dimension(d));
        }
        Ok(Self { dim: d })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        1 << self.dim
    }

    /// Whether axis `a` of system `s` uses the one-third shift.
    fn shifted(s: usize, a: usize) -> bool {
        (s >> a) & 1 == 1
    }

    fn sign(level: i32) -> f64 {
        if level.rem_euclid(2) == 0 {
            1.0
        } else {
            -1.0
        }
    }

    fn offset(s: usize, a: usize, level: i32) -> f64 {
        if Self::shifted(s, a) {
            Self::sign(level) / 3.0
        } else {
            0.0
        }
    }

    pub fn side(level: i32) -> f64 {
        2f64.powi(-level)
    }

    /// [lo, hi) along each axis.
    pub fn bounds(&self, q: &SystemCube) -> Vec<(f64, f64)> {
        let side = Self::side(q.level);
        q.index
            .iter()
            .enumerate()
            .map(|(a, &m)| {
                let lo = side * (m as f64 + Self::offset(q.system, a, q.level));
                (lo, lo + side)
            })
            .collect()
    }

    pub fn volume(&self, q: &SystemCube) -> f64 {
        Self::side(q.level).powi(self.dim as i32)
    }

    pub fn cube_of_point(&self, system: usize, level: i32, x: &[f64]) -> SystemCube {
        let scale = 2f64.powi(level);
        let index = x.iter().enumerate().map(|(a, &v)| (v * scale - Self::offset(system, a, level)).floor() as i64).collect();
        SystemCube { system, level, index }
    }

    pub fn contains_point(&self, q: &SystemCube, x: &[f64]) -> bool {
        self.bounds(q).iter().zip(x).all(|(&(lo, hi), &v)| lo <= v && v < hi)
    }

    pub fn contains_ball(&self, q: &SystemCube, center: &[f64], radius: f64) -> bool {
        self.bounds(q).iter().zip(center).all(|(&(lo, hi), &c)| lo <= c - radius && c + radius <= hi)
    }

    pub fn parent(&self, q: &SystemCube) -> SystemCube {
        let up = q.level - 1;
        let index = q
            .index
            .iter()
            .enumerate()
            .map(|(a, &m)| {
                let s = if Self::shifted(q.system, a) { Self::sign(up) as i64 } else { 0 };
                (m - s).div_euclid(2)
            })
            .collect();
        SystemCube { system: q.system, level: up, index }
    }

    pub fn children(&self, q: &SystemCube) -> Vec<SystemCube> {
        let base: Vec<i64> = q
            .index
            .iter()
            .enumerate()
            .map(|(a, &m)| 2 * m + if Self::shifted(q.system, a) { Self::sign(q.level) as i64 } else { 0 })
            .collect();
        (0..1usize << self.dim)
            .map(|bits| SystemCube {
                system: q.system,
                level: q.level + 1,
                index: base.iter().enumerate().map(|(a, &m)| m + ((bits >> a) & 1) as i64).collect(),
            })
            .collect()
    }

    pub fn top(&self, system: usize) -> SystemCube {
        self.cube_of_point(system, TOP_LEVEL, &vec![0.0; self.dim])
    }

    /// Smallest cube over all systems and levels TOP_LEVEL..=FINEST_LEVEL that
    /// contains the ball; lowest system index on ties.
    pub fn locate(&self, center: &[f64], radius: f64) -> Result<SystemCube> {
        if center.iter().any(|&c| c - radius < 0.0 || c + radius > 1.0) {
            return Err(StoppingError::OutsideUnitCube { index: 0 });
        }
        for level in (TOP_LEVEL..=FINEST_LEVEL).rev() {
            for s in 0..self.count() {
                let q = self.cube_of_point(s, level, center);
                if self.contains_ball(&q, center, radius) {
                    return Ok(q);
                }
            }
        }
        unreachable!("the top cube of every system contains the unit cube")
    }

    /// The ball covering constant 12^d/ω_d.
    pub fn ball_constant(&self) -> f64 {
        12f64.powi(self.dim as i32) / unit_ball_volume(self.dim)
    }
}

/// For each ball, the system of its smallest containing cube. A weighted ball
/// whose smallest cube exceeds C_d|B| has no associated cube and is rejected.
pub fn assign_systems(systems: &AdjacentSystems, family: &BallFamily) -> Result<Vec<usize>> {
    let cd = systems.ball_constant();
    (0..family.len())
        .map(|b| {
            let q = systems.locate(&family.centers[b], family.radii[b]).map_err(|_| StoppingError::OutsideUnitCube { index: b })?;
            if family.weights[b] > 0.0 && systems.volume(&q) > cd * family.volume(b) * (1.0 + 1e-12) {
                return Err(StoppingError::TooSmall { index: b });
            }
            Ok(q.system)
        })
        .collect()
}

/// 𝔴_R = Σ w_B over balls assigned to `system` with B ⊂ R and |R| ≤ C_d|B|.
pub fn weight_profile(systems: &AdjacentSystems, family: &BallFamily, assignment: &[usize], system: usize) -> BTreeMap<SystemCube, f64> {
    let cd = systems.ball_constant();
    let mut out = BTreeMap::new();
    for b in 0..family.len() {
        if assignment[b] != system || family.weights[b] == 0.0 {
            continue;
        }
        let (c, r) = (&family.centers[b], family.radii[b]);
        let cap = cd * family.volume(b);
        for level in TOP_LEVEL..=FINEST_LEVEL {
            let q = systems.cube_of_point(system, level, c);
            if systems.volume(&q) <= cap * (1.0 + 1e-12) && systems.contains_ball(&q, c, r) {
                *out.entry(q).or_insert(0.0) += family.weights[b];
            }
        }
    }
    out
}

/// `balls` random balls in [0,1]^d with radii in [2^{-6}, 2^{-2}) and weights
/// uniform in [0, max_weight).
pub fn random_family<R: Rng + ?Sized>(rng: &mut R, d: usize, balls: usize, max_weight: f64) -> Result<BallFamily> {
    let mut centers = Vec::new();
    let mut radii = Vec::new();
    let mut weights = Vec::new();
    for _ in 0..balls {
        let r = 2f64.powf(rng.gen_range(-6.0..-2.0));
        centers.push((0..d).map(|_| rng.gen_range(r..1.0 - r)).collect());
        radii.push(r);
        weights.push(rng.gen_range(0.0..max_weight));
    }
    BallFamily::new(d, centers, radii, weights)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct StoppingConfig {
    /// Threshold N.
    pub threshold: f64,
    /// Density target M.
    pub density: f64,
    pub gamma: f64,
    /// Mass constant c.
    pub mass_constant: f64,
    /// Dimensional constant A used by the guarantee check.
    pub dimensional_constant: f64,
    pub guarantee: bool,
}

impl StoppingConfig {
    pub fn guarantee_bound(&self) -> f64 {
        let g = self.gamma;
        self.dimensional_constant.powf((g + 1.0).powi(2)) * self.density.powf(g + 2.0) / self.mass_constant
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 1.0) || !(self.density >= 1.0) || !(self.mass_constant > 0.0) || !(self.threshold >= 1.0) {
            return Err(StoppingError::Config(format!("{self:?}")));
        }
        if self.guarantee && self.threshold <= self.guarantee_bound() {
            return Err(StoppingError::Guarantee { n: self.threshold, bound: self.guarantee_bound() });
        }
        Ok(())
    }

    /// c·N^{-γ}.
    pub fn theta(&self) -> f64 {
        self.mass_constant * self.threshold.powf(-self.gamma)
    }

    /// The lower bound c·2^{-2(γ+1)}·N^{-γ} claimed for Σ‖f_R‖₁.
    pub fn mass_target(&self) -> f64 {
        self.theta() * 2f64.powf(-2.0 * (self.gamma + 1.0))
    }

    pub fn generation_cap(&self) -> usize {
        self.gamma.floor() as usize + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// ∫_{Mf ≥ N} f < c·N^{-γ}: nothing is claimed.
    Vacuous,
    /// ‖f‖₁ > M: the unit cube itself is heavy.
    EarlyExit,
    /// Heavy cubes were found in some generation.
    Heavy,
    /// Thresholds reached zero without a heavy generation.
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeavyCube {
    /// `None` for the unit cube of the early exit.
    pub cube: Option<SystemCube>,
    pub bounds: Vec<(f64, f64)>,
    pub volume: f64,
    /// ‖f_R‖₁ over all balls B ⊂ R.
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub k: usize,
    pub threshold: f64,
    pub heavy: Vec<SystemCube>,
    pub light: Vec<SystemCube>,
    /// Σ over heavy cubes of ∫_{R∩H} f_i.
    pub heavy_high_mass: f64,
    pub light_high_mass: f64,
    /// Σ over heavy cubes of ‖f^i_R‖₁.
    pub heavy_mass: f64,
    pub volume: f64,
    pub volume_bound: f64,
    /// Largest Σ_{R' ⊂ R0} 𝔴_{R'}|R'| / ‖f_{R0}‖₁ over the roots of this generation.
    pub root_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingRun {
    pub config: StoppingConfig,
    pub depth: u32,
    pub outcome: Outcome,
    pub l1_norm: f64,
    /// ∫_{Mf ≥ N} f on the grid.
    pub hypothesis_mass: f64,
    pub theta: f64,
    pub heavy: Vec<HeavyCube>,
    /// Chosen system and the reduced threshold N'' = N / 2^m / (system count).
    pub system: Option<usize>,
    pub reduction_exponent: u32,
    pub reduced_threshold: f64,
    /// ∫_{f_i ≥ N''} f_i.
    pub reduced_mass: f64,
    pub reduction_met: bool,
    /// Largest root ratio seen: the achieved A in the per-generation volume law.
    pub achieved_a: f64,
    pub generations: Vec<GenerationTrace>,
    pub sum_check: bool,
    pub density_check: bool,
    pub covering_constant: f64,
}

impl StoppingRun {
    pub fn heavy_mass(&self) -> f64 {
        self.heavy.iter().map(|h| h.mass).sum()
    }

    pub fn passes(&self) -> bool {
        self.outcome == Outcome::Vacuous || (self.sum_check && self.density_check)
    }
}

/// Cell index ranges of the unit-cube grid whose centers lie in the box.
fn cell_ranges(bounds: &[(f64, f64)], cells: usize) -> Option<Vec<(usize, usize)>> {
    let n = cells as f64;
    bounds
        .iter()
        .map(|&(lo, hi)| {
            let a = (lo * n - 0.5).ceil().max(0.0);
            let b = ((hi * n - 0.5).ceil() - 1.0).min(n - 1.0);
            (a <= b).then_some((a as usize, b as usize))
        })
        .collect()
}

fn box_integral(g: &GridFunction, bounds: &[(f64, f64)], keep: impl Fn(f64) -> bool) -> f64 {
    let Some(ranges) = cell_ranges(bounds, g.shape()[0]) else {
        return 0.0;
    };
    let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    let mut sum = 0.0;
    loop {
        let v = g.values()[g.flat_index(&idx)];
        if keep(v) {
            sum += v;
        }
        let mut a = 0;
        loop {
            if a == idx.len() {
                return sum * g.cell_volume();
            }
            idx[a] += 1;
            if idx[a] <= ranges[a].1 {
                break;
            }
            idx[a] = ranges[a].0;
            a += 1;
        }
    }
}

struct Run<'a> {
    systems: &'a AdjacentSystems,
    family: &'a BallFamily,
    ball_mass: Vec<f64>,
    assignment: Vec<usize>,
}

impl Run<'_> {
    /// ‖f_R‖₁ over balls inside R, optionally only those of one system.
    fn sub_mass(&self, q: &SystemCube, system: Option<usize>) -> f64 {
        (0..self.family.len())
            .filter(|&b| system.is_none_or(|s| self.assignment[b] == s))
            .filter(|&b| self.systems.contains_ball(q, &self.family.centers[b], self.family.radii[b]))
            .map(|b| self.family.weights[b] * self.ball_mass[b])
            .sum()
    }
}

/// Grid mass of each ball: cell volume times the number of centers inside.
fn ball_grid_masses(family: &BallFamily, depth: u32) -> Vec<f64> {
    let g = GridFunction::unit_cube(family.dim, depth);
    (0..family.len())
        .map(|b| {
            let bounds: Vec<(f64, f64)> = family.centers[b].iter().map(|&c| (c - family.radii[b], c + family.radii[b])).collect();
            let Some(ranges) = cell_ranges(&bounds, g.shape()[0]) else {
                return 0.0;
            };
            let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
            let mut count = 0usize;
            loop {
                let x: Vec<f64> = idx.iter().map(|&i| (i as f64 + 0.5) * g.cell()).collect();
                if family.contains(b, &x) {
                    count += 1;
                }
                let mut a = 0;
                loop {
                    if a == idx.len() {
                        return count as f64 * g.cell_volume();
                    }
                    idx[a] += 1;
                    if idx[a] <= ranges[a].1 {
                        break;
                    }
                    idx[a] = ranges[a].0;
                    a += 1;
                }
            }
        })
        .collect()
}

/// The heavy-cube stopping construction. Returns a run whose `sum_check` and
/// `density_check` record both conclusions as evaluated on the grid.
pub fn heavy_cubes(family: &BallFamily, config: &StoppingConfig, depth: u32) -> Result<StoppingRun> {
    config.validate()?;
    let systems = AdjacentSystems::new(family.dim)?;
    let d = family.dim;
    let f = family.grid_function(depth, |_| true);
    let l1 = f.integral();
    let mf = maximal_function(&f);
    let hypothesis_mass = f.integral_where(|i| mf.values()[i] >= config.threshold);
    let theta = config.theta();
    let ball_mass = ball_grid_masses(family, depth);
    let assignment = assign_systems(&systems, family)?;
    let covering_constant = (0..family.len())
        .map(|b| {
            let q = systems.locate(&family.centers[b], family.radii[b]).expect("checked");
            systems.volume(&q) / family.volume(b)
        })
        .fold(0.0, f64::max);
    let mut run = StoppingRun {
        config: *config,
        depth,
        outcome: Outcome::Vacuous,
        l1_norm: l1,
        hypothesis_mass,
        theta,
        heavy: Vec::new(),
        system: None,
        reduction_exponent: 0,
        reduced_threshold: config.threshold,
        reduced_mass: 0.0,
        reduction_met: false,
        achieved_a: 0.0,
        generations: Vec::new(),
        sum_check: false,
        density_check: false,
        covering_constant,
    };
    if hypothesis_mass < theta {
        return Ok(run);
    }
    if l1 > config.density {
        run.outcome = Outcome::EarlyExit;
        run.heavy = vec![HeavyCube { cube: None, bounds: vec![(0.0, 1.0); d], volume: 1.0, mass: l1 }];
        return Ok(finish(run));
    }
    let ctx = Run { systems: &systems, family, ball_mass, assignment };
    let count = systems.count();
    let parts: Vec<GridFunction> = (0..count).map(|s| family.grid_function(depth, |b| ctx.assignment[b] == s)).collect();

    // Reduce N by the smallest power of two for which some system keeps mass θ
    // on its own high set.
    let mut choice = None;
    let mut first = None;
    for m in 1..=64u32 {
        let reduced = config.threshold / 2f64.powi(m as i32) / count as f64;
        if reduced < 1.0 {
            break;
        }
        let masses: Vec<f64> = parts.iter().map(|g| g.integral_where(|i| g.values()[i] >= reduced)).collect();
        let (s, &mass) = masses.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).expect("systems");
        first.get_or_insert((m, s, reduced, mass));
        if mass >= theta {
            choice = Some((m, s, reduced, mass));
            break;
        }
    }
    let Some((m, s, reduced, reduced_mass)) = choice.or(first) else {
        return Err(StoppingError::Config(format!("threshold {} too small for {count} systems", config.threshold)));
    };
    run.reduction_met = choice.is_some();
    run.system = Some(s);
    run.reduction_exponent = m;
    run.reduced_threshold = reduced;
    run.reduced_mass = reduced_mass;
    let fi = &parts[s];
    let high = |v: f64| v >= reduced;

    let weights = weight_profile(&systems, family, &ctx.assignment, s);
    let mut active: BTreeSet<SystemCube> = BTreeSet::new();
    for q in weights.keys() {
        let mut c = q.clone();
        while active.insert(c.clone()) && c.level > TOP_LEVEL {
            c = systems.parent(&c);
        }
    }
    // Σ_{R'} 𝔴_{R'}|R'| below each active cube.
    let mut below: BTreeMap<SystemCube, f64> = BTreeMap::new();
    for (q, w) in &weights {
        let mut c = q.clone();
        let v = w * systems.volume(q);
        loop {
            *below.entry(c.clone()).or_insert(0.0) += v;
            if c.level == TOP_LEVEL {
                break;
            }
            c = systems.parent(&c);
        }
    }

    let mut roots = vec![systems.top(s)];
    let mut volume_bound = 1.0;
    let mut prior_thresholds = 0.0;
    let mut achieved_a = 0.0f64;
    let mut k = 0usize;
    loop {
        k += 1;
        let nk = (reduced / 2f64.powi(k as i32)).floor();
        if nk < 1.0 {
            run.outcome = Outcome::Exhausted;
            break;
        }
        let mut stopping = Vec::new();
        let mut root_ratio = 0.0f64;
        let mut covered_before = 0.0;
        for r0 in &roots {
            let mass0 = if k == 1 { fi.integral() } else { ctx.sub_mass(r0, Some(s)) };
            let packed = below.get(r0).copied().unwrap_or(0.0);
            if packed > 0.0 {
                root_ratio = root_ratio.max(packed / mass0);
            }
            covered_before += box_integral(fi, &systems.bounds(r0), high);
            let mut stack = vec![(r0.clone(), 0.0)];
            while let Some((q, acc)) = stack.pop() {
                let total = acc + weights.get(&q).copied().unwrap_or(0.0);
                if total >= nk {
                    stopping.push(q);
                    continue;
                }
                if q.level < FINEST_LEVEL {
                    for c in systems.children(&q) {
                        if active.contains(&c) {
                            stack.push((c, total));
                        }
                    }
                }
            }
        }
        stopping.sort();
        achieved_a = achieved_a.max(root_ratio);
        volume_bound *= achieved_a * config.density / nk;
        let volume: f64 = stopping.iter().map(|q| systems.volume(q)).sum();
        assert!(volume <= volume_bound * (1.0 + 1e-9) + 1e-15, "volume law failed at generation {k}: {volume} > {volume_bound}");
        let (mut heavy, mut light) = (Vec::new(), Vec::new());
        let (mut heavy_high, mut light_high, mut heavy_mass) = (0.0, 0.0, 0.0);
        for q in stopping {
            let mass = ctx.sub_mass(&q, Some(s));
            let hm = box_integral(fi, &systems.bounds(&q), high);
            if mass > config.density * systems.volume(&q) {
                heavy_high += hm;
                heavy_mass += mass;
                heavy.push(q);
            } else {
                light_high += hm;
                light.push(q);
            }
        }
        let covered_after = heavy_high + light_high;
        assert!(covered_after >= covered_before * (1.0 - 1e-12) - 1e-15, "high set escaped the generation-{k} cubes");
        prior_thresholds += nk;
        assert!(prior_thresholds <= reduced * (1.0 + 1e-12));
        let target = reduced_mass * 2f64.powi(-(k as i32));
        let done = heavy_high >= target;
        if done {
            assert!(heavy_mass >= 2f64.powi(-(k as i32)) * heavy_high * (1.0 - 1e-12), "sub-function mass fell below 2^-k of the high mass");
        }
        run.generations.push(GenerationTrace {
            k,
            threshold: nk,
            heavy: heavy.clone(),
            light: light.clone(),
            heavy_high_mass: heavy_high,
            light_high_mass: light_high,
            heavy_mass,
            volume,
            volume_bound,
            root_ratio,
        });
        if done {
            run.outcome = Outcome::Heavy;
            run.heavy = heavy
                .iter()
                .map(|q| HeavyCube { cube: Some(q.clone()), bounds: systems.bounds(q), volume: systems.volume(q), mass: ctx.sub_mass(q, None) })
                .collect();
            break;
        }
        if light.is_empty() {
            run.outcome = Outcome::Exhausted;
            break;
        }
        roots = light;
    }
    run.achieved_a = achieved_a;
    Ok(finish(run))
}

fn finish(mut run: StoppingRun) -> StoppingRun {
    let m = run.config.density;
    run.density_check = !run.heavy.is_empty() && run.heavy.iter().all(|h| h.mass > m * h.volume);
    run.sum_check = run.heavy_mass() >= run.config.mass_target();
    run
}
