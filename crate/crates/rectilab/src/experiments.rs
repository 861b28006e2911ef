//! Drivers that run several analyses over a range of depths and tabulate
//! them side by side, plus the Favard sweep over generator refinements.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beta::{beta_lattice, wgl_sum, BetaError, BetaKind, BetaMethod};
use crate::cones::{cone_count_profile, ConeError};
use crate::cubes::{build_lattice_with_origin, CubeId, CubeLattice, LatticeError};
use crate::grassmann::Subspace;
use crate::pointset::{self, PointsetError, RegularCloud};
use crate::width::{width_carleson, WidthError, WidthParams};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("generator: {0}")]
    Generator(#[from] PointsetError),
    #[error("lattice: {0}")]
    Lattice(#[from] LatticeError),
    #[error("beta: {0}")]
    Beta(#[from] BetaError),
    #[error("width: {0}")]
    Width(#[from] WidthError),
    #[error("cones: {0}")]
    Cones(#[from] ConeError),
    #[error("{0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// A named point-cloud generator with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorSpec {
    FourCorners { generation: u32 },
    Hrycak { m: u32 },
    /// Horizontal segment of the given length centered at (1/2, 1/2).
    Segment { length: f64, resolution: f64 },
    Circle { radius: f64, resolution: f64 },
    /// The tent graph y = L|x − 1/2| over [0, 1].
    Graph { lipschitz: f64, resolution: f64 },
}

impl GeneratorSpec {
    pub fn build(&self) -> Result<RegularCloud> {
        Ok(match *self {
            GeneratorSpec::FourCorners { generation } => pointset::four_corners(generation)?,
            GeneratorSpec::Hrycak { m } => pointset::hrycak(m)?,
            GeneratorSpec::Segment { length, resolution } => {
                pointset::segment(&[0.5 - length / 2.0, 0.5], &[0.5 + length / 2.0, 0.5], resolution)?
            }
            GeneratorSpec::Circle { radius, resolution } => pointset::circle([0.5, 0.5], radius, resolution)?,
            GeneratorSpec::Graph { lipschitz, resolution } => pointset::tent_graph(lipschitz, resolution)?,
        })
    }

    /// The generator at refinement `generation`; sets without a refinement
    /// parameter are returned unchanged.
    pub fn refined(&self, generation: u32) -> Self {
        match self {
            GeneratorSpec::FourCorners { .. } => GeneratorSpec::FourCorners { generation },
            other => other.clone(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            GeneratorSpec::FourCorners { generation } => format!("four-corners({generation})"),
            GeneratorSpec::Hrycak { m } => format!("hrycak({m})"),
            GeneratorSpec::Segment { length, .. } => format!("segment({length})"),
            GeneratorSpec::Circle { radius, .. } => format!("circle({radius})"),
            GeneratorSpec::Graph { lipschitz, .. } => format!("graph(L={lipschitz})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyConfig {
    pub set: GeneratorSpec,
    pub depths: Vec<i32>,
    pub epsilon: f64,
    pub seed: u64,
    /// Use generation = depth for generators that refine.
    pub refine: bool,
    pub delta: f64,
    pub pbp_directions: usize,
    pub alpha: f64,
    pub cone_threshold: usize,
    /// At most this many evenly spaced points are profiled.
    pub cone_points: usize,
    pub width: Option<WidthConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthConfig {
    pub directions: usize,
    pub offsets_per_axis: usize,
    pub tube_factor: f64,
}

impl From<WidthConfig> for WidthParams {
    fn from(w: WidthConfig) -> Self {
        WidthParams { directions: w.directions, offsets_per_axis: w.offsets_per_axis, tube_factor: w.tube_factor }
    }
}

impl Default for WidthConfig {
    fn default() -> Self {
        let p = WidthParams::default();
        Self { directions: p.directions, offsets_per_axis: p.offsets_per_axis, tube_factor: p.tube_factor }
    }
}

impl DichotomyConfig {
    pub fn new(set: GeneratorSpec, depths: Vec<i32>, epsilon: f64, seed: u64) -> Self {
        let refine = matches!(set, GeneratorSpec::FourCorners { .. });
        Self {
            set,
            depths,
            epsilon,
            seed,
            refine,
            delta: 0.1,
            pbp_directions: 16,
            alpha: 0.5,
            cone_threshold: 3,
            cone_points: 256,
            width: Some(WidthConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRow {
    pub depth: i32,
    pub set: String,
    pub points: usize,
    pub wgl_ratio: f64,
    pub width_ratio: Option<f64>,
    pub width_std_error: Option<f64>,
    pub pbp_margin: f64,
    pub cone_fraction: f64,
    pub cone_mesh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub pbp_positive: bool,
    pub pbp_decreasing: bool,
    /// Last over first WGL ratio.
    pub wgl_growth: f64,
    /// PBP-positive sets should keep WGL bounded, decaying PBP should go with growth.
    pub matches_expectation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub config: DichotomyConfig,
    pub beta_method: BetaMethod,
    pub origin_shift: Vec<f64>,
    pub coarsest_level: i32,
    pub rows: Vec<DepthRow>,
    pub trend: Trend,
    /// Wall-clock milliseconds per depth; excluded from `fingerprint`.
    pub runtimes_ms: Vec<u128>,
}

impl ExperimentReport {
    /// JSON of everything except the runtimes.
    pub fn fingerprint(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().expect("object").remove("runtimes_ms");
        v.to_string()
    }

    pub fn export_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Lattice origin shift in (−1/2, 0]^d drawn from the seed.
pub fn origin_shift(seed: u64, d: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..d).map(|_| -rng.gen::<f64>() * 0.5).collect()
}

/// The level whose cells of side 2^{-level}, started at the shifted origin,
/// hold the whole cloud in one cell.
fn coarsest_level(cloud: &RegularCloud) -> i32 {
    let (lo, hi) = cloud.bounding_box();
    let span = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    -((span + 0.5).log2().ceil() as i32)
}

/// Lattice to `depth` with a single top cube, its grid anchored at the
/// bounding-box corner plus `shift` (entries in (−1/2, 0]).
pub fn rooted_lattice(cloud: &RegularCloud, depth: i32, shift: &[f64]) -> Result<(CubeLattice, CubeId)> {
    let j_min = coarsest_level(cloud).min(depth);
    let (lo, _) = cloud.bounding_box();
    let origin: Vec<f64> = lo.iter().zip(shift).map(|(a, s)| a + s).collect();
    let lattice = build_lattice_with_origin(cloud, j_min, depth, &origin)?;
    let root = lattice.root().ok_or_else(|| ExperimentError::Config("lattice has several top cubes".into()))?;
    Ok((lattice, root))
}

fn subsample(cloud: &RegularCloud, at_most: usize) -> Vec<f64> {
    let stride = cloud.len().div_ceil(at_most.max(1));
    (0..cloud.len()).map(|i| if i % stride == 0 { cloud.weight(i) } else { 0.0 }).collect()
}

fn depth_row(config: &DichotomyConfig, depth: i32, shift: &[f64]) -> Result<DepthRow> {
    let spec = if config.refine { config.set.refined(depth.max(1) as u32) } else { config.set.clone() };
    let cloud = spec.build()?;
    let (lattice, root) = rooted_lattice(&cloud, depth, shift)?;
    let betas = beta_lattice(&cloud, &lattice, BetaKind::Beta1, BetaMethod::PcaRefined)?;
    let wgl_ratio = wgl_sum(&lattice, &betas, config.epsilon, root);
    let salt = config.seed.wrapping_mul(1_000_003).wrapping_add(depth as u64);
    let (width_ratio, width_std_error) = match config.width {
        Some(w) => {
            let r = width_carleson(&cloud, &lattice, root, &w.into(), salt)?;
            (Some(r.ratio), Some(r.std_error))
        }
        None => (None, None),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(salt);
    let ball = cloud.enclosing_ball();
    let pbp_margin = pointset::pbp_margin(&cloud, &ball, config.delta, config.pbp_directions, &mut rng)?.margin;
    let weights = subsample(&cloud, config.cone_points);
    let profile = cone_count_profile(&cloud, &weights, config.alpha, config.cone_threshold, depth.max(0) as u32, 36, 8, &mut rng)?;
    Ok(DepthRow {
        depth,
        set: spec.label(),
        points: cloud.len(),
        wgl_ratio,
        width_ratio,
        width_std_error,
        pbp_margin,
        cone_fraction: profile.fraction,
        cone_mesh: profile.mesh,
    })
}

pub fn run_dichotomy(config: &DichotomyConfig) -> Result<ExperimentReport> {
    if config.depths.is_empty() || config.depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ExperimentError::Config("depths must be nonempty and increasing".into()));
    }
    let d = config.set.build()?.dim();
    let shift = origin_shift(config.seed, d);
    let mut rows = Vec::new();
    let mut runtimes_ms = Vec::new();
    let mut coarsest = i32::MAX;
    for &depth in &config.depths {
        let start = Instant::now();
        let row = depth_row(config, depth, &shift)?;
        runtimes_ms.push(start.elapsed().as_millis());
        let spec = if config.refine { config.set.refined(depth.max(1) as u32) } else { config.set.clone() };
        coarsest = coarsest.min(coarsest_level(&spec.build()?));
        rows.push(row);
    }
    let pbp_positive = rows.iter().all(|r| r.pbp_margin > 0.0);
    let pbp_decreasing = rows.windows(2).all(|w| w[1].pbp_margin < w[0].pbp_margin);
    let first = rows[0].wgl_ratio;
    let wgl_growth = if first > 0.0 { rows.last().unwrap().wgl_ratio / first } else { f64::INFINITY };
    let matches_expectation = if pbp_decreasing { wgl_growth > 1.0 } else { !pbp_positive || wgl_growth <= 1.2 };
    Ok(ExperimentReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        beta_method: BetaMethod::PcaRefined,
        origin_shift: shift,
        coarsest_level: coarsest,
        rows,
        trend: Trend { pbp_positive, pbp_decreasing, wgl_growth, matches_expectation },
        runtimes_ms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FavardRow {
    pub generation: u32,
    pub set: String,
    /// Mean over equally spaced directions of the shadow length at the cloud's resolution.
    pub mean_projection: f64,
    pub min_projection: f64,
    pub max_projection: f64,
}

/// Planar sets only: mean shadow length of the whole set over `n_directions`
/// equally spaced lines, per refinement.
pub fn favard_sweep(set: &GeneratorSpec, generations: &[u32], n_directions: usize) -> Result<Vec<FavardRow>> {
    generations
        .iter()
        .map(|&g| {
            let spec = set.refined(g);
            let cloud = spec.build()?;
            if cloud.dim() != 2 || cloud.n() != 1 {
                return Err(ExperimentError::Config("favard sweep needs a planar curve-like set".into()));
            }
            let ball = cloud.enclosing_ball();
            let shadows: Vec<f64> = (0..n_directions)
                .into_par_iter()
                .map(|k| {
                    let v = Subspace::planar_line(k as f64 * std::f64::consts::PI / n_directions as f64);
                    pointset::projection_measure(&cloud, &v, &ball, cloud.resolution()).expect("planar")
                })
                .collect();
            Ok(FavardRow {
                generation: g,
                set: spec.label(),
                mean_projection: shadows.iter().sum::<f64>() / n_directions as f64,
                min_projection: shadows.iter().copied().fold(f64::INFINITY, f64::min),
                max_projection: shadows.iter().copied().fold(0.0, f64::max),
            })
        })
        .collect()
}
