//! β₁ and β∞ numbers of cloud balls, the dyadic WGL sum, and the β∞/β₁
//! comparison constant.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cubes::{CubeId, CubeLattice};
use crate::grassmann::{AffinePlane, GrassmannError, Subspace};
use crate::pointset::{Ball, RegularCloud};

#[derive(Debug, Error)]
pub enum BetaError {
    #[error("ball contains no cloud points")]
    EmptyBall,
    #[error("{method:?} needs d = 2 and n = 1, got d = {d}, n = {n}")]
    Unsupported { method: BetaMethod, d: usize, n: usize },
    #[error(transparent)]
    Grassmann(#[from] GrassmannError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, BetaError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaKind {
    /// L¹ average of distances, normalized by r^{n+1}.
    Beta1,
    /// Largest distance over r.
    BetaInf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMethod {
    Pca,
    PcaRefined,
    GridOracle,
}

#[derive(Debug, Clone)]
pub struct BetaResult {
    pub value: f64,
    pub plane: AffinePlane,
    pub method: BetaMethod,
    /// Fewer than n + 2 points in the ball; value forced to 0.
    pub degenerate: bool,
    pub points: usize,
}

const REFINE_ITERATIONS: usize = 50;
const REFINE_TOLERANCE: f64 = 1e-8;
const GOLDEN_STEPS: usize = 28;
const ORACLE_ANGLES: usize = 360;
const ORACLE_OFFSETS: usize = 100;

/// In-ball points with the plane held as an orthonormal frame: the first n
/// columns span the plane, the rest are normals with signed offsets.
struct Fit<'a> {
    kind: BetaKind,
    d: usize,
    n: usize,
    r: f64,
    pts: Vec<&'a [f64]>,
    w: Vec<f64>,
}

impl Fit<'_> {
    fn eval(&self, frame: &DMatrix<f64>, offsets: &[f64]) -> f64 {
        let mut acc = 0.0f64;
        for (p, &w) in self.pts.iter().zip(&self.w) {
            let mut s = 0.0;
            for k in self.n..self.d {
                let mut dot = 0.0;
                for a in 0..self.d {
                    dot += frame[(a, k)] * p[a];
                }
                let e = dot - offsets[k - self.n];
                s += e * e;
            }
            let dist = s.sqrt();
            match self.kind {
                BetaKind::Beta1 => acc += w * dist,
                BetaKind::BetaInf => acc = acc.max(dist),
            }
        }
        match self.kind {
            BetaKind::Beta1 => acc / self.r.powi(self.n as i32 + 1),
            BetaKind::BetaInf => acc / self.r,
        }
    }

    fn pca(&self) -> (DMatrix<f64>, Vec<f64>) {
        let d = self.d;
        let total: f64 = self.w.iter().sum();
        let mut c = DVector::zeros(d);
        for (p, &w) in self.pts.iter().zip(&self.w) {
            c += DVector::from_column_slice(p) * (w / total);
        }
        let mut cov = DMatrix::zeros(d, d);
        for (p, &w) in self.pts.iter().zip(&self.w) {
            let y = DVector::from_column_slice(p) - &c;
            cov += &y * y.transpose() * w;
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut frame = DMatrix::zeros(d, d);
        for (col, &i) in order.iter().enumerate() {
            frame.set_column(col, &eig.eigenvectors.column(i));
        }
        let offsets = (self.n..d).map(|k| frame.column(k).dot(&c)).collect();
        (frame, offsets)
    }

    fn anchor(&self, frame: &DMatrix<f64>, offsets: &[f64]) -> DVector<f64> {
        let mut a = DVector::zeros(self.d);
        for k in self.n..self.d {
            a += frame.column(k) * offsets[k - self.n];
        }
        a
    }

    /// Coordinate descent over plane/normal rotations and normal offsets.
    fn refine(&self, mut frame: DMatrix<f64>, mut offsets: Vec<f64>) -> (DMatrix<f64>, Vec<f64>, f64) {
        let mut best = self.eval(&frame, &offsets);
        let mut angle = 0.5;
        let mut shift = 0.5 * self.r;
        for _ in 0..REFINE_ITERATIONS {
            let before = best;
            for i in 0..self.n {
                for k in self.n..self.d {
                    let pivot = self.anchor(&frame, &offsets);
                    let trial = |t: f64| {
                        let f = rotate(&frame, i, k, t);
                        let o: Vec<f64> = (self.n..self.d).map(|c| f.column(c).dot(&pivot)).collect();
                        (f, o)
                    };
                    let t = golden(|t| self.eval_pair(&trial(t)), -angle, angle);
                    let cand = trial(t);
                    let v = self.eval_pair(&cand);
                    if v < best {
                        best = v;
                        (frame, offsets) = cand;
                    }
                }
            }
            for k in 0..self.d - self.n {
                let trial = |t: f64| {
                    let mut o = offsets.clone();
                    o[k] += t;
                    o
                };
                let t = golden(|t| self.eval(&frame, &trial(t)), -shift, shift);
                let o = trial(t);
                let v = self.eval(&frame, &o);
                if v < best {
                    best = v;
                    offsets = o;
                }
            }
            if before - best <= REFINE_TOLERANCE * before.max(f64::MIN_POSITIVE) {
                angle *= 0.5;
                shift *= 0.5;
                if angle < 1e-7 {
                    break;
                }
            }
        }
        (frame, offsets, best)
    }

    fn eval_pair(&self, (f, o): &(DMatrix<f64>, Vec<f64>)) -> f64 {
        self.eval(f, o)
    }

    fn plane(&self, frame: &DMatrix<f64>, offsets: &[f64]) -> Result<AffinePlane> {
        let dir = Subspace::from_orthonormal(frame.columns(0, self.n).into_owned())?;
        let a = self.anchor(frame, offsets);
        Ok(AffinePlane::through(dir, a.as_slice())?)
    }

    /// Exhaustive line search in the plane: angle grid, with an offset grid
    /// for β₁ and the exact midrange offset for β∞.
    fn grid_oracle(&self, center: &[f64]) -> (DMatrix<f64>, Vec<f64>, f64) {
        let mut best = (DMatrix::identity(2, 2), vec![0.0], f64::INFINITY);
        for a in 0..ORACLE_ANGLES {
            let th = a as f64 * std::f64::consts::PI / ORACLE_ANGLES as f64;
            let (s, c) = th.sin_cos();
            let frame = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
            let proj: Vec<f64> = self.pts.iter().map(|p| -s * p[0] + c * p[1]).collect();
            let candidates: Vec<f64> = match self.kind {
                BetaKind::BetaInf => {
                    let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    vec![0.5 * (lo + hi)]
                }
                BetaKind::Beta1 => {
                    let mid = -s * center[0] + c * center[1];
                    (0..ORACLE_OFFSETS)
                        .map(|j| mid - self.r + 2.0 * self.r * j as f64 / (ORACLE_OFFSETS - 1) as f64)
                        .collect()
                }
            };
            for t in candidates {
                let v = match self.kind {
                    BetaKind::BetaInf => proj.iter().map(|p| (p - t).abs()).fold(0.0, f64::max) / self.r,
                    BetaKind::Beta1 => proj.iter().zip(&self.w).map(|(p, w)| w * (p - t).abs()).sum::<f64>() / (self.r * self.r),
                };
                if v < best.2 {
                    best = (frame.clone(), vec![t], v);
                }
            }
        }
        best
    }
}

fn rotate(frame: &DMatrix<f64>, i: usize, k: usize, t: f64) -> DMatrix<f64> {
    let (s, c) = t.sin_cos();
    let mut f = frame.clone();
    let u = frame.column(i).into_owned();
    let v = frame.column(k).into_owned();
    f.set_column(i, &(&u * c + &v * s));
    f.set_column(k, &(&v * c - &u * s));
    f
}

fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..GOLDEN_STEPS {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

/// β of `ball` for the cloud, by the requested plane family.
pub fn beta(cloud: &RegularCloud, ball: &Ball, kind: BetaKind, method: BetaMethod) -> Result<BetaResult> {
    let (d, n) = (cloud.dim(), cloud.n());
    if method == BetaMethod::GridOracle && (d != 2 || n != 1) {
        return Err(BetaError::Unsupported { method, d, n });
    }
    let idx = cloud.ball_indices(ball);
    if idx.is_empty() {
        return Err(BetaError::EmptyBall);
    }
    let fit = Fit {
        kind,
        d,
        n,
        r: ball.radius,
        pts: idx.iter().map(|&i| cloud.point(i)).collect(),
        w: idx.iter().map(|&i| cloud.weight(i)).collect(),
    };
    let (frame, offsets) = fit.pca();
    if idx.len() < n + 2 {
        return Ok(BetaResult { value: 0.0, plane: fit.plane(&frame, &offsets)?, method, degenerate: true, points: idx.len() });
    }
    let (frame, offsets, value) = match method {
        BetaMethod::Pca => {
            let v = fit.eval(&frame, &offsets);
            (frame, offsets, v)
        }
        BetaMethod::PcaRefined => fit.refine(frame, offsets),
        BetaMethod::GridOracle => fit.grid_oracle(&ball.center),
    };
    Ok(BetaResult { value, plane: fit.plane(&frame, &offsets)?, method, degenerate: false, points: idx.len() })
}

pub fn beta1(cloud: &RegularCloud, ball: &Ball, method: BetaMethod) -> Result<BetaResult> {
    beta(cloud, ball, BetaKind::Beta1, method)
}

pub fn beta_inf(cloud: &RegularCloud, ball: &Ball, method: BetaMethod) -> Result<BetaResult> {
    beta(cloud, ball, BetaKind::BetaInf, method)
}

/// The β₁ or β∞ value of a given plane on a ball.
pub fn plane_value(cloud: &RegularCloud, ball: &Ball, kind: BetaKind, plane: &AffinePlane) -> f64 {
    let dists = cloud.ball_indices(ball).into_iter().map(|i| (cloud.weight(i), plane.distance(cloud.point(i))));
    match kind {
        BetaKind::Beta1 => dists.map(|(w, d)| w * d).sum::<f64>() / ball.radius.powi(cloud.n() as i32 + 1),
        BetaKind::BetaInf => dists.map(|(_, d)| d).fold(0.0, f64::max) / ball.radius,
    }
}

/// β(B_Q) for every cube of a lattice, indexed by cube id.
#[derive(Debug, Clone)]
pub struct BetaMap {
    pub kind: BetaKind,
    pub method: BetaMethod,
    pub values: Vec<BetaResult>,
}

impl BetaMap {
    pub fn value(&self, q: CubeId) -> f64 {
        self.values[q].value
    }

    /// Write `level,cell_index,beta,method,degenerate,anchor,basis` rows;
    /// vector fields are `;`-joined.
    pub fn export_csv<W: Write>(&self, lattice: &CubeLattice, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["level", "cell_index", "beta", "method", "degenerate", "anchor", "basis"])?;
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";");
        for (q, b) in self.values.iter().enumerate() {
            let cube = lattice.cube(q);
            let cells = cube.cell.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";");
            let method = serde_json::to_value(b.method).expect("enum serializes");
            out.write_record([
                cube.level.to_string(),
                cells,
                format!("{:?}", b.value),
                method.as_str().unwrap_or_default().to_string(),
                b.degenerate.to_string(),
                join(b.plane.anchor()),
                join(&b.plane.direction().to_record().basis),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn beta_lattice(cloud: &RegularCloud, lattice: &CubeLattice, kind: BetaKind, method: BetaMethod) -> Result<BetaMap> {
    let values = (0..lattice.len())
        .into_par_iter()
        .map(|q| beta(cloud, &lattice.ball(q), kind, method))
        .collect::<Result<Vec<_>>>()?;
    Ok(BetaMap { kind, method, values })
}

/// Σ μ(Q) over Q ⊂ Q0 with β(Q) ≥ ε, divided by μ(Q0).
pub fn wgl_sum(lattice: &CubeLattice, betas: &BetaMap, epsilon: f64, q0: CubeId) -> f64 {
    let flagged: f64 = lattice
        .descendants(q0)
        .into_iter()
        .filter(|&q| !betas.values[q].degenerate && betas.value(q) >= epsilon)
        .map(|q| lattice.cube(q).weight)
        .fold(0.0, |a, w| a + w);
    flagged / lattice.cube(q0).weight
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    /// Largest β∞(B(x,r)) / β₁(B(x,2r))^{1/(n+1)} over kept balls.
    pub constant: f64,
    pub worst_center: Vec<f64>,
    pub worst_radius: f64,
    pub kept: usize,
    pub skipped: usize,
}

/// Compare β∞ on B(c_Q, ℓ(Q)) with β₁ on the doubled ball, over all cubes with
/// ℓ(Q) ≥ 4·resolution; balls where β₁ < 2·resolution / (2ℓ(Q)) are skipped.
/// `None` when every ball is skipped.
pub fn beta_comparison(cloud: &RegularCloud, lattice: &CubeLattice, method: BetaMethod) -> Result<Option<ComparisonReport>> {
    let res = cloud.resolution();
    let n = cloud.n() as f64;
    let rows = (0..lattice.len())
        .into_par_iter()
        .filter(|&q| lattice.cube(q).side() >= 4.0 * res)
        .map(|q| {
            let cube = lattice.cube(q);
            let small = Ball::new(cube.center.clone(), cube.side());
            let big = small.scaled(2.0);
            let b1 = beta1(cloud, &big, method)?;
            if b1.degenerate || b1.value < 2.0 * res / big.radius {
                return Ok(None);
            }
            let binf = beta_inf(cloud, &small, method)?;
            Ok(Some((binf.value / b1.value.powf(1.0 / (n + 1.0)), small)))
        })
        .collect::<Result<Vec<_>>>()?;
    let skipped = rows.iter().filter(|r| r.is_none()).count();
    let kept: Vec<(f64, Ball)> = rows.into_iter().flatten().collect();
    let Some((constant, ball)) = kept.iter().max_by(|a, b| a.0.total_cmp(&b.0)).cloned() else {
        return Ok(None);
    };
    Ok(Some(ComparisonReport { constant, worst_center: ball.center, worst_radius: ball.radius, kept: kept.len(), skipped }))
}
