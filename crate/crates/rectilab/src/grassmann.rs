//! Linear subspaces of R^d, affine planes, and the measures and metrics on them.
//!
//! A [`Subspace`] is stored as a d×n matrix with orthonormal columns. Every
//! operation works from that basis; projection matrices are formed on demand.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ORTHO_TOL: f64 = 1e-10;
/// Singular values below this are treated as rank loss.
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrassmannError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("subspace dimension {n} exceeds ambient dimension {d}")]
    BadDimension { d: usize, n: usize },
    #[error("basis is not orthonormal (defect {defect:.3e})")]
    NotOrthonormal { defect: f64 },
    #[error("vectors do not span a subspace of dimension {wanted} (smallest singular value {sigma:.3e})")]
    Degenerate { wanted: usize, sigma: f64 },
    #[error("subspace is not contained in the given superspace (defect {defect:.3e})")]
    NotContained { defect: f64 },
    #[error("annihilation precondition violated: |pi_V z|/|z| = {ratio:.6} exceeds alpha = {alpha:.6}")]
    NotAdmissible { ratio: f64, alpha: f64 },
    #[error("zero vector given where a nonzero one is required")]
    ZeroVector,
    #[error("radius {0} outside [0, 2]")]
    BadRadius(f64),
}

pub type Result<T> = std::result::Result<T, GrassmannError>;

/// An n-dimensional linear subspace of R^d with an orthonormal basis.
#[derive(Debug, Clone)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    /// Wrap a basis that is already orthonormal.
    pub fn from_orthonormal(basis: DMatrix<f64>) -> Result<Self> {
        let (d, n) = basis.shape();
        if n > d {
            return Err(GrassmannError::BadDimension { d, n });
        }
        let gram = basis.transpose() * &basis;
        let defect = (gram - DMatrix::identity(n, n)).amax();
        if defect > ORTHO_TOL {
            return Err(GrassmannError::NotOrthonormal { defect });
        }
        Ok(Self { basis })
    }

    /// Orthonormalize the columns of `vectors`; they must be linearly independent.
    pub fn from_spanning(vectors: DMatrix<f64>) -> Result<Self> {
        let (d, n) = vectors.shape();
        if n > d {
            return Err(GrassmannError::BadDimension { d, n });
        }
        if n == 0 {
            return Ok(Self::zero(d));
        }
        let svd = vectors.clone().svd(true, false);
        let sigma = svd.singular_values.min();
        let scale = svd.singular_values.max().max(1.0);
        if sigma <= RANK_TOL * scale {
            return Err(GrassmannError::Degenerate { wanted: n, sigma });
        }
        let qr = vectors.qr();
        let q = qr.q();
        Ok(Self { basis: q.columns(0, n).into_owned() })
    }

    /// Span of a single nonzero vector.
    pub fn line(direction: &[f64]) -> Result<Self> {
        Self::from_spanning(DMatrix::from_column_slice(direction.len(), 1, direction))
    }

    /// Span of the given coordinate axes.
    pub fn coordinate(d: usize, axes: &[usize]) -> Self {
        let mut basis = DMatrix::zeros(d, axes.len());
        for (col, &axis) in axes.iter().enumerate() {
            basis[(axis, col)] = 1.0;
        }
        Self { basis }
    }

    /// The line in R² at angle `theta` from the x-axis.
    pub fn planar_line(theta: f64) -> Self {
        Self { basis: DMatrix::from_column_slice(2, 1, &[theta.cos(), theta.sin()]) }
    }

    pub fn zero(d: usize) -> Self {
        Self { basis: DMatrix::zeros(d, 0) }
    }

    pub fn full(d: usize) -> Self {
        Self { basis: DMatrix::identity(d, d) }
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// The d×d orthogonal projection matrix onto the subspace.
    pub fn projection_matrix(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.ambient_dim() {
            return Err(GrassmannError::DimensionMismatch { expected: self.ambient_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Coordinates of the projection of `x` in this subspace's basis.
    pub fn coords(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|c| self.basis.column(c).iter().zip(x).map(|(b, v)| b * v).sum())
            .collect()
    }

    /// The point of R^d with the given basis coordinates.
    pub fn embed(&self, coords: &[f64]) -> Vec<f64> {
        let d = self.ambient_dim();
        let mut out = vec![0.0; d];
        for (c, &t) in coords.iter().enumerate() {
            for i in 0..d {
                out[i] += t * self.basis[(i, c)];
            }
        }
        out
    }

    /// Orthogonal projection of `x` onto the subspace.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(self.embed(&self.coords(x)))
    }

    /// Component of `x` orthogonal to the subspace.
    pub fn reject(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.project(x)?;
        Ok(x.iter().zip(&p).map(|(a, b)| a - b).collect())
    }

    /// Length of the component of `x` orthogonal to the subspace, without allocation checks.
    pub fn distance_to(&self, x: &[f64]) -> f64 {
        let c = self.coords(x);
        let total: f64 = x.iter().map(|v| v * v).sum();
        let inside: f64 = c.iter().map(|v| v * v).sum();
        (total - inside).max(0.0).sqrt()
    }

    /// An orthonormal basis of the orthogonal complement.
    pub fn complement(&self) -> Subspace {
        let (d, n) = self.basis.shape();
        let start: Vec<DVector<f64>> = (0..n).map(|c| self.basis.column(c).into_owned()).collect();
        let axes: Vec<DVector<f64>> = (0..d).map(|i| DVector::from_fn(d, |k, _| if k == i { 1.0 } else { 0.0 })).collect();
        let extra = extend_orthonormal(&start, &axes, d - n);
        let mut basis = DMatrix::zeros(d, d - n);
        for (col, v) in extra.iter().enumerate() {
            basis.set_column(col, v);
        }
        Self { basis }
    }

    /// Whether `other` is contained in this subspace, up to `tol` in operator norm.
    pub fn contains_subspace(&self, other: &Subspace, tol: f64) -> bool {
        containment_defect(self, other) <= tol
    }

    /// Serializable form with a row-major basis.
    pub fn to_record(&self) -> SubspaceRecord {
        let (d, n) = self.basis.shape();
        let mut basis = Vec::with_capacity(d * n);
        for i in 0..d {
            for j in 0..n {
                basis.push(self.basis[(i, j)]);
            }
        }
        SubspaceRecord { d, n, basis }
    }

    pub fn from_record(rec: &SubspaceRecord) -> Result<Self> {
        if rec.basis.len() != rec.d * rec.n {
            return Err(GrassmannError::DimensionMismatch { expected: rec.d * rec.n, got: rec.basis.len() });
        }
        Self::from_orthonormal(DMatrix::from_row_slice(rec.d, rec.n, &rec.basis))
    }
}

/// JSON shape of a subspace: `{d, n, basis}` with the basis in row-major order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SubspaceRecord {
    pub d: usize,
    pub n: usize,
    pub basis: Vec<f64>,
}

/// Greedy Gram–Schmidt: add `count` vectors drawn from `candidates`, each time
/// the one with the largest component orthogonal to everything chosen so far.
fn extend_orthonormal(start: &[DVector<f64>], candidates: &[DVector<f64>], count: usize) -> Vec<DVector<f64>> {
    let mut chosen: Vec<DVector<f64>> = start.to_vec();
    let mut added = Vec::with_capacity(count);
    for _ in 0..count {
        let mut best: Option<DVector<f64>> = None;
        let mut best_norm = 0.0;
        for c in candidates {
            let mut r = c.clone();
            for _ in 0..2 {
                for q in &chosen {
                    let coef = q.dot(&r);
                    r -= q * coef;
                }
            }
            let nr = r.norm();
            if nr > best_norm {
                best_norm = nr;
                best = Some(r);
            }
        }
        let r = best.expect("candidates span the target space") / best_norm;
        chosen.push(r.clone());
        added.push(r);
    }
    added
}

fn containment_defect(outer: &Subspace, inner: &Subspace) -> f64 {
    let residual = (DMatrix::identity(outer.ambient_dim(), outer.ambient_dim()) - outer.projection_matrix())
        * inner.basis();
    largest_singular_value(&residual)
}

fn largest_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

fn check_pair(a: &Subspace, b: &Subspace) -> Result<()> {
    if a.ambient_dim() != b.ambient_dim() {
        return Err(GrassmannError::DimensionMismatch { expected: a.ambient_dim(), got: b.ambient_dim() });
    }
    if a.dim() != b.dim() {
        return Err(GrassmannError::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    Ok(())
}

/// Operator norm of the difference of the two orthogonal projections.
pub fn metric(a: &Subspace, b: &Subspace) -> Result<f64> {
    check_pair(a, b)?;
    Ok(largest_singular_value(&(a.projection_matrix() - b.projection_matrix())))
}

/// Largest distance from a unit vector of `a` to the subspace `b`.
pub fn metric_bar(a: &Subspace, b: &Subspace) -> Result<f64> {
    check_pair(a, b)?;
    Ok(containment_defect(b, a))
}

/// Sample from the rotation-invariant probability measure on n-planes of R^d.
pub fn sample_haar<R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> Result<Subspace> {
    if n > d {
        return Err(GrassmannError::BadDimension { d, n });
    }
    if n == 0 {
        return Ok(Subspace::zero(d));
    }
    loop {
        let g = DMatrix::from_fn(d, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        if let Ok(s) = Subspace::from_spanning(g) {
            return Ok(s);
        }
    }
}

/// Given `v1 ⊂ w1` and a nearby `w2`, an n-plane of `w2` whose distance to `v1`
/// is controlled by the distance from `w1` to `w2`.
pub fn nearest_subspace_in(w2: &Subspace, v1: &Subspace, w1: &Subspace) -> Result<Subspace> {
    check_pair(w1, w2)?;
    if v1.ambient_dim() != w1.ambient_dim() {
        return Err(GrassmannError::DimensionMismatch { expected: w1.ambient_dim(), got: v1.ambient_dim() });
    }
    if v1.dim() > w1.dim() {
        return Err(GrassmannError::BadDimension { d: w1.dim(), n: v1.dim() });
    }
    let defect = containment_defect(w1, v1);
    if defect > 1e-8 {
        return Err(GrassmannError::NotContained { defect });
    }
    let pushed = w2.projection_matrix() * v1.basis();
    Subspace::from_spanning(pushed)
}

/// A plane close to `v` that contains no component of `z`: rotate `v` inside
/// span{π_V z, π_{V⊥} z} so that `z` becomes orthogonal to it.
///
/// Admissible when |π_V z| ≤ (δ/4)|z|; the result is then within δ of `v`.
pub fn annihilating_plane(z: &[f64], v: &Subspace, delta: f64) -> Result<Subspace> {
    v.check_point(z)?;
    let norm_z = norm(z);
    if norm_z == 0.0 {
        return Err(GrassmannError::ZeroVector);
    }
    let alpha = delta / 4.0;
    let inside = v.project(z)?;
    let norm_in = norm(&inside);
    let ratio = norm_in / norm_z;
    if ratio > alpha {
        return Err(GrassmannError::NotAdmissible { ratio, alpha });
    }
    if norm_in == 0.0 {
        return Ok(v.clone());
    }
    let outside: Vec<f64> = z.iter().zip(&inside).map(|(a, b)| a - b).collect();
    let norm_out = norm(&outside);
    let d = v.ambient_dim();
    let u = DVector::from_iterator(d, inside.iter().map(|x| x / norm_in));
    let w = DVector::from_iterator(d, outside.iter().map(|x| x / norm_out));
    let rotated = (&u * norm_out - &w * norm_in) / norm_z;

    // Orthonormal basis of V ∩ u^⊥, completed by the rotated vector.
    let candidates: Vec<DVector<f64>> = (0..v.dim()).map(|c| v.basis().column(c).into_owned()).collect();
    let rest = extend_orthonormal(&[u], &candidates, v.dim() - 1);
    let mut columns = DMatrix::zeros(d, v.dim());
    columns.set_column(0, &rotated);
    for (col, r) in rest.iter().enumerate() {
        columns.set_column(col + 1, r);
    }
    Subspace::from_spanning(columns)
}

/// Two-stage sample: an (n+1)-plane W from the invariant measure, then an
/// n-plane inside W from the invariant measure of W's own Grassmannian.
pub fn fubini_sample<R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> Result<Subspace> {
    if n >= d {
        return Err(GrassmannError::BadDimension { d, n: n + 1 });
    }
    let outer = sample_haar(d, n + 1, rng)?;
    let inner = sample_haar(n + 1, n, rng)?;
    Subspace::from_spanning(outer.basis() * inner.basis())
}

/// An m-dimensional affine plane stored by its direction and the anchor point
/// closest to the origin.
#[derive(Debug, Clone)]
pub struct AffinePlane {
    direction: Subspace,
    anchor: Vec<f64>,
}

impl AffinePlane {
    /// The plane `point + direction`, with its anchor made canonical.
    pub fn through(direction: Subspace, point: &[f64]) -> Result<Self> {
        let anchor = direction.reject(point)?;
        Ok(Self { direction, anchor })
    }

    pub fn direction(&self) -> &Subspace {
        &self.direction
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    /// Euclidean distance from `x` to the plane.
    pub fn distance(&self, x: &[f64]) -> f64 {
        let shifted: Vec<f64> = x.iter().zip(&self.anchor).map(|(a, b)| a - b).collect();
        self.direction.distance_to(&shifted)
    }
}

/// A closed ball in the Grassmannian metric.
#[derive(Debug, Clone)]
pub struct GrassmannBall {
    center: Subspace,
    radius: f64,
}

impl GrassmannBall {
    pub fn new(center: Subspace, radius: f64) -> Result<Self> {
        if !(0.0..=2.0).contains(&radius) {
            return Err(GrassmannError::BadRadius(radius));
        }
        Ok(Self { center, radius })
    }

    pub fn center(&self) -> &Subspace {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn contains(&self, v: &Subspace) -> bool {
        metric(&self.center, v).map(|m| m <= self.radius + 1e-12).unwrap_or(false)
    }

    /// A plane at metric distance exactly `s ≤ radius` from the center in a
    /// random tangent direction.
    pub fn sample_at<R: Rng + ?Sized>(&self, s: f64, rng: &mut R) -> Subspace {
        let s = s.clamp(0.0, self.radius.min(1.0));
        let (d, n) = (self.center.ambient_dim(), self.center.dim());
        if s == 0.0 || n == 0 || n == d {
            return self.center.clone();
        }
        let comp = self.center.complement();
        let raw = DMatrix::from_fn(d - n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sigma = largest_singular_value(&raw);
        if sigma == 0.0 {
            return self.center.clone();
        }
        // Principal angles of span(B + H) are atan of the singular values of H.
        let target = if s >= 1.0 { 1e8 } else { s / (1.0 - s * s).sqrt() };
        let tangent = comp.basis() * raw * (target / sigma);
        Subspace::from_spanning(self.center.basis() + tangent).unwrap_or_else(|_| self.center.clone())
    }

    /// A plane drawn with metric distance uniform in [0, radius].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Subspace {
        let s = rng.gen::<f64>() * self.radius;
        self.sample_at(s, rng)
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let k = values.len();
        if k == 0 {
            return Self { value: 0.0, std_error: 0.0, samples: 0 };
        }
        let mean = values.iter().sum::<f64>() / k as f64;
        let var = if k > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64
        } else {
            0.0
        };
        Self { value: mean, std_error: (var / k as f64).sqrt(), samples: k }
    }
}

/// Integrate `f` over m-dimensional affine planes of R^d against the measure
/// built from fibers of projections onto (d−m)-planes: a plane is the fiber
/// over a point w of V, V drawn from the invariant measure and w uniform in
/// the cube [−window, window]^{d−m} of V's coordinates.
pub fn integrate_affine<R, F>(f: F, d: usize, m: usize, window: f64, samples: usize, rng: &mut R) -> Result<Estimate>
where
    R: Rng + ?Sized,
    F: Fn(&AffinePlane) -> f64,
{
    if m > d {
        return Err(GrassmannError::BadDimension { d, n: m });
    }
    let k = d - m;
    let volume = (2.0 * window).powi(k as i32);
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        let v = sample_haar(d, k, rng)?;
        let coords: Vec<f64> = (0..k).map(|_| rng.gen_range(-window..=window)).collect();
        let w = v.embed(&coords);
        let plane = AffinePlane::through(v.complement(), &w)?;
        values.push(volume * f(&plane));
    }
    Ok(Estimate::from_samples(&values))
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Rotation of R^d in the (i,j) coordinate plane.
    fn givens(d: usize, i: usize, j: usize, theta: f64) -> DMatrix<f64> {
        let mut g = DMatrix::identity(d, d);
        g[(i, i)] = theta.cos();
        g[(j, j)] = theta.cos();
        g[(i, j)] = -theta.sin();
        g[(j, i)] = theta.sin();
        g
    }

    #[test]
    fn coordinate_projection() {
        let x_axis = Subspace::coordinate(2, &[0]);
        assert_eq!(x_axis.project(&[3.0, 4.0]).unwrap(), vec![3.0, 0.0]);
        let diag = Subspace::line(&[1.0, 1.0]).unwrap();
        let p = diag.project(&[1.0, 0.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn projection_rejects_wrong_dimension() {
        let v = Subspace::coordinate(3, &[0]);
        assert!(matches!(v.project(&[1.0, 2.0]), Err(GrassmannError::DimensionMismatch { .. })));
    }

    #[test]
    fn projection_is_idempotent_and_orthogonal() {
        let mut r = rng(1);
        for _ in 0..1000 {
            let d = r.gen_range(2..=6);
            let n = r.gen_range(0..=d);
            let v = sample_haar(d, n, &mut r).unwrap();
            let x: Vec<f64> = (0..d).map(|_| r.gen_range(-3.0..3.0)).collect();
            let p = v.project(&x).unwrap();
            let pp = v.project(&p).unwrap();
            assert!(dist(&p, &pp) < 1e-12);
            let residual: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a - b).collect();
            assert!(norm(&v.coords(&residual)) < 1e-12);
        }
    }

    #[test]
    fn orthogonal_axes_are_at_distance_one() {
        let x = Subspace::coordinate(2, &[0]);
        let y = Subspace::coordinate(2, &[1]);
        assert!((metric(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert!((metric_bar(&x, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lines_at_angle_theta() {
        // Closed form: P(θ) − P(0) has eigenvalues ±sin θ.
        for theta in [PI / 12.0, PI / 6.0, PI / 4.0] {
            let a = Subspace::planar_line(0.3);
            let b = Subspace::planar_line(0.3 + theta);
            let expected = theta.sin();
            assert!((metric(&a, &b).unwrap() - expected).abs() < 1e-12);
            assert!((metric_bar(&a, &b).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn metric_bar_comparable_to_metric() {
        let mut r = rng(2);
        let mut worst: f64 = 1.0;
        for _ in 0..1000 {
            let d = r.gen_range(2..=5);
            let n = r.gen_range(1..d);
            let a = sample_haar(d, n, &mut r).unwrap();
            let b = sample_haar(d, n, &mut r).unwrap();
            let m = metric(&a, &b).unwrap();
            let mb = metric_bar(&a, &b).unwrap();
            assert!(mb <= m + 1e-12);
            if mb > 1e-9 {
                worst = worst.max(m / mb);
            }
        }
        assert!(worst <= 2.0, "ratio {worst}");
    }

    #[test]
    fn rejects_mismatched_pairs() {
        let a = Subspace::coordinate(3, &[0]);
        let b = Subspace::coordinate(3, &[0, 1]);
        assert!(metric(&a, &b).is_err());
        let c = Subspace::coordinate(2, &[0]);
        assert!(metric(&a, &c).is_err());
    }

    #[test]
    fn full_dimension_haar_is_everything() {
        let v = sample_haar(3, 3, &mut rng(3)).unwrap();
        assert!(metric(&v, &Subspace::full(3)).unwrap() < 1e-10);
    }

    #[test]
    fn complement_is_orthogonal() {
        let mut r = rng(4);
        for _ in 0..50 {
            let v = sample_haar(5, 2, &mut r).unwrap();
            let c = v.complement();
            assert_eq!(c.dim(), 3);
            assert!((v.basis().transpose() * c.basis()).amax() < 1e-10);
        }
    }

    #[test]
    fn nearest_subspace_examples() {
        let w1 = Subspace::coordinate(3, &[0, 1]);
        let rot = givens(3, 1, 2, 0.2);
        let w2 = Subspace::from_spanning(&rot * w1.basis()).unwrap();
        let gap = metric(&w1, &w2).unwrap();

        let x_axis = Subspace::coordinate(3, &[0]);
        let v2 = nearest_subspace_in(&w2, &x_axis, &w1).unwrap();
        assert!(metric(&v2, &x_axis).unwrap() < 1e-12);

        let y_axis = Subspace::coordinate(3, &[1]);
        let v2 = nearest_subspace_in(&w2, &y_axis, &w1).unwrap();
        let m = metric(&v2, &y_axis).unwrap();
        // The pushed y-axis is the rotated y-axis, at angle 0.2.
        assert!((m - 0.2f64.sin()).abs() < 1e-12);
        assert!(m <= 2.0 * gap);
        assert!(w2.contains_subspace(&v2, 1e-10));
    }

    #[test]
    fn nearest_subspace_rejects_bad_input() {
        let w1 = Subspace::coordinate(3, &[0, 1]);
        let z_axis = Subspace::coordinate(3, &[2]);
        assert!(matches!(
            nearest_subspace_in(&w1, &z_axis, &w1),
            Err(GrassmannError::NotContained { .. })
        ));
        // W2 orthogonal to the x-axis collapses it.
        let w2 = Subspace::coordinate(3, &[1, 2]);
        let x_axis = Subspace::coordinate(3, &[0]);
        assert!(matches!(nearest_subspace_in(&w2, &x_axis, &w1), Err(GrassmannError::Degenerate { .. })));
    }

    #[test]
    fn annihilation_planar_example() {
        let v = Subspace::coordinate(2, &[0]);
        let z = [0.05, 1.0];
        let out = annihilating_plane(&z, &v, 0.4).unwrap();
        let eps: f64 = 0.05;
        let expected = Subspace::line(&[1.0, -eps]).unwrap();
        assert!(metric(&out, &expected).unwrap() < 1e-12);
        assert!(norm(&out.project(&z).unwrap()) < 1e-12);
    }

    #[test]
    fn annihilation_checks_admissibility() {
        let v = Subspace::coordinate(2, &[0]);
        match annihilating_plane(&[0.5, 1.0], &v, 0.4) {
            Err(GrassmannError::NotAdmissible { ratio, alpha }) => {
                assert!((ratio - 0.5 / 1.25f64.sqrt()).abs() < 1e-12);
                assert!((alpha - 0.1).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
        let same = annihilating_plane(&[0.0, 2.0], &v, 0.4).unwrap();
        assert!(metric(&same, &v).unwrap() == 0.0);
    }

    #[test]
    fn fubini_reduces_to_haar_on_planar_lines() {
        // In R² the intermediate plane is all of R², so the inner draw is a Haar line.
        let mut r = rng(5);
        let v = fubini_sample(2, 1, &mut r).unwrap();
        assert_eq!(v.dim(), 1);
        assert!(fubini_sample(2, 2, &mut r).is_err());
    }

    #[test]
    fn affine_integral_of_unit_ball_hits() {
        let hits = |p: &AffinePlane| if norm(p.anchor()) < 1.0 { 1.0 } else { 0.0 };
        let mut r = rng(6);
        // Lines in R² meeting the unit disc: measure 2 (a diameter's worth of offsets).
        let e = integrate_affine(hits, 2, 1, 1.5, 20_000, &mut r).unwrap();
        assert!((e.value - 2.0).abs() < 3.0 * e.std_error, "{e:?}");
        // Lines in R³ meeting the unit ball: measure π.
        let e = integrate_affine(hits, 3, 1, 1.5, 20_000, &mut r).unwrap();
        assert!((e.value - PI).abs() < 3.0 * e.std_error, "{e:?}");
        let e = integrate_affine(|_| 0.0, 3, 2, 1.0, 100, &mut r).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn grassmann_ball_sampling_hits_requested_distance() {
        let mut r = rng(7);
        let center = sample_haar(4, 2, &mut r).unwrap();
        let ball = GrassmannBall::new(center.clone(), 0.3).unwrap();
        for _ in 0..200 {
            let v = ball.sample(&mut r);
            assert!(ball.contains(&v));
        }
        let v = ball.sample_at(0.25, &mut r);
        assert!((metric(&center, &v).unwrap() - 0.25).abs() < 1e-9);
        assert!(GrassmannBall::new(center, 2.5).is_err());
    }

    #[test]
    fn affine_plane_anchor_is_canonical() {
        let dir = Subspace::coordinate(2, &[0]);
        let p = AffinePlane::through(dir, &[5.0, 2.0]).unwrap();
        assert_eq!(p.anchor(), &[0.0, 2.0]);
        assert!((p.distance(&[-3.0, 3.5]) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn record_round_trip() {
        let v = sample_haar(3, 2, &mut rng(8)).unwrap();
        let back = Subspace::from_record(&v.to_record()).unwrap();
        assert!(metric(&v, &back).unwrap() < 1e-12);
    }

    proptest! {
        #[test]
        fn metric_is_symmetric_and_bounded(seed in 0u64..10_000, d in 2usize..6) {
            let mut r = rng(seed);
            let n = r.gen_range(1..d);
            let a = sample_haar(d, n, &mut r).unwrap();
            let b = sample_haar(d, n, &mut r).unwrap();
            let ab = metric(&a, &b).unwrap();
            let ba = metric(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
            prop_assert!(metric(&a, &a).unwrap() < 1e-12);
        }

        #[test]
        fn haar_output_is_orthonormal(seed in 0u64..10_000, d in 1usize..8) {
            let mut r = rng(seed);
            let n = r.gen_range(0..=d);
            let v = sample_haar(d, n, &mut r).unwrap();
            let gram = v.basis().transpose() * v.basis();
            prop_assert!((gram - DMatrix::identity(n, n)).amax() < 1e-10);
        }

        #[test]
        fn annihilation_residual_and_distance(seed in 0u64..10_000, d in 2usize..5) {
            let mut r = rng(seed);
            let n = r.gen_range(1..d);
            let v = sample_haar(d, n, &mut r).unwrap();
            let delta = r.gen_range(0.01..1.0);
            let comp = v.complement();
            let out_coords: Vec<f64> = (0..d - n).map(|_| r.gen_range(-1.0..1.0)).collect();
            let in_coords: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
            let outside = comp.embed(&out_coords);
            let inside = v.embed(&in_coords);
            let scale = r.gen::<f64>() * delta / 4.0 * norm(&outside) / norm(&inside).max(1e-300);
            let z: Vec<f64> = outside.iter().zip(&inside).map(|(a, b)| a + scale * b).collect();
            let ratio = norm(&v.project(&z).unwrap()) / norm(&z);
            let out = annihilating_plane(&z, &v, delta).unwrap();
            prop_assert!(norm(&out.project(&z).unwrap()) <= 1e-10 * norm(&z));
            prop_assert!(metric(&v, &out).unwrap() <= 4.0 * ratio + 1e-12);
        }
    }
}
