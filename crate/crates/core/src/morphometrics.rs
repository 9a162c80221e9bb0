//! Landmark shape analysis: centroid size, Procrustes superimposition,
//! generalised Procrustes analysis, shape PCA, inter-landmark distances and
//! thin-plate splines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};
use crate::scalar::Scalar;

pub const MM_PER_INCH: f64 = 25.4;
pub const DEFAULT_LANDMARK_COUNT: usize = 18;
pub const GPA_TOLERANCE: f64 = 1e-10;
pub const GPA_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Error)]
pub enum MorphometricsError {
    #[error("shape '{id}' is degenerate (centroid size {size:e})")]
    DegenerateShape { id: String, size: f64 },
    #[error("landmark count mismatch: expected {expected}, got {got}")]
    LandmarkCountMismatch { expected: usize, got: usize },
    #[error("need at least {needed} shapes, got {got}")]
    TooFewShapes { needed: usize, got: usize },
    #[error("need at least {needed} landmarks, got {got}")]
    TooFewLandmarks { needed: usize, got: usize },
    #[error("GPA did not converge after {iterations} iterations (delta {delta:e})")]
    NonConvergence { iterations: usize, delta: f64 },
    #[error("thin-plate spline system is singular: {reason}")]
    SingularSystem { reason: String },
    #[error("landmark file line {line}: {reason}")]
    LandmarkFile { line: usize, reason: String },
}

type Point<T> = [T; 2];

/// An ordered configuration of 2D landmarks in millimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet<T> {
    pub id: String,
    pub points: Vec<Point<T>>,
}

impl<T: Scalar> LandmarkSet<T> {
    pub fn new(id: impl Into<String>, points: Vec<Point<T>>) -> Self {
        Self { id: id.into(), points }
    }

    /// Pixel coordinates to millimetres.
    pub fn from_pixels(id: impl Into<String>, px: &[Point<T>], ppi: T) -> Self {
        let k = T::lit(MM_PER_INCH) / ppi;
        Self::new(id, px.iter().map(|p| [p[0] * k, p[1] * k]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point<T> {
        let n = T::from_usize_lossy(self.points.len().max(1));
        let (sx, sy) = self.points.iter().fold((T::zero(), T::zero()), |(a, b), p| (a + p[0], b + p[1]));
        [sx / n, sy / n]
    }

    pub fn centered(&self) -> Self {
        let c = self.centroid();
        self.map(|p| [p[0] - c[0], p[1] - c[1]])
    }

    pub fn scaled(&self, s: T) -> Self {
        self.map(|p| [p[0] * s, p[1] * s])
    }

    pub fn translated(&self, t: Point<T>) -> Self {
        self.map(|p| [p[0] + t[0], p[1] + t[1]])
    }

    /// Counter-clockwise rotation about the origin.
    pub fn rotated(&self, theta: T) -> Self {
        let (s, c) = theta.sin_cos();
        self.map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]])
    }

    pub fn map(&self, f: impl Fn(Point<T>) -> Point<T>) -> Self {
        Self::new(self.id.clone(), self.points.iter().map(|&p| f(p)).collect())
    }

    /// `[x0, y0, x1, y1, ...]`.
    pub fn flatten(&self) -> Vec<T> {
        self.points.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    pub fn from_flat(id: impl Into<String>, flat: &[T]) -> Self {
        Self::new(id, flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }

    /// Centered and scaled to unit centroid size.
    pub fn normalized(&self) -> Result<Self, MorphometricsError> {
        let size = centroid_size(self);
        check_size(&self.id, size, self)?;
        Ok(self.centered().scaled(T::one() / size))
    }
}

fn check_size<T: Scalar>(id: &str, size: T, lms: &LandmarkSet<T>) -> Result<(), MorphometricsError> {
    let extent = lms.points.iter().fold(T::zero(), |m, p| m.max(p[0].abs()).max(p[1].abs()));
    if !(size > T::epsilon() * extent.max(T::min_positive_value())) || !size.is_finite() {
        return Err(MorphometricsError::DegenerateShape { id: id.to_string(), size: size.to_f64_lossy() });
    }
    Ok(())
}

fn check_same_k<T>(a: &LandmarkSet<T>, b: &LandmarkSet<T>) -> Result<(), MorphometricsError> {
    if a.points.len() != b.points.len() {
        return Err(MorphometricsError::LandmarkCountMismatch { expected: a.points.len(), got: b.points.len() });
    }
    Ok(())
}

/// Square root of the summed squared distances to the centroid.
pub fn centroid_size<T: Scalar>(lms: &LandmarkSet<T>) -> T {
    let c = lms.centroid();
    lms.points
        .iter()
        .map(|p| {
            let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
            dx * dx + dy * dy
        })
        .sum::<T>()
        .sqrt()
}

/// Similarity transform `p -> scale * R(rotation) * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcrustesFit<T> {
    /// Counter-clockwise angle in radians.
    pub rotation: T,
    pub scale: T,
    pub translation: Point<T>,
    /// Full Procrustes distance between the unit-size configurations.
    pub distance: T,
}

impl<T: Scalar> ProcrustesFit<T> {
    pub fn apply(&self, lms: &LandmarkSet<T>) -> LandmarkSet<T> {
        lms.rotated(self.rotation).scaled(self.scale).translated(self.translation)
    }
}

/// Angle that best rotates centered `b` onto centered `a`, reflections excluded.
fn optimal_rotation<T: Scalar>(a: &LandmarkSet<T>, b: &LandmarkSet<T>) -> T {
    let (mut num, mut den) = (T::zero(), T::zero());
    for (p, q) in a.points.iter().zip(&b.points) {
        num += q[0] * p[1] - q[1] * p[0];
        den += q[0] * p[0] + q[1] * p[1];
    }
    num.atan2(den)
}

fn sum_sq_diff<T: Scalar>(a: &LandmarkSet<T>, b: &LandmarkSet<T>) -> T {
    a.points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| {
            let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
            dx * dx + dy * dy
        })
        .sum()
}

/// Similarity transform of `b` minimising the squared distance to `a`.
///
/// In 2D the rotation that the SVD of the cross-covariance yields with
/// determinant +1 has the closed form used here.
pub fn procrustes_align<T: Scalar>(a: &LandmarkSet<T>, b: &LandmarkSet<T>) -> Result<ProcrustesFit<T>, MorphometricsError> {
    check_same_k(a, b)?;
    let (sa, sb) = (centroid_size(a), centroid_size(b));
    check_size(&a.id, sa, a)?;
    check_size(&b.id, sb, b)?;
    let (ca, cb) = (a.centroid(), b.centroid());
    let (ac, bc) = (a.centered(), b.centered());
    let theta = optimal_rotation(&ac, &bc);
    let rb = bc.rotated(theta);
    let cross: T = rb.points.iter().zip(&ac.points).map(|(p, q)| p[0] * q[0] + p[1] * q[1]).sum();
    let scale = cross / (sb * sb);
    let (s, c) = theta.sin_cos();
    let rcb = [c * cb[0] - s * cb[1], s * cb[0] + c * cb[1]];
    let translation = [ca[0] - scale * rcb[0], ca[1] - scale * rcb[1]];
    let distance = sum_sq_diff(&ac.scaled(T::one() / sa), &rb.scaled(T::one() / sb)).sqrt();
    Ok(ProcrustesFit { rotation: theta, scale, translation, distance })
}

/// Shapes superimposed by generalised Procrustes analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignedEnsemble<T> {
    /// Centered, unit centroid size, rotated onto the mean.
    pub shapes: Vec<LandmarkSet<T>>,
    /// Arithmetic mean of the aligned shapes.
    pub mean_shape: LandmarkSet<T>,
    /// `N x 2K` deviations of each aligned shape from the mean.
    pub residuals: Matrix<T>,
    /// Change in the mean on the final iteration.
    pub convergence_delta: T,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> AlignedEnsemble<T> {
    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn landmark_count(&self) -> usize {
        self.mean_shape.len()
    }

    pub fn check_converged(&self) -> Result<(), MorphometricsError> {
        if self.converged {
            Ok(())
        } else {
            Err(MorphometricsError::NonConvergence {
                iterations: self.iterations,
                delta: self.convergence_delta.to_f64_lossy(),
            })
        }
    }

    /// Superimpose a new shape onto this ensemble's mean without updating it.
    pub fn align_new(&self, shape: &LandmarkSet<T>) -> Result<LandmarkSet<T>, MorphometricsError> {
        check_same_k(&self.mean_shape, shape)?;
        let s = shape.normalized()?;
        Ok(s.rotated(optimal_rotation(&self.mean_shape, &s)))
    }

    /// Aligned coordinates as an `N x 2K` matrix.
    pub fn coordinate_matrix(&self) -> Matrix<T> {
        Matrix::from_rows(&self.shapes.iter().map(LandmarkSet::flatten).collect::<Vec<_>>())
    }
}

/// Rotate every shape (and the mean) so that the mean's first landmark not
/// at the origin lies on the positive y axis.
fn canonical_angle<T: Scalar>(mean: &LandmarkSet<T>) -> T {
    let tiny = T::lit(1e-12);
    let p = mean
        .points
        .iter()
        .find(|p| (p[0] * p[0] + p[1] * p[1]).sqrt() > tiny)
        .copied()
        .unwrap_or([T::zero(), T::one()]);
    T::FRAC_PI_2() - p[1].atan2(p[0])
}

fn mean_of<T: Scalar>(shapes: &[LandmarkSet<T>]) -> LandmarkSet<T> {
    let k = shapes[0].len();
    let n = T::from_usize_lossy(shapes.len());
    let mut pts = vec![[T::zero(), T::zero()]; k];
    for s in shapes {
        for (m, p) in pts.iter_mut().zip(&s.points) {
            m[0] += p[0];
            m[1] += p[1];
        }
    }
    for m in &mut pts {
        m[0] /= n;
        m[1] /= n;
    }
    LandmarkSet::new("mean", pts)
}

/// Generalised Procrustes analysis with full (unit centroid size) scaling.
///
/// Iterates until the mean changes by less than [`GPA_TOLERANCE`] or
/// [`GPA_MAX_ITERATIONS`] passes; non-convergence is flagged on the result,
/// see [`AlignedEnsemble::check_converged`].
pub fn gpa<T: Scalar>(shapes: &[LandmarkSet<T>]) -> Result<AlignedEnsemble<T>, MorphometricsError> {
    gpa_with(shapes, T::lit(GPA_TOLERANCE), GPA_MAX_ITERATIONS)
}

pub fn gpa_with<T: Scalar>(
    shapes: &[LandmarkSet<T>],
    tolerance: T,
    max_iterations: usize,
) -> Result<AlignedEnsemble<T>, MorphometricsError> {
    if shapes.len() < 2 {
        return Err(MorphometricsError::TooFewShapes { needed: 2, got: shapes.len() });
    }
    let k = shapes[0].len();
    if k < 3 {
        return Err(MorphometricsError::TooFewLandmarks { needed: 3, got: k });
    }
    let mut work = Vec::with_capacity(shapes.len());
    for s in shapes {
        check_same_k(&shapes[0], s)?;
        work.push(s.normalized()?);
    }

    let mut mean = work[0].clone();
    let mut delta = T::infinity();
    let mut iterations = 0;
    while iterations < max_iterations {
        iterations += 1;
        for s in work.iter_mut() {
            *s = s.rotated(optimal_rotation(&mean, s));
        }
        let mut next = mean_of(&work).normalized()?;
        next = next.rotated(optimal_rotation(&mean, &next));
        delta = sum_sq_diff(&next, &mean).sqrt();
        mean = next;
        if delta < tolerance {
            break;
        }
    }
    let converged = delta < tolerance;
    if !converged {
        log::warn!("GPA stopped after {iterations} iterations with delta {delta}");
    }

    for s in work.iter_mut() {
        *s = s.rotated(optimal_rotation(&mean, s));
    }
    let theta = canonical_angle(&mean_of(&work));
    let aligned: Vec<LandmarkSet<T>> = work
        .iter()
        .zip(shapes)
        .map(|(s, orig)| {
            let mut r = s.rotated(theta);
            r.id = orig.id.clone();
            r
        })
        .collect();
    let mean_shape = mean_of(&aligned);
    let m = mean_shape.flatten();
    let rows: Vec<Vec<T>> =
        aligned.iter().map(|s| s.flatten().iter().zip(&m).map(|(&a, &b)| a - b).collect()).collect();
    Ok(AlignedEnsemble {
        shapes: aligned,
        mean_shape,
        residuals: Matrix::from_rows(&rows),
        convergence_delta: delta,
        iterations,
        converged,
    })
}

/// Principal components of Procrustes residuals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapePca<T> {
    /// Unit-norm components over the `2K` flattened coordinates.
    pub components: Vec<Vec<T>>,
    pub variances: Vec<T>,
    /// Fractions of total variance; sum to 1 over the retained modes.
    pub explained: Vec<T>,
}

impl<T: Scalar> ShapePca<T> {
    pub fn cumulative(&self, n: usize) -> T {
        self.explained.iter().take(n).copied().sum()
    }

    /// Scores of each residual row on the components.
    pub fn scores(&self, residuals: &Matrix<T>) -> Matrix<T> {
        let rows: Vec<Vec<T>> = (0..residuals.rows())
            .map(|i| self.components.iter().map(|c| linalg::dot(residuals.row(i), c)).collect())
            .collect();
        Matrix::from_rows(&rows)
    }
}

/// Eigen-decomposition of the residual covariance. Only modes with
/// non-negligible variance are kept; each component's largest-magnitude
/// entry is positive.
pub fn shape_pca<T: Scalar>(ensemble: &AlignedEnsemble<T>) -> Result<ShapePca<T>, MorphometricsError> {
    if ensemble.len() < 2 {
        return Err(MorphometricsError::TooFewShapes { needed: 2, got: ensemble.len() });
    }
    let cov = linalg::covariance(&ensemble.residuals);
    let eig = linalg::symmetric_eigen(&cov).map_err(|e| MorphometricsError::SingularSystem { reason: e.to_string() })?;
    let top = eig.values.first().copied().unwrap_or(T::zero()).max(T::zero());
    let cutoff = top * T::lit(1e-12);
    let mut components = Vec::new();
    let mut variances = Vec::new();
    for (v, vec) in eig.values.iter().zip(eig.vectors) {
        if !(*v > cutoff) || top == T::zero() {
            continue;
        }
        let big = vec.iter().copied().fold(T::zero(), |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if big < T::zero() { -T::one() } else { T::one() };
        components.push(vec.iter().map(|&x| x * sign).collect());
        variances.push(*v);
    }
    let total: T = variances.iter().copied().sum();
    let explained = variances.iter().map(|&v| v / total).collect();
    Ok(ShapePca { components, variances, explained })
}

/// All `K(K-1)/2` Euclidean distances, ordered `(0,1), (0,2), ..., (K-2,K-1)`.
pub fn interlandmark_distances<T: Scalar>(lms: &LandmarkSet<T>) -> Vec<T> {
    let p = &lms.points;
    let mut out = Vec::with_capacity(p.len() * p.len().saturating_sub(1) / 2);
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            out.push((p[i][0] - p[j][0]).hypot(p[i][1] - p[j][1]));
        }
    }
    out
}

pub fn distance_names(k: usize) -> Vec<String> {
    let mut out = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            out.push(format!("d{}_{}", i + 1, j + 1));
        }
    }
    out
}

pub fn coordinate_names(k: usize) -> Vec<String> {
    (1..=k).flat_map(|i| [format!("x{i}"), format!("y{i}")]).collect()
}

// ---------------------------------------------------------------------------
// Thin-plate splines

/// `U(r) = r^2 ln r^2`, with `U(0) = 0`.
#[inline]
pub fn tps_kernel<T: Scalar>(r2: T) -> T {
    if r2 > T::zero() {
        r2 * r2.ln()
    } else {
        T::zero()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TpsWarp<T> {
    pub source: LandmarkSet<T>,
    pub target: LandmarkSet<T>,
    /// Per output axis: `[constant, coefficient of x, coefficient of y]`.
    pub affine: [[T; 3]; 2],
    /// `K x 2` non-affine coefficients.
    pub weights: Vec<Point<T>>,
    pub bending_energy: T,
}

fn kernel_matrix<T: Scalar>(pts: &[Point<T>]) -> Matrix<T> {
    let k = pts.len();
    let mut m = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let (dx, dy) = (pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]);
            m[(i, j)] = tps_kernel(dx * dx + dy * dy);
        }
    }
    m
}

pub fn tps_fit<T: Scalar>(source: &LandmarkSet<T>, target: &LandmarkSet<T>) -> Result<TpsWarp<T>, MorphometricsError> {
    check_same_k(source, target)?;
    let k = source.len();
    if k < 3 {
        return Err(MorphometricsError::TooFewLandmarks { needed: 3, got: k });
    }
    let pts = &source.points;
    for i in 0..k {
        for j in i + 1..k {
            if (pts[i][0] - pts[j][0]).hypot(pts[i][1] - pts[j][1]) <= T::lit(1e-9) {
                return Err(MorphometricsError::SingularSystem {
                    reason: format!("source landmarks {i} and {j} coincide"),
                });
            }
        }
    }
    // collinear sources leave the affine part undetermined
    let c = source.centered();
    let (mut sxx, mut sxy, mut syy) = (T::zero(), T::zero(), T::zero());
    for p in &c.points {
        sxx += p[0] * p[0];
        sxy += p[0] * p[1];
        syy += p[1] * p[1];
    }
    let tr = sxx + syy;
    if sxx * syy - sxy * sxy <= T::lit(1e-12) * tr * tr {
        return Err(MorphometricsError::SingularSystem { reason: "source landmarks are collinear".into() });
    }

    let n = k + 3;
    let kern = kernel_matrix(pts);
    let mut l = Matrix::zeros(n, n);
    for i in 0..k {
        for j in 0..k {
            l[(i, j)] = kern[(i, j)];
        }
        let row = [T::one(), pts[i][0], pts[i][1]];
        for (c, &v) in row.iter().enumerate() {
            l[(i, k + c)] = v;
            l[(k + c, i)] = v;
        }
    }
    let lu = linalg::Lu::factor(&l).map_err(|e: LinalgError| MorphometricsError::SingularSystem { reason: e.to_string() })?;
    let mut weights = vec![[T::zero(), T::zero()]; k];
    let mut affine = [[T::zero(); 3]; 2];
    for axis in 0..2 {
        let mut rhs = vec![T::zero(); n];
        for i in 0..k {
            rhs[i] = target.points[i][axis];
        }
        let sol = lu.solve(&rhs).map_err(|e| MorphometricsError::SingularSystem { reason: e.to_string() })?;
        for i in 0..k {
            weights[i][axis] = sol[i];
        }
        affine[axis] = [sol[k], sol[k + 1], sol[k + 2]];
    }
    let mut energy = T::zero();
    for axis in 0..2 {
        let w: Vec<T> = weights.iter().map(|p| p[axis]).collect();
        let kw = kern.matvec(&w).expect("square");
        energy += linalg::dot(&w, &kw);
    }
    Ok(TpsWarp {
        source: source.clone(),
        target: target.clone(),
        affine,
        weights,
        bending_energy: energy.max(T::zero()),
    })
}

impl<T: Scalar> TpsWarp<T> {
    pub fn apply_point(&self, p: Point<T>) -> Point<T> {
        let mut out = [T::zero(); 2];
        for (axis, o) in out.iter_mut().enumerate() {
            let a = self.affine[axis];
            *o = a[0] + a[1] * p[0] + a[2] * p[1];
        }
        for (s, w) in self.source.points.iter().zip(&self.weights) {
            let (dx, dy) = (p[0] - s[0], p[1] - s[1]);
            let u = tps_kernel(dx * dx + dy * dy);
            out[0] += w[0] * u;
            out[1] += w[1] * u;
        }
        out
    }
}

pub fn tps_apply<T: Scalar>(warp: &TpsWarp<T>, points: &[Point<T>]) -> Vec<Point<T>> {
    points.iter().map(|&p| warp.apply_point(p)).collect()
}

/// A regular `nx x ny` grid over the source landmarks' bounding box
/// (expanded by `margin` on every side) and its image under the warp.
pub fn deformation_grid<T: Scalar>(warp: &TpsWarp<T>, nx: usize, ny: usize, margin: T) -> Vec<(Point<T>, Point<T>)> {
    let pts = &warp.source.points;
    let (mut lo, mut hi) = ([T::infinity(); 2], [T::neg_infinity(); 2]);
    for p in pts {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let step = |a: usize, n: usize, i: usize| {
        let (l, h) = (lo[a] - margin, hi[a] + margin);
        if n <= 1 {
            (l + h) / T::lit(2.0)
        } else {
            l + (h - l) * T::from_usize_lossy(i) / T::from_usize_lossy(n - 1)
        }
    };
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let p = [step(0, nx, i), step(1, ny, j)];
            out.push((p, warp.apply_point(p)));
        }
    }
    out
}

pub fn write_grid_csv<T: Scalar>(rows: &[(Point<T>, Point<T>)], path: impl AsRef<Path>) -> crate::Result<()> {
    let path = path.as_ref();
    let mut s = String::from("x,y,x_warped,y_warped\n");
    for (p, q) in rows {
        let _ = writeln!(s, "{},{},{},{}", p[0], p[1], q[0], q[1]);
    }
    fs::write(path, s).map_err(|e| crate::Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Landmark files
//
// ```text
// # ppi=200
// id,index,x_px,y_px
// print01,0,812.5,120.0
// ```

pub fn parse_landmarks(text: &str) -> Result<(f64, Vec<LandmarkSet<f64>>), MorphometricsError> {
    let bad = |line: usize, reason: String| MorphometricsError::LandmarkFile { line, reason };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (n0, first) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let ppi_text = first
        .trim()
        .trim_start_matches('#')
        .trim()
        .strip_prefix("ppi")
        .map(|r| r.trim_start_matches(['=', ',', ':', ' ']).trim())
        .ok_or_else(|| bad(n0 + 1, format!("expected a 'ppi=<value>' header, found '{first}'")))?;
    let ppi: f64 = ppi_text.parse().map_err(|_| bad(n0 + 1, format!("bad ppi '{ppi_text}'")))?;
    if !(ppi > 0.0 && ppi.is_finite()) {
        return Err(bad(n0 + 1, format!("ppi must be positive, got {ppi}")));
    }
    let (n1, header) = lines.next().ok_or_else(|| bad(n0 + 2, "missing column header".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["id", "index", "x_px", "y_px"] {
        return Err(bad(n1 + 1, format!("expected id,index,x_px,y_px, found '{header}'")));
    }

    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, BTreeMap<usize, [f64; 2]>> = BTreeMap::new();
    for (n, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 || f[0].is_empty() {
            return Err(bad(n + 1, format!("expected 4 fields, found '{line}'")));
        }
        let idx: usize = f[1].parse().map_err(|_| bad(n + 1, format!("bad index '{}'", f[1])))?;
        let x: f64 = f[2].parse().map_err(|_| bad(n + 1, format!("bad x '{}'", f[2])))?;
        let y: f64 = f[3].parse().map_err(|_| bad(n + 1, format!("bad y '{}'", f[3])))?;
        if !by_id.contains_key(f[0]) {
            order.push(f[0].to_string());
        }
        if by_id.entry(f[0].to_string()).or_default().insert(idx, [x, y]).is_some() {
            return Err(bad(n + 1, format!("duplicate landmark {idx} for '{}'", f[0])));
        }
    }
    let mut sets = Vec::with_capacity(order.len());
    for id in order {
        let pts = &by_id[&id];
        if pts.keys().copied().ne(0..pts.len()) {
            return Err(bad(0, format!("'{id}' landmark indices are not 0..{}", pts.len())));
        }
        let px: Vec<[f64; 2]> = pts.values().copied().collect();
        sets.push(LandmarkSet::from_pixels(id, &px, ppi));
    }
    if let Some(k) = sets.first().map(LandmarkSet::len) {
        if let Some(s) = sets.iter().find(|s| s.len() != k) {
            return Err(bad(0, format!("'{}' has {} landmarks, expected {k}", s.id, s.len())));
        }
    }
    Ok((ppi, sets))
}

/// Load a landmark file and convert to millimetres.
pub fn load_landmarks(path: impl AsRef<Path>) -> crate::Result<Vec<LandmarkSet<f64>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| crate::Error::io(path.display().to_string(), e))?;
    Ok(parse_landmarks(&text)?.1)
}

/// Write sets (in mm) back as pixel coordinates at `ppi`.
pub fn write_landmarks(sets: &[LandmarkSet<f64>], ppi: f64, path: impl AsRef<Path>) -> crate::Result<()> {
    let path = path.as_ref();
    let k = ppi / MM_PER_INCH;
    let mut s = format!("# ppi={ppi}\nid,index,x_px,y_px\n");
    for set in sets {
        for (i, p) in set.points.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{}", set.id, i, p[0] * k, p[1] * k);
        }
    }
    fs::write(path, s).map_err(|e| crate::Error::io(path.display().to_string(), e))
}
