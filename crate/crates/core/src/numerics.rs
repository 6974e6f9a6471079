//! Dense numerical kernel: vector helpers, a small square-matrix type,
//! Cholesky factorization, finite differences, a BFGS maximizer and the
//! fixed-point solver used by the implicit leapfrog.
//!
//! Everything here is a pure function of its inputs.

use std::ops::{Index, IndexMut};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("non-finite evaluation along axis {axis}")]
    NonFinite { axis: usize },
    #[error("matrix is not symmetric positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix could not be regularized to SPD (last jitter {jitter:e})")]
    RegularizationFailed { jitter: f64 },
    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    FixedPointDiverged { iterations: usize, residual: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

// ---------------------------------------------------------------------------
// Vector helpers
// ---------------------------------------------------------------------------

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `y += a * x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Numerically stable `log(sum(exp(v)))`. Returns `-inf` for an empty slice
/// or when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}

// ---------------------------------------------------------------------------
// Square matrix
// ---------------------------------------------------------------------------

/// Dense square matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    n: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    /// Builds a matrix from row-major data; panics if `data.len() != n*n`.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "row-major data has wrong length");
        Self { n, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            assert_eq!(r.len(), n, "matrix must be square");
            data.extend_from_slice(r);
        }
        Self { n, data }
    }

    /// `a * b^T` for vectors.
    pub fn outer(a: &[f64], b: &[f64]) -> Self {
        assert_eq!(a.len(), b.len());
        let n = a.len();
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = a[i] * b[j];
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `(M + M^T) / 2`
    pub fn symmetrized(&self) -> Self {
        let mut s = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                s[(i, j)] = 0.5 * (self[(i, j)] + self[(j, i)]);
            }
        }
        s
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        for i in 0..self.n {
            for j in 0..i {
                let a = self[(i, j)];
                let b = self[(j, i)];
                if (a - b).abs() > tol * (1.0 + a.abs().max(b.abs())) {
                    return false;
                }
            }
        }
        true
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        (0..self.n).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Mat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Mat {
        Mat {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn plus(&self, other: &Mat) -> Mat {
        assert_eq!(self.n, other.n);
        Mat {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn minus(&self, other: &Mat) -> Mat {
        self.plus(&other.scaled(-1.0))
    }

    pub fn add_diagonal(&mut self, value: f64) {
        for i in 0..self.n {
            self[(i, i)] += value;
        }
    }

    /// `v^T M v`
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        dot(v, &self.mul_vec(v))
    }

    pub fn all_finite(&self) -> bool {
        all_finite(&self.data)
    }

    /// Largest absolute entry difference, used in tests and tolerances.
    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn frobenius(&self) -> f64 {
        norm(&self.data)
    }

    /// Determinant by LU decomposition with partial pivoting.
    pub fn determinant(&self) -> f64 {
        let n = self.n;
        let mut a = self.data.clone();
        let mut det = 1.0;
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
                .unwrap();
            if a[pivot * n + col] == 0.0 {
                return 0.0;
            }
            if pivot != col {
                for j in 0..n {
                    a.swap(pivot * n + j, col * n + j);
                }
                det = -det;
            }
            let p = a[col * n + col];
            det *= p;
            for i in col + 1..n {
                let f = a[i * n + col] / p;
                if f != 0.0 {
                    for j in col..n {
                        a[i * n + j] -= f * a[col * n + j];
                    }
                }
            }
        }
        det
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

// ---------------------------------------------------------------------------
// Cholesky
// ---------------------------------------------------------------------------

/// Lower-triangular Cholesky factor `L` with `L L^T = A`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cholesky {
    l: Mat,
}

/// Factorizes a symmetric positive-definite matrix. Only the lower triangle
/// of `m` is read.
pub fn cholesky_spd(m: &Mat) -> Result<Mat, NumericsError> {
    Cholesky::new(m).map(|c| c.l)
}

impl Cholesky {
    pub fn new(m: &Mat) -> Result<Self, NumericsError> {
        let n = m.dim();
        let mut l = Mat::zeros(n);
        for j in 0..n {
            let mut d = m[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(NumericsError::NotPositiveDefinite { pivot: j, value: d });
            }
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Self { l })
    }

    /// Factorizes `m`, adding `jitter * I` when needed. Jitter starts at
    /// `1e-10 * trace / D` and grows tenfold up to `1e-4 * trace / D`.
    /// Returns the factor together with the jitter that was applied.
    pub fn with_jitter(m: &Mat) -> Result<(Self, f64), NumericsError> {
        if let Ok(c) = Self::new(m) {
            return Ok((c, 0.0));
        }
        let n = m.dim().max(1) as f64;
        let base = m.trace() / n;
        if !(base > 0.0) || !base.is_finite() {
            return Err(NumericsError::RegularizationFailed { jitter: 0.0 });
        }
        let mut jitter = 1e-10 * base;
        while jitter <= 1e-4 * base * (1.0 + 1e-12) {
            let mut reg = m.clone();
            reg.add_diagonal(jitter);
            if let Ok(c) = Self::new(&reg) {
                return Ok((c, jitter));
            }
            jitter *= 10.0;
        }
        Err(NumericsError::RegularizationFailed { jitter: jitter / 10.0 })
    }

    pub fn factor(&self) -> &Mat {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.dim()
    }

    /// `L z`
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..=i).map(|k| self.l[(i, k)] * z[k]).sum())
            .collect()
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    /// Solves `L^T x = y`.
    pub fn solve_upper(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> Mat {
        let n = self.dim();
        let mut inv = Mat::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv.symmetrized()
    }

    /// Reassembles `L L^T`.
    pub fn reconstruct(&self) -> Mat {
        self.l.matmul(&self.l.transpose())
    }
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Default step for finite differences: `1e-5 * (1 + |x|_inf)`.
pub fn default_fd_step(x: &[f64]) -> f64 {
    1e-5 * (1.0 + norm_inf(x))
}

/// Central-difference gradient of a scalar field.
pub fn finite_diff_gradient<F>(field: F, x: &[f64], h: f64) -> Result<Vec<f64>, NumericsError>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = field(&probe);
        probe[i] = x[i] - h;
        let fm = field(&probe);
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(NumericsError::NonFinite { axis: i });
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Symmetrized matrix of second central differences of a scalar field.
pub fn finite_diff_hessian<F>(field: F, x: &[f64], h: f64) -> Result<Mat, NumericsError>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let n = x.len();
    let mut hess = Mat::zeros(n);
    let mut p = x.to_vec();
    let f0 = field(x);
    if !f0.is_finite() {
        return Err(NumericsError::NonFinite { axis: 0 });
    }
    let eval = |p: &[f64], axis: usize| -> Result<f64, NumericsError> {
        let v = field(p);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(NumericsError::NonFinite { axis })
        }
    };
    for i in 0..n {
        p[i] = x[i] + h;
        let fp = eval(&p, i)?;
        p[i] = x[i] - h;
        let fm = eval(&p, i)?;
        p[i] = x[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            p[i] = x[i] + h;
            p[j] = x[j] + h;
            let fpp = eval(&p, i)?;
            p[j] = x[j] - h;
            let fpm = eval(&p, i)?;
            p[i] = x[i] - h;
            let fmm = eval(&p, i)?;
            p[j] = x[j] + h;
            let fmp = eval(&p, i)?;
            p[i] = x[i];
            p[j] = x[j];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess.symmetrized())
}

/// Hessian estimated by central differences of an analytic gradient.
pub fn finite_diff_jacobian_of_gradient<G>(grad: G, x: &[f64], h: f64) -> Result<Mat, NumericsError>
where
    G: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = x.len();
    let mut jac = Mat::zeros(n);
    let mut p = x.to_vec();
    for j in 0..n {
        p[j] = x[j] + h;
        let gp = grad(&p).filter(|g| all_finite(g));
        p[j] = x[j] - h;
        let gm = grad(&p).filter(|g| all_finite(g));
        p[j] = x[j];
        let (gp, gm) = match (gp, gm) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(NumericsError::NonFinite { axis: j }),
        };
        for i in 0..n {
            jac[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    Ok(jac.symmetrized())
}

// ---------------------------------------------------------------------------
// BFGS
// ---------------------------------------------------------------------------

/// A differentiable scalar objective. Implementations may return a
/// non-finite value outside their support; the optimizer backtracks.
pub trait Objective {
    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>);
}

impl<F> Objective for F
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BfgsResult {
    pub maximizer: Vec<f64>,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// Objective/gradient evaluations spent, including the start point.
    pub evaluations: usize,
    /// Why the run stopped short of convergence, if it did.
    pub diagnostic: Option<String>,
}

const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK_SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

/// Maximizes `objective` starting at `start`.
///
/// Quasi-Newton ascent on the inverse-Hessian approximation, with
/// backtracking Armijo line search followed by one secant refinement of the
/// step length along the search direction (exact on quadratics).
pub fn bfgs_maximize<O: Objective + ?Sized>(
    objective: &O,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> BfgsResult {
    assert!(tol > 0.0, "BFGS tolerance must be positive");
    let n = start.len();
    // Work internally on F = -f (minimization).
    let eval = |x: &[f64]| {
        let (v, g) = objective.value_and_gradient(x);
        (-v, g.into_iter().map(|gi| -gi).collect::<Vec<_>>())
    };
    let mut evaluations = 1;
    let mut x = start.to_vec();
    let (mut fx, mut gx) = eval(&x);
    let start_value = -fx;
    if !fx.is_finite() || !all_finite(&gx) {
        return BfgsResult {
            maximizer: x,
            objective_value: -fx,
            iterations: 0,
            converged: false,
            gradient_norm: f64::NAN,
            evaluations,
            diagnostic: Some("objective or gradient not finite at start".into()),
        };
    }
    let mut h_inv = Mat::identity(n);
    let mut first_update = true;
    let mut iterations = 0;
    let mut diagnostic = None;

    while iterations < max_iter {
        let gnorm = norm(&gx);
        if gnorm <= tol {
            break;
        }
        let mut d: Vec<f64> = h_inv.mul_vec(&gx).into_iter().map(|v| -v).collect();
        let mut slope = dot(&gx, &d);
        if !(slope < 0.0) {
            h_inv = Mat::identity(n);
            first_update = true;
            d = gx.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        // Rounding slack so that progress is not blocked once f stops
        // changing at machine precision.
        let slack = 4.0 * f64::EPSILON * fx.abs();
        let mut alpha = 1.0;
        if first_update {
            // Unscaled first step: cap its length.
            alpha = (1.0 / norm(&d)).min(1.0);
        }
        let mut accepted: Option<(Vec<f64>, f64, Vec<f64>)> = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            let (ft, gt) = eval(&trial);
            evaluations += 1;
            if ft.is_finite() && all_finite(&gt) && ft <= fx + ARMIJO_C1 * alpha * slope + slack {
                accepted = Some((trial, ft, gt));
                break;
            }
            alpha *= BACKTRACK_SHRINK;
        }
        let Some((mut x_new, mut f_new, mut g_new)) = accepted else {
            diagnostic = Some("line search found no finite ascent step".into());
            break;
        };
        // Secant refinement on the directional derivative.
        let slope_new = dot(&g_new, &d);
        if slope_new > slope {
            let alpha_s = alpha * slope / (slope - slope_new);
            if alpha_s.is_finite() && alpha_s > 0.0 && (alpha_s - alpha).abs() > 1e-3 * alpha {
                let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha_s * di).collect();
                let (ft, gt) = eval(&trial);
                evaluations += 1;
                let better = ft < f_new || (ft <= f_new + slack && norm(&gt) < norm(&g_new));
                if ft.is_finite() && all_finite(&gt) && better {
                    x_new = trial;
                    f_new = ft;
                    g_new = gt;
                }
            }
        }
        let s = sub(&x_new, &x);
        let y = sub(&g_new, &gx);
        let sy = dot(&s, &y);
        iterations += 1;
        x = x_new;
        fx = f_new;
        gx = g_new;
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if first_update {
                let yy = dot(&y, &y);
                h_inv = Mat::identity(n).scaled(sy / yy);
                first_update = false;
            }
            bfgs_update(&mut h_inv, &s, &y, sy);
        }
        if norm(&s) <= f64::EPSILON * (1.0 + norm_inf(&x)) && norm(&gx) > tol {
            diagnostic = Some("step length underflow".into());
            break;
        }
    }
    let gradient_norm = norm(&gx);
    let converged = gradient_norm <= tol;
    if !converged && diagnostic.is_none() {
        diagnostic = Some(format!("maximum iterations ({max_iter}) reached"));
    }
    let mut value = -fx;
    if value < start_value {
        // Only reachable through rounding slack; never report a worse point.
        x = start.to_vec();
        value = start_value;
    }
    BfgsResult {
        maximizer: x,
        objective_value: value,
        iterations,
        converged,
        gradient_norm,
        evaluations,
        diagnostic: if converged { None } else { diagnostic },
    }
}

/// Inverse-Hessian BFGS update `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`.
fn bfgs_update(h: &mut Mat, s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = h.mul_vec(y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Fixed-point iteration
// ---------------------------------------------------------------------------

/// Result of a converged fixed-point solve.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedPoint {
    pub point: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Plain (undamped) fixed-point iteration `z <- map(z)`.
///
/// Returns the first iterate `z` with `|map(z) - z| <= tol`; `iterations`
/// counts applications of `map` beyond the residual check at `start`.
pub fn fixed_point_solve<M>(map: M, start: &[f64], tol: f64, max_iter: usize) -> Result<FixedPoint, NumericsError>
where
    M: Fn(&[f64]) -> Vec<f64>,
{
    assert!(tol > 0.0, "fixed-point tolerance must be positive");
    let mut z = start.to_vec();
    let mut next = map(&z);
    let mut residual = distance(&next, &z);
    let mut iterations = 0;
    while !(residual <= tol) {
        if iterations >= max_iter || !residual.is_finite() {
            return Err(NumericsError::FixedPointDiverged { iterations, residual });
        }
        z = next;
        next = map(&z);
        residual = distance(&next, &z);
        iterations += 1;
    }
    Ok(FixedPoint {
        point: z,
        iterations,
        residual,
    })
}

// ---------------------------------------------------------------------------
// Symmetric eigenvalues
// ---------------------------------------------------------------------------

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(m: &Mat) -> Vec<f64> {
    let n = m.dim();
    let mut a = m.symmetrized();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off <= 1e-30 * a.frobenius().powi(2) || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev = a.diag();
    ev.sort_by(f64::total_cmp);
    ev
}
