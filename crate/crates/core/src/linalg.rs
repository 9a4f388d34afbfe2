//! Dense matrix helpers, Riccati and Lyapunov fixed points, and seeded
//! multivariate Gaussian sampling.
//!
//! Matrices are `nalgebra` dynamic matrices. Everything here is sized for
//! desk-scale systems (state dimension around ten), so both equation solvers
//! use plain fixed-point iteration rather than Schur or doubling methods.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default convergence tolerance for the fixed-point solvers.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Iteration cap shared by the Riccati and Lyapunov solvers.
pub const MAX_ITERATIONS: usize = 1_000_000;

/// `(X + X^T) / 2`.
pub fn symmetrize(x: &Matrix) -> Matrix {
    (x + x.transpose()) * 0.5
}

pub fn all_finite(x: &Matrix) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(x: &Matrix) -> f64 {
    x.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Smallest eigenvalue of the symmetric part of `x`.
pub fn min_symmetric_eigenvalue(x: &Matrix) -> f64 {
    SymmetricEigen::new(symmetrize(x))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// True when `x` is symmetric and its smallest eigenvalue is at least
/// `-rel_tol * max(trace, 1)`.
pub fn is_symmetric_psd(x: &Matrix, rel_tol: f64) -> bool {
    if !x.is_square() {
        return false;
    }
    let scale = x.amax().max(1.0);
    if (x - x.transpose()).amax() > rel_tol * scale {
        return false;
    }
    min_symmetric_eigenvalue(x) >= -rel_tol * x.trace().abs().max(1.0)
}

fn check_square(name: &str, x: &Matrix, n: usize) -> Result<()> {
    if x.nrows() != n || x.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "{name} is {}x{}, expected {n}x{n}",
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(())
}

/// One application of the Riccati map
/// `X -> A X A^T - A X H^T (H X H^T + Sigma)^{-1} H X A^T + Q`.
pub fn riccati_map(a: &Matrix, h: &Matrix, sigma: &Matrix, q: &Matrix, x: &Matrix) -> Result<Matrix> {
    let innovation = symmetrize(&(h * x * h.transpose() + sigma));
    let chol = innovation.cholesky().ok_or(Error::SingularInnovation)?;
    let hxa = h * x * a.transpose();
    let correction = hxa.transpose() * chol.solve(&hxa);
    Ok(a * x * a.transpose() - correction + q)
}

/// Frobenius norm of `X - riccati_map(X)`.
pub fn dare_residual(a: &Matrix, h: &Matrix, sigma: &Matrix, q: &Matrix, x: &Matrix) -> Result<f64> {
    Ok((x - riccati_map(a, h, sigma, q, x)?).norm())
}

/// Solves the discrete algebraic Riccati equation by iterating the Riccati
/// map from `X = Q` until successive iterates differ by less than `tol`
/// in Frobenius norm.
pub fn dare_solve(a: &Matrix, h: &Matrix, sigma: &Matrix, q: &Matrix, tol: f64) -> Result<Matrix> {
    let n = a.nrows();
    check_square("A", a, n)?;
    check_square("Q", q, n)?;
    if h.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "H has {} columns, expected {n}",
            h.ncols()
        )));
    }
    check_square("Sigma", sigma, h.nrows())?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }

    let mut x = q.clone();
    let mut delta = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let next = symmetrize(&riccati_map(a, h, sigma, q, &x)?);
        if !all_finite(&next) {
            break;
        }
        delta = (&next - &x).norm();
        x = next;
        if delta < tol {
            return Ok(x);
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        delta,
    })
}

/// Frobenius norm of `X - (Acl X Acl^T + W)`.
pub fn lyapunov_residual(acl: &Matrix, w: &Matrix, x: &Matrix) -> f64 {
    (x - (acl * x * acl.transpose() + w)).norm()
}

/// Solves `X = Acl X Acl^T + W` by summing the series
/// `sum_k Acl^k W (Acl^T)^k` until the increment drops below `tol`.
pub fn lyapunov_solve(acl: &Matrix, w: &Matrix, tol: f64) -> Result<Matrix> {
    let n = acl.nrows();
    check_square("Acl", acl, n)?;
    check_square("W", w, n)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }

    let mut x = w.clone();
    let mut delta = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let next = symmetrize(&(acl * &x * acl.transpose() + w));
        if !all_finite(&next) {
            break;
        }
        delta = (&next - &x).norm();
        x = next;
        if delta < tol {
            return Ok(x);
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        delta,
    })
}

/// Seeded sampler for `N(mean, covariance)`.
///
/// The covariance is factored once as `L L^T` (Cholesky, falling back to a
/// symmetric eigendecomposition for semidefinite input). Draws are
/// `mean + L xi` with `xi` standard normal from a ChaCha8 stream, so the
/// output is bitwise reproducible for a given seed and stream.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: Vector,
    factor: Matrix,
    seed: u64,
    rng: ChaCha8Rng,
}

impl GaussianSampler {
    pub fn new(mean: Vector, covariance: &Matrix, seed: u64) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {}x{}, mean has length {d}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let factor = factorize(covariance)?;
        Ok(Self {
            mean,
            factor,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// A copy of this sampler restarted on an independent ChaCha stream of
    /// the same seed. Used to give each Monte Carlo batch its own stream.
    pub fn with_stream(&self, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        Self {
            mean: self.mean.clone(),
            factor: self.factor.clone(),
            seed: self.seed,
            rng,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    /// Lower factor `L` with `L L^T` equal to the covariance.
    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    pub fn draw(&mut self) -> Vector {
        let d = self.dim();
        let xi = Vector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(&mut self.rng)));
        &self.mean + &self.factor * xi
    }

    pub fn sample(&mut self, count: usize) -> Vec<Vector> {
        (0..count).map(|_| self.draw()).collect()
    }
}

fn factorize(cov: &Matrix) -> Result<Matrix> {
    if !all_finite(cov) {
        return Err(Error::FactorizationFailure("covariance has non-finite entries".into()));
    }
    let scale = cov.amax().max(1.0);
    let asym = (cov - cov.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::FactorizationFailure(format!(
            "covariance is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let sym = symmetrize(cov);
    if let Some(chol) = sym.clone().cholesky() {
        return Ok(chol.l());
    }

    // Semidefinite: V diag(sqrt(max(ev, 0))).
    let eig = SymmetricEigen::new(sym);
    let floor = -1e-10 * cov.trace().abs();
    if let Some(bad) = eig.eigenvalues.iter().find(|&&ev| ev < floor) {
        return Err(Error::FactorizationFailure(format!(
            "covariance has negative eigenvalue {bad:e}"
        )));
    }
    let roots = eig.eigenvalues.map(|ev| ev.max(0.0).sqrt());
    Ok(&eig.eigenvectors * Matrix::from_diagonal(&roots))
}
