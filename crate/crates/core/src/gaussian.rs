//! Gaussian beliefs, their divergences and the information geometry used by
//! the natural-gradient update.

use std::f64::consts::PI;

use nalgebra::{Cholesky, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::model::MeasurementLoss;
use crate::sigma::TransformParams;

/// Relative tolerance for the covariance symmetry invariant.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// A mean/covariance pair with an SPD covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    mean: Vector,
    cov: Matrix,
}

impl GaussianBelief {
    /// Validates dimensions, symmetry and positive definiteness.
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        linalg::check_dim("covariance rows", mean.len(), cov.nrows())?;
        linalg::check_dim("covariance columns", mean.len(), cov.ncols())?;
        linalg::check_finite_vec(&mean, "belief mean")?;
        if !linalg::is_symmetric(&cov, SYMMETRY_TOL) {
            return Err(Error::NotSymmetric("belief covariance"));
        }
        linalg::cholesky(&cov, "belief covariance")?;
        Ok(Self { mean, cov })
    }

    /// Like [`GaussianBelief::new`] but re-symmetrizes `cov` first. Used after
    /// covariance-producing arithmetic.
    pub fn from_symmetrized(mean: Vector, cov: Matrix) -> Result<Self> {
        linalg::check_dim("covariance rows", mean.len(), cov.nrows())?;
        linalg::check_dim("covariance columns", mean.len(), cov.ncols())?;
        Self::new(mean, linalg::symmetrize(&cov))
    }

    pub fn standard(n: usize) -> Self {
        Self {
            mean: Vector::zeros(n),
            cov: Matrix::identity(n, n),
        }
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(Vector::from_element(1, mean), Matrix::from_element(1, 1, var))
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn into_parts(self) -> (Vector, Matrix) {
        (self.mean, self.cov)
    }

    pub fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        linalg::cholesky(&self.cov, "belief covariance")
    }

    /// Inverse covariance (information matrix).
    pub fn precision(&self) -> Result<Matrix> {
        linalg::spd_inverse(&self.cov, "belief covariance")
    }

    /// `log N(x; μ, P)`.
    pub fn log_density(&self, x: &Vector) -> Result<f64> {
        linalg::check_dim("log_density point", self.dim(), x.len())?;
        let chol = self.cholesky()?;
        let diff = x - &self.mean;
        let z = chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .ok_or(Error::Singular("covariance factor"))?;
        let n = self.dim() as f64;
        Ok(-0.5 * z.norm_squared() - 0.5 * (n * (2.0 * PI).ln() + linalg::log_det(&chol)))
    }

    /// One draw `μ + L z` with `L` the lower Cholesky factor.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vector> {
        let chol = self.cholesky()?;
        let z = Vector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample(StandardNormal)));
        Ok(&self.mean + chol.l() * z)
    }
}

/// Closed-form `KL(q ‖ p)` between two Gaussians.
pub fn kl_divergence(q: &GaussianBelief, p: &GaussianBelief) -> Result<f64> {
    linalg::check_dim("kl_divergence", p.dim(), q.dim())?;
    let chol_p = p.cholesky()?;
    let chol_q = q.cholesky()?;
    let n = p.dim() as f64;
    let diff = q.mean() - p.mean();
    let maha = diff.dot(&chol_p.solve(&diff));
    let trace = chol_p.solve(q.cov()).trace();
    let log_ratio = linalg::log_det(&chol_q) - linalg::log_det(&chol_p);
    Ok((0.5 * (maha + trace - log_ratio - n)).max(0.0))
}

/// The update objective
/// `J = E_q[ℓ(x, y)] + KL(q ‖ prior)`, with the expectation taken by the
/// supplied quadrature rule on the candidate `q`.
pub fn update_objective(
    candidate: &GaussianBelief,
    prior: &GaussianBelief,
    loss: &dyn MeasurementLoss,
    y: &Vector,
    quad: &TransformParams,
) -> Result<f64> {
    linalg::check_dim("update_objective", prior.dim(), candidate.dim())?;
    let set = quad.points(candidate.mean(), candidate.cov())?;
    let expected_loss = set.expect(|x| loss.value(x, y))?;
    Ok(expected_loss + kl_divergence(candidate, prior)?)
}

/// Diagonal blocks of the inverse Fisher information of `N(x̂, P)` in the
/// `(x̂, vec(P⁻¹))` parameterization: `(P, 2 (P⁻¹ ⊗ P⁻¹))`.
pub fn inverse_fisher_blocks(belief: &GaussianBelief) -> Result<(Matrix, Matrix)> {
    let info = belief.precision()?;
    Ok((belief.cov().clone(), info.kronecker(&info) * 2.0))
}

/// Natural parameters of a one-dimensional Gaussian with sufficient
/// statistics `F(x) = (x, x²)`: `θ = (μ/σ², −1/(2σ²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaturalParams {
    pub theta: [f64; 2],
}

impl NaturalParams {
    pub fn new(theta: [f64; 2]) -> Result<Self> {
        if !(theta[1] < 0.0) || !theta[0].is_finite() {
            return Err(Error::InvalidParameter(format!(
                "second natural parameter must be negative, got {}",
                theta[1]
            )));
        }
        Ok(Self { theta })
    }

    pub fn from_moments(mean: f64, var: f64) -> Result<Self> {
        if !(var > 0.0) {
            return Err(Error::InvalidParameter(format!("variance must be positive, got {var}")));
        }
        Self::new([mean / var, -0.5 / var])
    }

    /// `(μ, σ²)`.
    pub fn moments(&self) -> (f64, f64) {
        let var = -0.5 / self.theta[1];
        (self.theta[0] * var, var)
    }

    pub fn dim(&self) -> usize {
        1
    }
}

/// Log-partition `ψ(θ) = −θ₁²/(4θ₂) − ½ log(−2θ₂) + ½ log(2π)`.
pub fn log_partition(params: &NaturalParams) -> Result<f64> {
    let [t1, t2] = params.theta;
    if !(t2 < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "log-partition diverges for non-negative θ₂ = {t2}"
        )));
    }
    Ok(-t1 * t1 / (4.0 * t2) - 0.5 * (-2.0 * t2).ln() + 0.5 * (2.0 * PI).ln())
}

/// Fisher information of the 1D Gaussian in natural coordinates, i.e. the
/// covariance of the sufficient statistics `(x, x²)`.
pub fn natural_fisher(params: &NaturalParams) -> [[f64; 2]; 2] {
    let (m, v) = params.moments();
    let cov_x_x2 = 2.0 * m * v;
    let var_x2 = 2.0 * v * v + 4.0 * m * m * v;
    [[v, cov_x_x2], [cov_x_x2, var_x2]]
}
