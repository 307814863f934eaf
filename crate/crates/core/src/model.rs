//! State-space models, the Gaussian measurement loss and its derivatives,
//! and the (possibly contaminated) noise samplers used by the benchmarks.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Beta, Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

pub type VectorFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;
pub type WrapFn = Arc<dyn Fn(&mut Vector) + Send + Sync>;

/// How the loss Hessian is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    /// `GᵀR⁻¹G − Σₖ ∇²gₖ (R⁻¹ r)ₖ`.
    Exact,
    /// `GᵀR⁻¹G`, always positive semidefinite.
    GaussNewton,
}

/// A measurement loss `ℓ(x, y) = −log p(y | x)` up to an `x`-independent
/// constant, with first and second derivatives.
pub trait MeasurementLoss: Send + Sync {
    fn value(&self, x: &Vector, y: &Vector) -> f64;
    fn gradient(&self, x: &Vector, y: &Vector) -> Vector;
    fn hessian(&self, x: &Vector, y: &Vector, mode: HessianMode) -> Matrix;

    /// Gradient and Hessian together; implementors may share work.
    fn gradient_and_hessian(&self, x: &Vector, y: &Vector, mode: HessianMode) -> (Vector, Matrix) {
        (self.gradient(x, y), self.hessian(x, y, mode))
    }
}

/// Nonlinear discrete-time model `x' = f(x) + ξ`, `y = g(x) + ζ`.
#[derive(Clone)]
pub struct StateSpaceModel {
    state_dim: usize,
    meas_dim: usize,
    transition: VectorFn,
    measurement: VectorFn,
    process_cov: Matrix,
    meas_cov: Matrix,
    transition_jacobian: Option<JacobianFn>,
    measurement_jacobian: Option<JacobianFn>,
    residual_wrap: Option<WrapFn>,
    linear: Option<(Matrix, Matrix)>,
}

impl fmt::Debug for StateSpaceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StateSpaceModel")
            .field("state_dim", &self.state_dim)
            .field("meas_dim", &self.meas_dim)
            .field("process_cov", &self.process_cov)
            .field("meas_cov", &self.meas_cov)
            .field("linear", &self.linear.is_some())
            .finish()
    }
}

impl StateSpaceModel {
    pub fn new(
        state_dim: usize,
        meas_dim: usize,
        transition: VectorFn,
        measurement: VectorFn,
        process_cov: Matrix,
        meas_cov: Matrix,
    ) -> Result<Self> {
        linalg::check_dim("process covariance rows", state_dim, process_cov.nrows())?;
        linalg::check_dim("process covariance columns", state_dim, process_cov.ncols())?;
        linalg::check_dim("measurement covariance rows", meas_dim, meas_cov.nrows())?;
        linalg::check_dim("measurement covariance columns", meas_dim, meas_cov.ncols())?;
        linalg::cholesky(&process_cov, "process covariance")?;
        linalg::cholesky(&meas_cov, "measurement covariance")?;
        Ok(Self {
            state_dim,
            meas_dim,
            transition,
            measurement,
            process_cov,
            meas_cov,
            transition_jacobian: None,
            measurement_jacobian: None,
            residual_wrap: None,
            linear: None,
        })
    }

    pub fn with_transition_jacobian(mut self, jac: JacobianFn) -> Self {
        self.transition_jacobian = Some(jac);
        self
    }

    pub fn with_measurement_jacobian(mut self, jac: JacobianFn) -> Self {
        self.measurement_jacobian = Some(jac);
        self
    }

    /// Installs a component-wise map applied to every residual `y − g(x)`.
    pub fn with_residual_wrap(mut self, wrap: WrapFn) -> Self {
        self.residual_wrap = Some(wrap);
        self
    }

    /// Replaces the process covariance; used for input-dependent noise.
    pub fn with_process_cov(mut self, q: Matrix) -> Result<Self> {
        linalg::check_dim("process covariance", self.state_dim, q.nrows())?;
        linalg::cholesky(&q, "process covariance")?;
        self.process_cov = q;
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn meas_dim(&self) -> usize {
        self.meas_dim
    }

    pub fn process_cov(&self) -> &Matrix {
        &self.process_cov
    }

    pub fn meas_cov(&self) -> &Matrix {
        &self.meas_cov
    }

    /// `(A, C)` when the model was built by [`build_linear_model`].
    pub fn linear_parts(&self) -> Option<(&Matrix, &Matrix)> {
        self.linear.as_ref().map(|(a, c)| (a, c))
    }

    pub fn transition(&self, x: &Vector) -> Vector {
        (self.transition)(x)
    }

    pub fn measure(&self, x: &Vector) -> Vector {
        (self.measurement)(x)
    }

    pub fn transition_jacobian(&self, x: &Vector) -> Matrix {
        match &self.transition_jacobian {
            Some(j) => j(x),
            None => linalg::numerical_jacobian(|v| (self.transition)(v), x),
        }
    }

    pub fn measurement_jacobian(&self, x: &Vector) -> Matrix {
        match &self.measurement_jacobian {
            Some(j) => j(x),
            None => linalg::numerical_jacobian(|v| (self.measurement)(v), x),
        }
    }

    pub fn wrap_residual(&self, r: &mut Vector) {
        if let Some(w) = &self.residual_wrap {
            w(r);
        }
    }

    /// Innovation `wrap(y − g(x))`.
    pub fn residual(&self, x: &Vector, y: &Vector) -> Vector {
        let mut r = y - self.measure(x);
        self.wrap_residual(&mut r);
        r
    }

    /// The Gaussian measurement loss `½ rᵀR⁻¹r` of this model.
    pub fn loss(&self) -> Result<GaussianLoss> {
        let mut loss = GaussianLoss::new(self.measurement.clone(), self.meas_cov.clone())?;
        loss.jacobian = self.measurement_jacobian.clone();
        loss.wrap = self.residual_wrap.clone();
        Ok(loss)
    }
}

/// Linear model `f(x) = Ax`, `g(x) = Cx` with constant Jacobians.
pub fn build_linear_model(a: Matrix, c: Matrix, q: Matrix, r: Matrix) -> Result<StateSpaceModel> {
    if !a.is_square() {
        return Err(Error::InvalidParameter("transition matrix must be square".into()));
    }
    let n = a.nrows();
    linalg::check_dim("measurement matrix columns", n, c.ncols())?;
    let m = c.nrows();
    let (a1, a2, c1, c2) = (a.clone(), a.clone(), c.clone(), c.clone());
    let mut model = StateSpaceModel::new(
        n,
        m,
        Arc::new(move |x| &a1 * x),
        Arc::new(move |x| &c1 * x),
        q,
        r,
    )?
    .with_transition_jacobian(Arc::new(move |_| a2.clone()))
    .with_measurement_jacobian(Arc::new(move |_| c2.clone()));
    model.linear = Some((a, c));
    Ok(model)
}

/// `ℓ(x, y) = ½ rᵀR⁻¹r` with `r = wrap(y − g(x))`.
#[derive(Clone)]
pub struct GaussianLoss {
    measurement: VectorFn,
    jacobian: Option<JacobianFn>,
    wrap: Option<WrapFn>,
    meas_info: Matrix,
}

impl GaussianLoss {
    pub fn new(measurement: VectorFn, meas_cov: Matrix) -> Result<Self> {
        let meas_info = linalg::spd_inverse(&meas_cov, "measurement covariance")?;
        Ok(Self {
            measurement,
            jacobian: None,
            wrap: None,
            meas_info,
        })
    }

    pub fn with_jacobian(mut self, jac: JacobianFn) -> Self {
        self.jacobian = Some(jac);
        self
    }

    pub fn with_wrap(mut self, wrap: WrapFn) -> Self {
        self.wrap = Some(wrap);
        self
    }

    pub fn meas_info(&self) -> &Matrix {
        &self.meas_info
    }

    pub fn measure(&self, x: &Vector) -> Vector {
        (self.measurement)(x)
    }

    pub fn residual(&self, x: &Vector, y: &Vector) -> Vector {
        let mut r = y - self.measure(x);
        if let Some(w) = &self.wrap {
            w(&mut r);
        }
        r
    }

    pub fn jacobian(&self, x: &Vector) -> Matrix {
        match &self.jacobian {
            Some(j) => j(x),
            None => linalg::numerical_jacobian(|v| (self.measurement)(v), x),
        }
    }

    /// `Σₖ wₖ ∇²gₖ(x)` by central second differences of `g`.
    fn weighted_measurement_curvature(&self, x: &Vector, weights: &Vector) -> Matrix {
        let n = x.len();
        let h: Vec<f64> = x.iter().map(|v| 1e-4 * (1.0 + v.abs())).collect();
        let g = |d: &[(usize, f64)]| {
            let mut p = x.clone();
            for &(i, s) in d {
                p[i] += s;
            }
            weights.dot(&self.measure(&p))
        };
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = if i == j {
                    (g(&[(i, 2.0 * h[i])]) - 2.0 * g(&[]) + g(&[(i, -2.0 * h[i])])) / (4.0 * h[i] * h[i])
                } else {
                    (g(&[(i, h[i]), (j, h[j])]) - g(&[(i, h[i]), (j, -h[j])]) - g(&[(i, -h[i]), (j, h[j])])
                        + g(&[(i, -h[i]), (j, -h[j])]))
                        / (4.0 * h[i] * h[j])
                };
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }
}

impl MeasurementLoss for GaussianLoss {
    fn value(&self, x: &Vector, y: &Vector) -> f64 {
        let r = self.residual(x, y);
        0.5 * r.dot(&(&self.meas_info * &r))
    }

    fn gradient(&self, x: &Vector, y: &Vector) -> Vector {
        let r = self.residual(x, y);
        -(self.jacobian(x).transpose() * (&self.meas_info * r))
    }

    fn hessian(&self, x: &Vector, y: &Vector, mode: HessianMode) -> Matrix {
        self.gradient_and_hessian(x, y, mode).1
    }

    fn gradient_and_hessian(&self, x: &Vector, y: &Vector, mode: HessianMode) -> (Vector, Matrix) {
        let g = self.jacobian(x);
        let weighted = &self.meas_info * self.residual(x, y);
        let gt_info = g.transpose() * &self.meas_info;
        let gn = linalg::symmetrize(&(&gt_info * &g));
        let grad = -(g.transpose() * &weighted);
        let hess = match mode {
            HessianMode::GaussNewton => gn,
            HessianMode::Exact => linalg::symmetrize(&(gn - self.weighted_measurement_curvature(x, &weighted))),
        };
        (grad, hess)
    }
}

/// One component of a noise mixture. Variances are per channel, i.e. the
/// distribution has covariance `variance · I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseDistribution {
    Gaussian { variance: f64 },
    /// Zero-mean Laplace with per-channel variance `2b²`.
    Laplace { variance: f64 },
    /// `Beta(a, b)` on `[0, 1]`, optionally shifted to zero mean.
    Beta { a: f64, b: f64, centered: bool },
}

impl NoiseDistribution {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseDistribution::Gaussian { variance } => variance >= 0.0,
            NoiseDistribution::Laplace { variance } => variance > 0.0,
            NoiseDistribution::Beta { a, b, .. } => a > 0.0 && b > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("non-positive scale in {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            NoiseDistribution::Beta { a, b, centered: false } => a / (a + b),
            _ => 0.0,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            NoiseDistribution::Gaussian { variance } | NoiseDistribution::Laplace { variance } => variance,
            NoiseDistribution::Beta { a, b, .. } => a * b / ((a + b) * (a + b) * (a + b + 1.0)),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        Ok(match *self {
            NoiseDistribution::Gaussian { variance } => variance.sqrt() * rng.sample::<f64, _>(StandardNormal),
            NoiseDistribution::Laplace { variance } => {
                let scale = (variance / 2.0).sqrt();
                // Inverse CDF on u ∈ (-½, ½).
                let u: f64 = rng.sample::<f64, _>(rand::distr::Open01) - 0.5;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            NoiseDistribution::Beta { a, b, centered } => {
                let beta = Beta::new(a, b).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                let v = beta.sample(rng);
                if centered {
                    v - a / (a + b)
                } else {
                    v
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Gaussian,
    Laplace,
    ContaminatedMixture,
    BetaContaminated,
}

/// A finite mixture of i.i.d.-per-channel noise laws. One branch is chosen
/// per draw; every channel of that draw comes from the chosen branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub components: Vec<(f64, NoiseDistribution)>,
}

impl NoiseSpec {
    pub fn new(components: Vec<(f64, NoiseDistribution)>) -> Result<Self> {
        let noise = Self { components };
        noise.validate()?;
        Ok(noise)
    }

    pub fn gaussian(variance: f64) -> Self {
        Self {
            components: vec![(1.0, NoiseDistribution::Gaussian { variance })],
        }
    }

    pub fn laplace(variance: f64) -> Self {
        Self {
            components: vec![(1.0, NoiseDistribution::Laplace { variance })],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidParameter("noise mixture has no components".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.0).sum();
        if (total - 1.0).abs() > 1e-9 || self.components.iter().any(|c| !(c.0 >= 0.0)) {
            return Err(Error::InvalidParameter(format!("mixture weights sum to {total}")));
        }
        self.components.iter().try_for_each(|c| c.1.validate())
    }

    pub fn kind(&self) -> NoiseKind {
        let has_beta = self
            .components
            .iter()
            .any(|c| matches!(c.1, NoiseDistribution::Beta { .. }));
        match (self.components.as_slice(), has_beta) {
            (_, true) => NoiseKind::BetaContaminated,
            ([(_, NoiseDistribution::Gaussian { .. })], _) => NoiseKind::Gaussian,
            ([(_, NoiseDistribution::Laplace { .. })], _) => NoiseKind::Laplace,
            _ => NoiseKind::ContaminatedMixture,
        }
    }

    /// Per-channel mean of the mixture.
    pub fn mean(&self) -> f64 {
        self.components.iter().map(|(w, d)| w * d.mean()).sum()
    }

    /// Per-channel variance of the mixture.
    pub fn variance(&self) -> f64 {
        let second: f64 = self
            .components
            .iter()
            .map(|(w, d)| w * (d.variance() + d.mean() * d.mean()))
            .sum();
        second - self.mean() * self.mean()
    }
}

/// One `dim`-dimensional draw from `noise`.
pub fn sample_noise<R: Rng + ?Sized>(noise: &NoiseSpec, dim: usize, rng: &mut R) -> Result<Vector> {
    noise.validate()?;
    if dim == 0 {
        return Err(Error::InvalidParameter("noise dimension must be positive".into()));
    }
    let dist = if noise.components.len() == 1 {
        noise.components[0].1
    } else {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = noise.components[noise.components.len() - 1].1;
        for (w, d) in &noise.components {
            acc += w;
            if u < acc {
                chosen = *d;
                break;
            }
        }
        chosen
    };
    let mut out = Vector::zeros(dim);
    for v in out.iter_mut() {
        *v = dist.draw(rng)?;
    }
    Ok(out)
}
