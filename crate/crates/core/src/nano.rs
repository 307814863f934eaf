//! The natural-gradient Gaussian approximation (NANO) filter: moment-matched
//! prediction and the iterative natural-gradient measurement update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{kl_divergence, update_objective, GaussianBelief};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{HessianMode, MeasurementLoss, StateSpaceModel};
use crate::sigma::{SigmaPointSet, TransformParams};

/// How positive definiteness of the information matrix is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdStrategy {
    /// Replace the loss Hessian by `GᵀR⁻¹G`.
    GaussNewton,
    /// Exact Hessian; iterate on a factor `Λ` of the information matrix and
    /// rebuild it as `ΛΛᵀ + εI`.
    CholeskyFactor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    Derivative,
    /// Gradients and Hessians from loss-weighted moments (Stein identities).
    DerivativeFree,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NanoConfig {
    pub max_iters: usize,
    /// Stopping threshold on `‖Δx̂‖₂ + ‖ΔP‖_F`.
    pub gamma: f64,
    /// Step size applied to the mean update.
    pub eta: f64,
    pub pd_strategy: PdStrategy,
    pub derivative_mode: DerivativeMode,
    pub quad: TransformParams,
    pub epsilon: f64,
}

impl Default for NanoConfig {
    fn default() -> Self {
        Self {
            max_iters: 20,
            gamma: 1e-4,
            eta: 1.0,
            pd_strategy: PdStrategy::GaussNewton,
            derivative_mode: DerivativeMode::Derivative,
            quad: TransformParams::default(),
            epsilon: 1e-9,
        }
    }
}

impl NanoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidParameter(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        Ok(())
    }

    fn hessian_mode(&self) -> HessianMode {
        match self.pd_strategy {
            PdStrategy::GaussNewton => HessianMode::GaussNewton,
            PdStrategy::CholeskyFactor => HessianMode::Exact,
        }
    }
}

/// Diagnostics of one measurement update.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateTrace {
    pub iterations_run: usize,
    pub converged: bool,
    /// Objective value of each iterate produced.
    pub objective: Vec<f64>,
    pub final_step_norm: f64,
}

/// Moment-matched prediction: `(E[f(x)], Cov[f(x)] + Q)`.
pub fn nano_predict(
    posterior: &GaussianBelief,
    model: &StateSpaceModel,
    quad: &TransformParams,
) -> Result<GaussianBelief> {
    linalg::check_dim("nano_predict", model.state_dim(), posterior.dim())?;
    let set = quad.points(posterior.mean(), posterior.cov())?;
    let (mean, cov) = set.moment_match(|x| model.transition(x))?;
    GaussianBelief::from_symmetrized(mean, cov + model.process_cov())
        .map_err(|_| Error::NotPositiveDefinite("predicted covariance"))
}

/// One first-order step on a factor of the information matrix:
/// `Λ + ½ (V + P₋⁻¹) Λ⁻ᵀ`.
pub fn cholesky_factor_step(lambda: &Matrix, v_xx: &Matrix, prior_info: &Matrix) -> Result<Matrix> {
    let n = lambda.nrows();
    linalg::check_dim("factor step curvature", n, v_xx.nrows())?;
    linalg::check_dim("factor step prior information", n, prior_info.nrows())?;
    let lu = lambda.transpose().lu();
    let inv_t = lu.try_inverse().ok_or(Error::Singular("information factor"))?;
    let step = (v_xx + prior_info) * inv_t * 0.5;
    linalg::check_finite_mat(&step, "information factor step")?;
    Ok(lambda + step)
}

/// `ΛΛᵀ + εI`.
pub fn reconstruct_information(lambda: &Matrix, epsilon: f64) -> Matrix {
    let n = lambda.nrows();
    linalg::symmetrize(&(lambda * lambda.transpose())) + Matrix::identity(n, n) * epsilon
}

struct Prior<'a> {
    belief: &'a GaussianBelief,
    info: Matrix,
}

impl<'a> Prior<'a> {
    fn new(belief: &'a GaussianBelief) -> Result<Self> {
        Ok(Self {
            info: belief.precision()?,
            belief,
        })
    }
}

/// Information-matrix update shared by both derivative modes.
fn next_information(
    iter_info: &Matrix,
    curvature: &Matrix,
    prior_info: &Matrix,
    cfg: &NanoConfig,
) -> Result<Matrix> {
    match cfg.pd_strategy {
        PdStrategy::GaussNewton => Ok(linalg::symmetrize(&(prior_info + curvature))),
        PdStrategy::CholeskyFactor => {
            // Stepping with V − ΛΛᵀ makes ΛΛᵀ = P₋⁻¹ + V the fixed point.
            let lambda = linalg::cholesky(iter_info, "iterate information")?.unpack();
            let direction = curvature - iter_info;
            let next = cholesky_factor_step(&lambda, &direction, prior_info)?;
            Ok(reconstruct_information(&next, cfg.epsilon))
        }
    }
}

fn finish_iteration(
    iter: &GaussianBelief,
    prior: &Prior<'_>,
    info: Matrix,
    expected_grad: &Vector,
    cfg: &NanoConfig,
) -> Result<GaussianBelief> {
    let cov = linalg::spd_inverse(&info, "updated information matrix")?;
    let pull = &prior.info * (iter.mean() - prior.belief.mean());
    let mean = iter.mean() - (&cov * (expected_grad + pull)) * cfg.eta;
    linalg::check_finite_vec(&mean, "updated mean")?;
    GaussianBelief::from_symmetrized(mean, cov)
}

fn iteration_with_prior(
    iter: &GaussianBelief,
    prior: &Prior<'_>,
    loss: &dyn MeasurementLoss,
    y: &Vector,
    support: Option<&[usize]>,
    cfg: &NanoConfig,
) -> Result<GaussianBelief> {
    linalg::check_dim("nano iterate", prior.belief.dim(), iter.dim())?;
    let (grad, hess, iter_info) = match support {
        None => local_derivatives(iter, loss, y, cfg)?,
        Some(idx) => {
            let n = iter.dim();
            let local = GaussianBelief::from_symmetrized(
                iter.mean().select_rows(idx),
                iter.cov().select_rows(idx).select_columns(idx),
            )?;
            let (g, h, _) = local_derivatives(&local, loss, y, cfg)?;
            let mut grad = Vector::zeros(n);
            let mut hess = Matrix::zeros(n, n);
            for (a, &i) in idx.iter().enumerate() {
                grad[i] = g[a];
                for (b, &j) in idx.iter().enumerate() {
                    hess[(i, j)] = h[(a, b)];
                }
            }
            let info = match cfg.pd_strategy {
                PdStrategy::CholeskyFactor => iter.precision()?,
                PdStrategy::GaussNewton => Matrix::zeros(0, 0),
            };
            (grad, hess, info)
        }
    };
    let info = next_information(&iter_info, &hess, &prior.info, cfg)?;
    if cfg.derivative_mode == DerivativeMode::DerivativeFree {
        linalg::cholesky(&info, "derivative-free information matrix")?;
    }
    finish_iteration(iter, prior, info, &grad, cfg)
}

/// `(E[∇ℓ], E[∇²ℓ], S)` under `belief`; `S` is the belief's information
/// matrix when the strategy needs it, empty otherwise.
fn local_derivatives(
    belief: &GaussianBelief,
    loss: &dyn MeasurementLoss,
    y: &Vector,
    cfg: &NanoConfig,
) -> Result<(Vector, Matrix, Matrix)> {
    let set = cfg.quad.points(belief.mean(), belief.cov())?;
    match cfg.derivative_mode {
        DerivativeMode::Derivative => {
            let (grad, hess) = set.expect(|x| loss.gradient_and_hessian(x, y, cfg.hessian_mode()))?;
            let info = match cfg.pd_strategy {
                PdStrategy::GaussNewton => Matrix::zeros(0, 0),
                PdStrategy::CholeskyFactor => belief.precision()?,
            };
            Ok((grad, hess, info))
        }
        DerivativeMode::DerivativeFree => {
            let info = belief.precision()?;
            let moments = LossMoments::compute(&set, belief.mean(), loss, y)?;
            let (grad, hess) = moments.stein_derivatives(&info);
            Ok((grad, hess, info))
        }
    }
}

/// One derivative-based natural-gradient step:
/// `S' = P₋⁻¹ + E[∇²ℓ]`, `x̂' = x̂ − η S'⁻¹ (E[∇ℓ] + P₋⁻¹(x̂ − x̂₋))`,
/// expectations under the current iterate.
pub fn nano_update_iteration(
    iter: &GaussianBelief,
    prior: &GaussianBelief,
    loss: &dyn MeasurementLoss,
    y: &Vector,
    cfg: &NanoConfig,
) -> Result<GaussianBelief> {
    let cfg = NanoConfig {
        derivative_mode: DerivativeMode::Derivative,
        ..*cfg
    };
    iteration_with_prior(iter, &Prior::new(prior)?, loss, y, None, &cfg)
}

/// One derivative-free step using loss-weighted moments of the iterate.
pub fn nano_update_iteration_df(
    iter: &GaussianBelief,
    prior: &GaussianBelief,
    loss: &dyn MeasurementLoss,
    y: &Vector,
    cfg: &NanoConfig,
) -> Result<GaussianBelief> {
    let cfg = NanoConfig {
        derivative_mode: DerivativeMode::DerivativeFree,
        ..*cfg
    };
    iteration_with_prior(iter, &Prior::new(prior)?, loss, y, None, &cfg)
}

/// The full iterative update, started at the prior.
pub fn nano_update(
    prior: &GaussianBelief,
    loss: &dyn MeasurementLoss,
    y: &Vector,
    cfg: &NanoConfig,
) -> Result<(GaussianBelief, UpdateTrace)> {
    run_update(prior, loss, y, None, cfg)
}

/// [`nano_update`] for a loss that reads only the coordinates in `support`
/// (in that order). Expectations are taken over the marginal of those
/// coordinates; the information and mean updates act on the full state.
pub fn nano_update_local(
    prior: &GaussianBelief,
    loss: &dyn MeasurementLoss,
    support: &[usize],
    y: &Vector,
    cfg: &NanoConfig,
) -> Result<(GaussianBelief, UpdateTrace)> {
    if support.is_empty() || support.iter().any(|&i| i >= prior.dim()) {
        return Err(Error::InvalidParameter(format!(
            "support {support:?} is not a set of state indices below {}",
            prior.dim()
        )));
    }
    run_update(prior, loss, y, Some(support), cfg)
}

fn run_update(
    prior: &GaussianBelief,
    loss: &dyn MeasurementLoss,
    y: &Vector,
    support: Option<&[usize]>,
    cfg: &NanoConfig,
) -> Result<(GaussianBelief, UpdateTrace)> {
    cfg.validate()?;
    let prior_ctx = Prior::new(prior)?;
    let mut iterate = prior.clone();
    let mut trace = UpdateTrace::default();
    for _ in 0..cfg.max_iters {
        let next = iteration_with_prior(&iterate, &prior_ctx, loss, y, support, cfg)?;
        let step = (next.mean() - iterate.mean()).norm() + (next.cov() - iterate.cov()).norm();
        trace.iterations_run += 1;
        trace.final_step_norm = step;
        trace.objective.push(objective(&next, prior, loss, y, support, cfg)?);
        iterate = next;
        if step < cfg.gamma {
            trace.converged = true;
            break;
        }
    }
    Ok((iterate, trace))
}

fn objective(
    q: &GaussianBelief,
    prior: &GaussianBelief,
    loss: &dyn MeasurementLoss,
    y: &Vector,
    support: Option<&[usize]>,
    cfg: &NanoConfig,
) -> Result<f64> {
    match support {
        None => update_objective(q, prior, loss, y, &cfg.quad),
        Some(idx) => {
            let mean = q.mean().select_rows(idx);
            let cov = q.cov().select_rows(idx).select_columns(idx);
            let expected = cfg.quad.points(&mean, &cov)?.expect(|x| loss.value(x, y))?;
            Ok(expected + kl_divergence(q, prior)?)
        }
    }
}

/// `E[ℓ]`, `E[e ℓ]`, `E[e eᵀ ℓ]` with `e = x − x̂` under a point set.
#[derive(Debug, Clone)]
pub struct LossMoments {
    pub value: f64,
    pub first: Vector,
    pub second: Matrix,
}

impl LossMoments {
    pub fn compute(set: &SigmaPointSet, center: &Vector, loss: &dyn MeasurementLoss, y: &Vector) -> Result<Self> {
        let (value, first, second) = set.expect(|x| {
            let l = loss.value(x, y);
            let e = x - center;
            let outer = &e * e.transpose() * l;
            (l, e * l, outer)
        })?;
        Ok(Self { value, first, second })
    }

    /// Stein forms `(S E[eℓ], S E[eeᵀℓ] S − S E[ℓ])` for information `S`.
    pub fn stein_derivatives(&self, info: &Matrix) -> (Vector, Matrix) {
        let grad = info * &self.first;
        let hess = linalg::symmetrize(&(info * &self.second * info - info * self.value));
        (grad, hess)
    }
}

/// `E_q[∇ℓ]` either directly or through the Stein identity.
pub fn expected_gradient(
    belief: &GaussianBelief,
    loss: &dyn MeasurementLoss,
    y: &Vector,
    quad: &TransformParams,
    mode: DerivativeMode,
) -> Result<Vector> {
    let set = quad.points(belief.mean(), belief.cov())?;
    match mode {
        DerivativeMode::Derivative => set.expect(|x| loss.gradient(x, y)),
        DerivativeMode::DerivativeFree => {
            let m = LossMoments::compute(&set, belief.mean(), loss, y)?;
            Ok(m.stein_derivatives(&belief.precision()?).0)
        }
    }
}

/// Residuals of the stationarity conditions of the update objective:
/// `x̂ − x̂₋ + P₋ E[∇ℓ]` and `P⁻¹ − P₋⁻¹ − E[∇²ℓ]`, expectations by `quad`.
pub fn stationarity_residuals(
    posterior: &GaussianBelief,
    prior: &GaussianBelief,
    loss: &dyn MeasurementLoss,
    y: &Vector,
    quad: &TransformParams,
    mode: HessianMode,
) -> Result<(Vector, Matrix)> {
    let set = quad.points(posterior.mean(), posterior.cov())?;
    let (grad, hess) = set.expect(|x| loss.gradient_and_hessian(x, y, mode))?;
    let mean_res = posterior.mean() - prior.mean() + prior.cov() * grad;
    let cov_res = posterior.precision()? - prior.precision()? - hess;
    Ok((mean_res, cov_res))
}
