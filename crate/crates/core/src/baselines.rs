//! Kalman filter baselines: closed-form KF, EKF and UKF.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianBelief;
use crate::linalg::{self, Matrix, Vector};
use crate::model::StateSpaceModel;
use crate::sigma::TransformParams;

/// Numerical form of the covariance update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceForm {
    /// `(I − KC)P₋`, re-symmetrized.
    #[default]
    Standard,
    /// `(I − KC)P₋(I − KC)ᵀ + KRKᵀ`.
    Joseph,
}

fn gain(cross: &Matrix, innovation_cov: &Matrix) -> Result<Matrix> {
    let s = linalg::symmetrize(innovation_cov);
    let chol = s.cholesky().ok_or(Error::Singular("innovation covariance"))?;
    // K = P_xy S⁻¹ = (S⁻¹ P_xyᵀ)ᵀ
    let k = chol.solve(&cross.transpose()).transpose();
    linalg::check_finite_mat(&k, "Kalman gain")?;
    Ok(k)
}

/// Linear-Gaussian update moments. `R` may be singular as long as the
/// innovation covariance is not.
pub fn kf_update_moments(
    mean: &Vector,
    cov: &Matrix,
    c: &Matrix,
    r: &Matrix,
    innovation: &Vector,
    form: CovarianceForm,
) -> Result<(Vector, Matrix)> {
    linalg::check_dim("kf_update measurement matrix", mean.len(), c.ncols())?;
    linalg::check_dim("kf_update innovation", c.nrows(), innovation.len())?;
    linalg::check_dim("kf_update measurement covariance", c.nrows(), r.nrows())?;
    let pct = cov * c.transpose();
    let k = gain(&pct, &(c * &pct + r))?;
    let new_mean = mean + &k * innovation;
    let n = mean.len();
    let i_kc = Matrix::identity(n, n) - &k * c;
    let new_cov = match form {
        CovarianceForm::Standard => &i_kc * cov,
        CovarianceForm::Joseph => &i_kc * cov * i_kc.transpose() + &k * r * k.transpose(),
    };
    Ok((new_mean, linalg::symmetrize(&new_cov)))
}

/// Closed-form Kalman update with `K = P₋Cᵀ(CP₋Cᵀ + R)⁻¹`.
pub fn kf_update(prior: &GaussianBelief, c: &Matrix, r: &Matrix, y: &Vector) -> Result<GaussianBelief> {
    let innovation = y - c * prior.mean();
    let (m, p) = kf_update_moments(prior.mean(), prior.cov(), c, r, &innovation, CovarianceForm::Standard)?;
    GaussianBelief::from_symmetrized(m, p)
}

pub fn kf_predict(posterior: &GaussianBelief, a: &Matrix, q: &Matrix) -> Result<GaussianBelief> {
    linalg::check_dim("kf_predict", posterior.dim(), a.ncols())?;
    GaussianBelief::from_symmetrized(a * posterior.mean(), a * posterior.cov() * a.transpose() + q)
}

pub fn ekf_predict(posterior: &GaussianBelief, model: &StateSpaceModel) -> Result<GaussianBelief> {
    linalg::check_dim("ekf_predict", model.state_dim(), posterior.dim())?;
    let f = model.transition_jacobian(posterior.mean());
    let mean = model.transition(posterior.mean());
    linalg::check_finite_vec(&mean, "EKF predicted mean")?;
    GaussianBelief::from_symmetrized(mean, &f * posterior.cov() * f.transpose() + model.process_cov())
}

pub fn ekf_update(prior: &GaussianBelief, model: &StateSpaceModel, y: &Vector) -> Result<GaussianBelief> {
    ekf_update_with(prior, model, y, CovarianceForm::Standard)
}

pub fn ekf_update_with(
    prior: &GaussianBelief,
    model: &StateSpaceModel,
    y: &Vector,
    form: CovarianceForm,
) -> Result<GaussianBelief> {
    linalg::check_dim("ekf_update", model.state_dim(), prior.dim())?;
    let c = model.measurement_jacobian(prior.mean());
    let innovation = model.residual(prior.mean(), y);
    let (m, p) = kf_update_moments(prior.mean(), prior.cov(), &c, model.meas_cov(), &innovation, form)?;
    GaussianBelief::from_symmetrized(m, p)
}

pub fn ukf_predict(posterior: &GaussianBelief, model: &StateSpaceModel, params: &TransformParams) -> Result<GaussianBelief> {
    crate::nano::nano_predict(posterior, model, params)
}

/// Sigma-point update moments for a measurement map `g`, with `wrap`
/// applied to every measurement deviation and to the innovation.
pub fn ukf_update_moments<G, W>(
    prior: &GaussianBelief,
    g: G,
    r: &Matrix,
    y: &Vector,
    wrap: W,
    params: &TransformParams,
    form: CovarianceForm,
) -> Result<(Vector, Matrix)>
where
    G: Fn(&Vector) -> Vector,
    W: Fn(&mut Vector),
{
    let set = params.points(prior.mean(), prior.cov())?;
    let ys: Vec<Vector> = set.points().iter().map(&g).collect();
    let m = ys.first().map_or(0, |v| v.len());
    linalg::check_dim("ukf_update measurement", m, y.len())?;
    let mut y_mean = Vector::zeros(m);
    for (w, yi) in set.mean_weights().iter().zip(&ys) {
        y_mean.axpy(*w, yi, 1.0);
    }
    linalg::check_finite_vec(&y_mean, "predicted measurement")?;
    let n = prior.dim();
    let mut s = r.clone();
    let mut pxy = Matrix::zeros(n, m);
    for ((w, x), yi) in set.cov_weights().iter().zip(set.points()).zip(&ys) {
        let mut dy = yi - &y_mean;
        wrap(&mut dy);
        let dx = x - prior.mean();
        s.ger(*w, &dy, &dy, 1.0);
        pxy.ger(*w, &dx, &dy, 1.0);
    }
    let k = gain(&pxy, &s)?;
    let mut innovation = y - &y_mean;
    wrap(&mut innovation);
    let mean = prior.mean() + &k * innovation;
    let cov = match form {
        CovarianceForm::Standard => prior.cov() - &k * linalg::symmetrize(&s) * k.transpose(),
        CovarianceForm::Joseph => {
            // Joseph form with the statistically linearized measurement matrix.
            let c = (prior.precision()? * &pxy).transpose();
            let i_kc = Matrix::identity(n, n) - &k * &c;
            let r_eff = &s - &c * prior.cov() * c.transpose();
            &i_kc * prior.cov() * i_kc.transpose() + &k * r_eff * k.transpose()
        }
    };
    Ok((mean, linalg::symmetrize(&cov)))
}

pub fn ukf_update(
    prior: &GaussianBelief,
    model: &StateSpaceModel,
    y: &Vector,
    params: &TransformParams,
) -> Result<GaussianBelief> {
    linalg::check_dim("ukf_update", model.state_dim(), prior.dim())?;
    let (m, p) = ukf_update_moments(
        prior,
        |x| model.measure(x),
        model.meas_cov(),
        y,
        |r| model.wrap_residual(r),
        params,
        CovarianceForm::Standard,
    )?;
    GaussianBelief::from_symmetrized(m, p)
}
