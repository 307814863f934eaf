//! SO(3) and product-manifold arithmetic, and the error-state NANO update.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::gaussian::GaussianBelief;
use crate::linalg::{self, Matrix, Vector};
use crate::model::{GaussianLoss, WrapFn};
use crate::nano::{nano_update, NanoConfig, UpdateTrace};

const ORTHO_TOL: f64 = 1e-10;
const EXP_SMALL: f64 = 1e-8;
const LOG_SMALL: f64 = 1e-8;
const LOG_PI_GUARD: f64 = 1e-6;

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Accepts a nearly orthogonal matrix, projecting it onto SO(3) when it
    /// has drifted past tolerance. Reflections and far-off matrices are rejected.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("rotation matrix"));
        }
        let drift = (m.transpose() * m - Matrix3::identity()).amax();
        if drift > 1e-3 || m.determinant() <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "not a rotation matrix (orthogonality error {drift:.3e}, det {:.3e})",
                m.determinant()
            )));
        }
        let r = Self(m);
        Ok(if drift > ORTHO_TOL || (m.determinant() - 1.0).abs() > ORTHO_TOL {
            r.reorthonormalized()
        } else {
            r
        })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Nearest rotation in Frobenius norm (polar factor).
    pub fn reorthonormalized(&self) -> Self {
        let svd = self.0.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Matrix3::identity();
        if (u * vt).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Self(u * d * vt)
    }

    pub fn orthogonality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity())
            .amax()
            .max((self.0.determinant() - 1.0).abs())
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        let m = self.0 * other.0;
        let r = Self(m);
        if r.orthogonality_error() > ORTHO_TOL {
            r.reorthonormalized()
        } else {
            r
        }
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

pub fn hat(r: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -r.z, r.y, r.z, 0.0, -r.x, -r.y, r.x, 0.0)
}

/// Rodrigues' formula.
pub fn so3_exp(r: &Vector3<f64>) -> Rotation {
    let theta = r.norm();
    let k = hat(r);
    let k2 = k * k;
    let (a, b) = if theta < EXP_SMALL {
        (1.0 - theta * theta / 6.0, 0.5 - theta * theta / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Rotation(Matrix3::identity() + k * a + k2 * b)
}

/// Inverse of [`so3_exp`] for rotation angles below `π − 1e-6`.
pub fn so3_log(rot: &Rotation) -> Result<Vector3<f64>> {
    let m = rot.matrix();
    let tr = m.trace();
    let cos = ((tr - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    if theta > PI - LOG_PI_GUARD {
        return Err(Error::AmbiguousLog(theta));
    }
    let w = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let scale = if 3.0 - tr < LOG_SMALL {
        0.5 + theta * theta / 12.0
    } else {
        theta / (2.0 * theta.sin())
    };
    Ok(w * scale)
}

pub fn to_vector3(v: &Vector, offset: usize) -> Vector3<f64> {
    Vector3::new(v[offset], v[offset + 1], v[offset + 2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Rotation,
    Euclidean(usize),
}

impl BlockKind {
    pub fn tangent_dim(&self) -> usize {
        match self {
            BlockKind::Rotation => 3,
            BlockKind::Euclidean(k) => *k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Rotation(Rotation),
    Euclidean(Vector),
}

impl Block {
    pub fn kind(&self) -> BlockKind {
        match self {
            Block::Rotation(_) => BlockKind::Rotation,
            Block::Euclidean(v) => BlockKind::Euclidean(v.len()),
        }
    }
}

/// An ordered product of rotation and vector blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldState {
    blocks: Vec<Block>,
}

impl ManifoldState {
    pub fn new(blocks: Vec<Block>) -> Self {
        Self { blocks }
    }

    pub fn euclidean(v: Vector) -> Self {
        Self::new(vec![Block::Euclidean(v)])
    }

    pub fn rotation(r: Rotation) -> Self {
        Self::new(vec![Block::Rotation(r)])
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn layout(&self) -> Vec<BlockKind> {
        self.blocks.iter().map(Block::kind).collect()
    }

    pub fn tangent_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.kind().tangent_dim()).sum()
    }

    pub fn rotation_block(&self, i: usize) -> Option<&Rotation> {
        match self.blocks.get(i) {
            Some(Block::Rotation(r)) => Some(r),
            _ => None,
        }
    }

    pub fn euclidean_block(&self, i: usize) -> Option<&Vector> {
        match self.blocks.get(i) {
            Some(Block::Euclidean(v)) => Some(v),
            _ => None,
        }
    }

    fn check_tangent(&self, d: &Vector) -> Result<()> {
        if d.len() != self.tangent_dim() {
            return Err(Error::LayoutMismatch(format!(
                "tangent vector has {} components, layout needs {}",
                d.len(),
                self.tangent_dim()
            )));
        }
        Ok(())
    }

    /// `x ⊞ d`; `d` must already have the tangent dimension.
    fn retract(&self, d: &Vector) -> Self {
        let mut offset = 0;
        let blocks = self
            .blocks
            .iter()
            .map(|b| match b {
                Block::Rotation(r) => {
                    let out = r.compose(&so3_exp(&to_vector3(d, offset)));
                    offset += 3;
                    Block::Rotation(out)
                }
                Block::Euclidean(v) => {
                    let out = v + d.rows(offset, v.len());
                    offset += v.len();
                    Block::Euclidean(out)
                }
            })
            .collect();
        Self { blocks }
    }
}

/// `x ⊞ d`: `R·Exp(r)` on rotation blocks, addition on vector blocks.
pub fn boxplus(x: &ManifoldState, d: &Vector) -> Result<ManifoldState> {
    x.check_tangent(d)?;
    linalg::check_finite_vec(d, "tangent increment")?;
    Ok(x.retract(d))
}

/// `x₁ ⊟ x₂`: `Log(R₂ᵀR₁)` on rotation blocks, difference on vector blocks.
pub fn boxminus(x1: &ManifoldState, x2: &ManifoldState) -> Result<Vector> {
    if x1.layout() != x2.layout() {
        return Err(Error::LayoutMismatch(format!("{:?} vs {:?}", x1.layout(), x2.layout())));
    }
    let mut out = Vector::zeros(x1.tangent_dim());
    let mut offset = 0;
    for (a, b) in x1.blocks.iter().zip(&x2.blocks) {
        match (a, b) {
            (Block::Rotation(r1), Block::Rotation(r2)) => {
                let r = so3_log(&r2.transpose().compose(r1))?;
                out.fixed_rows_mut::<3>(offset).copy_from(&r);
                offset += 3;
            }
            (Block::Euclidean(v1), Block::Euclidean(v2)) => {
                out.rows_mut(offset, v1.len()).copy_from(&(v1 - v2));
                offset += v1.len();
            }
            _ => unreachable!("layouts compared above"),
        }
    }
    Ok(out)
}

/// Nominal manifold state plus a Gaussian over the tangent-space error.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBelief {
    pub nominal: ManifoldState,
    pub delta: GaussianBelief,
}

impl ErrorBelief {
    pub fn new(nominal: ManifoldState, delta: GaussianBelief) -> Result<Self> {
        linalg::check_dim("error belief", nominal.tangent_dim(), delta.dim())?;
        Ok(Self { nominal, delta })
    }

    /// Zero-mean error with covariance `p`.
    pub fn centered(nominal: ManifoldState, p: Matrix) -> Result<Self> {
        let n = nominal.tangent_dim();
        Self::new(nominal, GaussianBelief::new(Vector::zeros(n), p)?)
    }
}

/// Advances the nominal state with the noise-free map and propagates the
/// error covariance as `F P Fᵀ + B Q Bᵀ`; the error mean stays zero.
pub fn error_state_predict<S>(
    belief: &ErrorBelief,
    f: &Matrix,
    b: &Matrix,
    q: &Matrix,
    nominal_step: S,
) -> Result<ErrorBelief>
where
    S: Fn(&ManifoldState) -> Result<ManifoldState>,
{
    let n = belief.delta.dim();
    linalg::check_dim("error transition", n, f.nrows())?;
    linalg::check_dim("error transition", n, f.ncols())?;
    linalg::check_dim("noise input", n, b.nrows())?;
    linalg::check_dim("noise covariance", b.ncols(), q.nrows())?;
    let nominal = nominal_step(&belief.nominal)?;
    if nominal.layout() != belief.nominal.layout() {
        return Err(Error::LayoutMismatch("nominal step changed the block layout".into()));
    }
    let cov = f * belief.delta.cov() * f.transpose() + b * q * b.transpose();
    let delta = GaussianBelief::from_symmetrized(Vector::zeros(n), cov)
        .map_err(|_| Error::NotPositiveDefinite("propagated error covariance"))?;
    Ok(ErrorBelief { nominal, delta })
}

pub type ManifoldMeasurementFn = Arc<dyn Fn(&ManifoldState) -> Vector + Send + Sync>;

/// Gaussian measurement loss on a manifold state: `½ rᵀR⁻¹r` with
/// `r = wrap(y − h(x))`.
#[derive(Clone)]
pub struct ManifoldLoss {
    measurement: ManifoldMeasurementFn,
    meas_cov: Matrix,
    wrap: Option<WrapFn>,
}

impl ManifoldLoss {
    pub fn new(measurement: ManifoldMeasurementFn, meas_cov: Matrix) -> Result<Self> {
        linalg::cholesky(&meas_cov, "measurement covariance")?;
        Ok(Self {
            measurement,
            meas_cov,
            wrap: None,
        })
    }

    pub fn with_wrap(mut self, wrap: WrapFn) -> Self {
        self.wrap = Some(wrap);
        self
    }

    pub fn measure(&self, x: &ManifoldState) -> Vector {
        (self.measurement)(x)
    }

    /// The loss in anchored coordinates around `nominal`: vector blocks are
    /// absolute, rotation blocks are increments `r` with `R = R̄·Exp(r)`.
    /// Shifting by [`anchor`] turns these into the error state `δx`.
    pub fn anchored(&self, nominal: &ManifoldState) -> Result<GaussianLoss> {
        let base = nominal.clone();
        let h = self.measurement.clone();
        let meas = Arc::new(move |z: &Vector| h(&chart(&base, z)));
        let mut loss = GaussianLoss::new(meas, self.meas_cov.clone())?;
        if let Some(w) = &self.wrap {
            loss = loss.with_wrap(w.clone());
        }
        Ok(loss)
    }
}

/// Anchored coordinates of `x̄` itself: vector blocks copied, rotations zero.
pub fn anchor(nominal: &ManifoldState) -> Vector {
    let mut out = Vector::zeros(nominal.tangent_dim());
    let mut offset = 0;
    for b in nominal.blocks() {
        match b {
            Block::Rotation(_) => offset += 3,
            Block::Euclidean(v) => {
                out.rows_mut(offset, v.len()).copy_from(v);
                offset += v.len();
            }
        }
    }
    out
}

/// Inverse of [`anchor`]-relative coordinates: the state at `z`.
fn chart(nominal: &ManifoldState, z: &Vector) -> ManifoldState {
    let mut offset = 0;
    let blocks = nominal
        .blocks
        .iter()
        .map(|b| match b {
            Block::Rotation(r) => {
                let out = r.compose(&so3_exp(&to_vector3(z, offset)));
                offset += 3;
                Block::Rotation(out)
            }
            Block::Euclidean(v) => {
                let out = z.rows(offset, v.len()).into_owned();
                offset += v.len();
                Block::Euclidean(out)
            }
        })
        .collect();
    ManifoldState { blocks }
}

/// NANO iterations on the error state with the loss evaluated at `x̄ ⊞ δx`.
/// The returned belief keeps the old nominal; see [`compose_and_reset`].
pub fn error_state_nano_update(
    belief: &ErrorBelief,
    loss: &ManifoldLoss,
    y: &Vector,
    cfg: &NanoConfig,
) -> Result<(ErrorBelief, UpdateTrace)> {
    // Vector blocks are iterated in absolute coordinates, which is a pure
    // translation of the error Gaussian.
    let shift = anchor(&belief.nominal);
    let prior = GaussianBelief::new(belief.delta.mean() + &shift, belief.delta.cov().clone())?;
    let anchored = loss.anchored(&belief.nominal)?;
    let (post, trace) = nano_update(&prior, &anchored, y, cfg)?;
    let (mean, cov) = post.into_parts();
    Ok((
        ErrorBelief {
            nominal: belief.nominal.clone(),
            delta: GaussianBelief::new(mean - shift, cov)?,
        },
        trace,
    ))
}

/// `x̄ ← x̄ ⊞ δx̂`, `δx̂ ← 0`; the covariance is carried over unchanged.
pub fn compose_and_reset(belief: &ErrorBelief) -> Result<ErrorBelief> {
    let nominal = boxplus(&belief.nominal, belief.delta.mean())?;
    let n = belief.delta.dim();
    Ok(ErrorBelief {
        nominal,
        delta: GaussianBelief::from_symmetrized(Vector::zeros(n), belief.delta.cov().clone())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MeasurementLoss;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn exp_examples() {
        assert_eq!(so3_exp(&Vector3::zeros()).matrix(), &Matrix3::identity());
        let r = so3_exp(&Vector3::new(FRAC_PI_2, 0.0, 0.0));
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert!((r.matrix() - expected).amax() < 1e-15);
        let tiny = so3_exp(&Vector3::new(1e-10, -2e-10, 0.0));
        assert!((tiny.matrix() - (Matrix3::identity() + hat(&Vector3::new(1e-10, -2e-10, 0.0)))).amax() < 1e-18);
    }

    #[test]
    fn log_examples() {
        assert_eq!(so3_log(&Rotation::identity()).unwrap(), Vector3::zeros());
        let r = so3_log(&so3_exp(&Vector3::new(FRAC_PI_2, 0.0, 0.0))).unwrap();
        assert!((r - Vector3::new(FRAC_PI_2, 0.0, 0.0)).amax() < 1e-14);
        let half = so3_exp(&Vector3::new(0.0, PI, 0.0));
        assert!(matches!(so3_log(&half), Err(Error::AmbiguousLog(_))));
        let small = Vector3::new(3e-9, -1e-9, 2e-9);
        assert!((so3_log(&so3_exp(&small)).unwrap() - small).amax() < 1e-20);
    }

    #[test]
    fn reorthonormalization_restores_invariant() {
        let r = so3_exp(&Vector3::new(0.3, -0.2, 1.1));
        let mut m = *r.matrix();
        m[(0, 1)] += 1e-6;
        let fixed = Rotation::from_matrix(m).unwrap();
        assert!(fixed.orthogonality_error() < 1e-12);
        assert!((fixed.matrix() - r.matrix()).amax() < 1e-5);
        assert!(Rotation::from_matrix(-Matrix3::identity()).is_err());
    }

    fn mixed_state() -> ManifoldState {
        ManifoldState::new(vec![
            Block::Rotation(so3_exp(&Vector3::new(0.1, 0.2, -0.3))),
            Block::Euclidean(Vector::from_row_slice(&[1.0, -2.0, 0.5])),
        ])
    }

    #[test]
    fn boxplus_boxminus_examples() {
        let x = mixed_state();
        assert_eq!(x.tangent_dim(), 6);
        assert_eq!(boxplus(&x, &Vector::zeros(6)).unwrap(), x);
        assert_eq!(boxminus(&x, &x).unwrap(), Vector::zeros(6));
        let d = Vector::from_row_slice(&[0.3, -0.1, 0.2, 1.0, 2.0, 3.0]);
        let back = boxminus(&boxplus(&x, &d).unwrap(), &x).unwrap();
        assert!((back - &d).amax() < 1e-12);
        assert!(boxplus(&x, &Vector::zeros(5)).is_err());
        let e = ManifoldState::euclidean(Vector::from_row_slice(&[1.0, 2.0]));
        let moved = boxplus(&e, &Vector::from_row_slice(&[0.5, -1.0])).unwrap();
        assert_eq!(moved.euclidean_block(0).unwrap(), &Vector::from_row_slice(&[1.5, 1.0]));
        assert!(boxminus(&x, &e).is_err());
    }

    #[test]
    fn predict_examples() {
        let e = ErrorBelief::centered(
            ManifoldState::euclidean(Vector::from_row_slice(&[1.0])),
            Matrix::from_element(1, 1, 0.3),
        )
        .unwrap();
        let id = Matrix::identity(1, 1);
        let same = error_state_predict(&e, &id, &id, &Matrix::zeros(1, 1), |x| Ok(x.clone())).unwrap();
        assert_eq!(same.delta.cov(), e.delta.cov());
        let doubled =
            error_state_predict(&e, &(id.clone() * 2.0), &id, &Matrix::from_element(1, 1, 0.1), |x| Ok(x.clone()))
                .unwrap();
        assert!((doubled.delta.cov()[(0, 0)] - 1.3).abs() < 1e-15);
        assert_eq!(doubled.delta.mean()[0], 0.0);
    }

    #[test]
    fn perfect_rotation_measurement_keeps_zero_mean() {
        let nominal = ManifoldState::rotation(so3_exp(&Vector3::new(0.4, -0.1, 0.2)));
        let truth = *nominal.rotation_block(0).unwrap();
        let loss = ManifoldLoss::new(
            Arc::new(move |x: &ManifoldState| {
                let r = x.rotation_block(0).unwrap();
                let v = so3_log(&truth.transpose().compose(r)).unwrap();
                Vector::from_column_slice(v.as_slice())
            }),
            Matrix::identity(3, 3) * 0.01,
        )
        .unwrap();
        let belief = ErrorBelief::centered(nominal, Matrix::identity(3, 3) * 0.1).unwrap();
        let (post, _) = error_state_nano_update(&belief, &loss, &Vector::zeros(3), &NanoConfig::default()).unwrap();
        assert!(post.delta.mean().amax() < 1e-9);
        assert!(post.delta.cov().trace() < belief.delta.cov().trace());
    }

    #[test]
    fn euclidean_layout_matches_plain_update() {
        let h = |x: &Vector| Vector::from_row_slice(&[x[0] * x[1], x[0].sin() + x[1] * x[1]]);
        let r = Matrix::from_row_slice(2, 2, &[0.2, 0.05, 0.05, 0.1]);
        let plain = GaussianLoss::new(Arc::new(h), r.clone()).unwrap();
        let mloss = ManifoldLoss::new(
            Arc::new(move |x: &ManifoldState| h(x.euclidean_block(0).unwrap())),
            r,
        )
        .unwrap();
        let mean = Vector::from_row_slice(&[0.7, -1.3]);
        let cov = Matrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.3]);
        let y = Vector::from_row_slice(&[-0.5, 2.4]);
        let cfg = NanoConfig::default();
        let (p_post, p_trace) = nano_update(&GaussianBelief::new(mean.clone(), cov.clone()).unwrap(), &plain, &y, &cfg).unwrap();
        let belief = ErrorBelief::centered(ManifoldState::euclidean(mean), cov).unwrap();
        let (m_post, m_trace) = error_state_nano_update(&belief, &mloss, &y, &cfg).unwrap();
        let composed = compose_and_reset(&m_post).unwrap();
        let est = composed.nominal.euclidean_block(0).unwrap();
        assert!((est - p_post.mean()).amax() < 1e-12);
        assert!((composed.delta.cov() - p_post.cov()).amax() < 1e-12);
        assert_eq!(p_trace.iterations_run, m_trace.iterations_run);
        let d = Vector::from_row_slice(&[0.01, 0.02]);
        let anchored = mloss.anchored(&belief.nominal).unwrap();
        let shifted = belief.nominal.euclidean_block(0).unwrap() + &d;
        assert!((anchored.value(&shifted, &y) - plain.value(&shifted, &y)).abs() < 1e-15);
    }

    #[test]
    fn compose_and_reset_examples() {
        let e = ErrorBelief::new(
            ManifoldState::euclidean(Vector::from_row_slice(&[1.0, 1.0])),
            GaussianBelief::new(Vector::from_row_slice(&[0.5, -0.25]), Matrix::identity(2, 2)).unwrap(),
        )
        .unwrap();
        let once = compose_and_reset(&e).unwrap();
        assert_eq!(once.nominal.euclidean_block(0).unwrap(), &Vector::from_row_slice(&[1.5, 0.75]));
        assert_eq!(once.delta.cov(), e.delta.cov());
        assert_eq!(compose_and_reset(&once).unwrap(), once);
    }
}
