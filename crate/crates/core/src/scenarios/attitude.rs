//! Synthetic SO(3) attitude tracking with gyro bias, estimated by the
//! error-state NANO filter on `SO(3) × ℝ³`.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{stream_rng, with_derivative_fallback, FilterKind, FilterRun, FilterSettings, RunRecorder, Stream};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::manifold::{
    compose_and_reset, error_state_nano_update, error_state_predict, so3_exp, so3_log, Block, ErrorBelief,
    ManifoldLoss, ManifoldState, Rotation,
};
use crate::model::NoiseSpec;

const REF_GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];
const REF_MAGNETIC: [f64; 3] = [27.75, -3.65, 47.21];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttitudeScenario {
    pub dt: f64,
    /// Amplitude of the sinusoidal true body rate, rad/s.
    pub rate_amplitude: f64,
    /// Gyro white noise, rad/s.
    pub gyro_noise: f64,
    /// Gyro bias random-walk density, rad/s/√s.
    pub bias_walk: f64,
    pub initial_bias_std: f64,
    pub initial_attitude_std: f64,
    /// Per-channel noise of the field vector readings.
    pub field_noise: f64,
}

impl Default for AttitudeScenario {
    fn default() -> Self {
        Self {
            dt: 0.01,
            rate_amplitude: 0.5,
            gyro_noise: 0.5,
            bias_walk: 1e-3,
            initial_bias_std: 0.01,
            initial_attitude_std: 0.05,
            field_noise: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttitudeData {
    pub truth: Vec<Rotation>,
    pub initial: Rotation,
    /// Gyro readings driving step `t`.
    pub gyro: Vec<Vector3<f64>>,
    pub measurements: Vec<Vector>,
}

/// Per-step diagnostics of an attitude run.
#[derive(Debug, Clone, PartialEq)]
pub struct AttitudeRun {
    /// Rotation block of the nominal state as a row-major 9-vector per step.
    pub run: FilterRun,
    /// Orientation error in radians after prediction, before the update.
    pub error_before: Vec<f64>,
    pub error_after: Vec<f64>,
    /// Largest `‖RᵀR − I‖` / `|det R − 1|` over every estimated rotation.
    pub max_orthogonality_error: f64,
}

fn field_measurement(r: &Rotation) -> Vector {
    let rt = r.transpose();
    let g = rt.rotate(&Vector3::from(REF_GRAVITY));
    let m = rt.rotate(&Vector3::from(REF_MAGNETIC));
    Vector::from_row_slice(&[g.x, g.y, g.z, m.x, m.y, m.z])
}

/// Angle of `R̂ᵀR`, in radians.
pub fn orientation_error(estimate: &Rotation, truth: &Rotation) -> Result<f64> {
    Ok(so3_log(&estimate.transpose().compose(truth))?.norm())
}

fn true_rate(t: f64, amplitude: f64) -> Vector3<f64> {
    Vector3::new(
        amplitude * (0.7 * t).sin(),
        amplitude * (0.5 * t + 1.0).cos(),
        0.5 * amplitude * (0.3 * t).sin(),
    )
}

impl AttitudeScenario {
    fn gaussian3<R: Rng>(rng: &mut R, std: f64) -> Vector3<f64> {
        Vector3::new(
            std * rng.sample::<f64, _>(StandardNormal),
            std * rng.sample::<f64, _>(StandardNormal),
            std * rng.sample::<f64, _>(StandardNormal),
        )
    }

    pub fn simulate(&self, seed: u64, horizon: usize) -> Result<AttitudeData> {
        if !(self.dt > 0.0 && self.field_noise > 0.0 && self.gyro_noise > 0.0) {
            return Err(Error::InvalidParameter("attitude scenario needs positive dt and noise levels".into()));
        }
        let mut init_rng = stream_rng(seed, Stream::InitialState);
        let mut proc_rng = stream_rng(seed, Stream::ProcessNoise);
        let mut meas_rng = stream_rng(seed, Stream::MeasurementNoise);
        let initial = so3_exp(&Self::gaussian3(&mut init_rng, self.initial_attitude_std));
        let mut bias = Self::gaussian3(&mut init_rng, self.initial_bias_std);
        let field = NoiseSpec::gaussian(self.field_noise * self.field_noise);
        let mut r = initial;
        let mut data = AttitudeData {
            truth: Vec::with_capacity(horizon),
            initial,
            gyro: Vec::with_capacity(horizon),
            measurements: Vec::with_capacity(horizon),
        };
        for t in 0..horizon {
            let w = true_rate(t as f64 * self.dt, self.rate_amplitude);
            let gyro = w + bias + Self::gaussian3(&mut proc_rng, self.gyro_noise);
            bias += Self::gaussian3(&mut proc_rng, self.bias_walk * self.dt.sqrt());
            r = r.compose(&so3_exp(&(w * self.dt)));
            let y = field_measurement(&r) + crate::model::sample_noise(&field, 6, &mut meas_rng)?;
            data.truth.push(r);
            data.gyro.push(gyro);
            data.measurements.push(y);
        }
        Ok(data)
    }

    fn initial_belief(&self) -> Result<ErrorBelief> {
        let nominal = ManifoldState::new(vec![
            Block::Rotation(Rotation::identity()),
            Block::Euclidean(Vector::zeros(3)),
        ]);
        let mut p = Matrix::zeros(6, 6);
        for i in 0..3 {
            p[(i, i)] = self.initial_attitude_std.powi(2);
            p[(i + 3, i + 3)] = self.initial_bias_std.powi(2);
        }
        ErrorBelief::centered(nominal, p)
    }

    /// Error-state transition and noise over one step with corrected rate `w`.
    fn error_dynamics(&self, w: &Vector3<f64>) -> (Matrix, Matrix) {
        let dt = self.dt;
        let step_t = so3_exp(&(w * dt)).transpose();
        let mut f = Matrix::identity(6, 6);
        for i in 0..3 {
            for j in 0..3 {
                f[(i, j)] = step_t.matrix()[(i, j)];
            }
            f[(i, i + 3)] = -dt;
        }
        let mut q = Matrix::zeros(6, 6);
        for i in 0..3 {
            q[(i, i)] = (self.gyro_noise * dt).powi(2);
            q[(i + 3, i + 3)] = self.bias_walk.powi(2) * dt;
        }
        (f, q)
    }

    pub fn run(&self, kind: FilterKind, settings: &FilterSettings, data: &AttitudeData) -> Result<AttitudeRun> {
        if !matches!(kind, FilterKind::Nano | FilterKind::NanoDf) {
            return Err(Error::Unsupported {
                filter: kind.id().into(),
                scenario: "attitude-manifold".into(),
            });
        }
        let cfg = kind.nano_config(&settings.nano);
        let loss = ManifoldLoss::new(
            Arc::new(|x: &ManifoldState| field_measurement(x.rotation_block(0).expect("rotation block"))),
            Matrix::identity(6, 6) * self.field_noise.powi(2),
        )?;
        let mut belief = self.initial_belief()?;
        let mut rec = RunRecorder::new(flatten(&Rotation::identity()), data.measurements.len());
        let mut out = AttitudeRun {
            run: FilterRun {
                estimates: Vec::new(),
                step_ms: Vec::new(),
                diverged: false,
            },
            error_before: Vec::with_capacity(data.measurements.len()),
            error_after: Vec::with_capacity(data.measurements.len()),
            max_orthogonality_error: 0.0,
        };
        for (t, y) in data.measurements.iter().enumerate() {
            if rec.diverged() {
                rec.hold();
                continue;
            }
            let started = Instant::now();
            let step = || -> Result<(ErrorBelief, ErrorBelief)> {
                let bias = belief.nominal.euclidean_block(1).expect("bias block").clone();
                let w = data.gyro[t] - Vector3::new(bias[0], bias[1], bias[2]);
                let (f, q) = self.error_dynamics(&w);
                let dt = self.dt;
                let predicted = error_state_predict(&belief, &f, &Matrix::identity(6, 6), &q, |x| {
                    let r = x.rotation_block(0).expect("rotation block");
                    let b = x.euclidean_block(1).expect("bias block");
                    Ok(ManifoldState::new(vec![
                        Block::Rotation(r.compose(&so3_exp(&(w * dt)))),
                        Block::Euclidean(b.clone()),
                    ]))
                })?;
                let (updated, _) =
                    with_derivative_fallback(&cfg, |c| error_state_nano_update(&predicted, &loss, y, c))?;
                Ok((predicted, compose_and_reset(&updated)?))
            };
            let outcome = step();
            let outcome = outcome.and_then(|(predicted, next)| {
                let before = predicted.nominal.rotation_block(0).expect("rotation block");
                let after = next.nominal.rotation_block(0).expect("rotation block");
                out.error_before.push(orientation_error(before, &data.truth[t])?);
                out.error_after.push(orientation_error(after, &data.truth[t])?);
                out.max_orthogonality_error = out
                    .max_orthogonality_error
                    .max(before.orthogonality_error())
                    .max(after.orthogonality_error());
                let est = flatten(after);
                belief = next;
                Ok(est)
            });
            rec.record(outcome, started);
        }
        out.run = rec.finish();
        Ok(out)
    }
}

/// Row-major entries of a rotation matrix.
pub fn flatten(r: &Rotation) -> Vector {
    Vector::from_iterator(9, r.matrix().transpose().iter().copied())
}

pub fn unflatten(v: &Vector) -> Result<Rotation> {
    let m = nalgebra::Matrix3::from_row_slice(v.as_slice());
    Rotation::from_matrix(m)
}

/// RMSE of orientation error angles, degrees.
pub fn attitude_rmse_deg(truth: &[Rotation], estimates: &[Vector]) -> Result<f64> {
    if truth.len() != estimates.len() || truth.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "attitude rmse",
            expected: truth.len(),
            got: estimates.len(),
        });
    }
    let mut acc = 0.0;
    for (r, e) in truth.iter().zip(estimates) {
        let err = orientation_error(&unflatten(e)?, r)?;
        acc += err * err;
    }
    Ok((acc / truth.len() as f64).sqrt().to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nominal_integration_matches_direct_product() {
        let s = AttitudeScenario::default();
        let w = Vector3::new(0.3, -0.2, 0.5);
        let belief = s.initial_belief().unwrap();
        let (f, q) = s.error_dynamics(&w);
        let mut direct = Rotation::identity();
        let mut b = belief;
        for _ in 0..100 {
            b = error_state_predict(&b, &f, &Matrix::identity(6, 6), &q, |x| {
                Ok(ManifoldState::new(vec![
                    Block::Rotation(x.rotation_block(0).unwrap().compose(&so3_exp(&(w * s.dt)))),
                    Block::Euclidean(x.euclidean_block(1).unwrap().clone()),
                ]))
            })
            .unwrap();
            let m = direct.matrix() * so3_exp(&(w * s.dt)).matrix();
            direct = Rotation::from_matrix(m).unwrap();
            let got = b.nominal.rotation_block(0).unwrap();
            assert!((got.matrix() - direct.matrix()).amax() < 1e-8);
        }
        // Constant rate: the product equals one exponential of the total angle.
        let total = so3_exp(&(w * s.dt * 100.0));
        assert!((b.nominal.rotation_block(0).unwrap().matrix() - total.matrix()).amax() < 1e-8);
    }

    #[test]
    fn flatten_round_trip() {
        let r = so3_exp(&Vector3::new(0.2, 0.1, -0.4));
        assert!((unflatten(&flatten(&r)).unwrap().matrix() - r.matrix()).amax() < 1e-15);
    }

    #[test]
    fn short_run_stays_accurate() {
        let s = AttitudeScenario::default();
        let data = s.simulate(2, 200).unwrap();
        let out = s.run(FilterKind::Nano, &FilterSettings::default(), &data).unwrap();
        assert!(!out.run.diverged);
        assert!(attitude_rmse_deg(&data.truth, &out.run.estimates).unwrap() < 2.0);
        assert!(out.max_orthogonality_error < 1e-9);
        assert!(s.run(FilterKind::Ekf, &FilterSettings::default(), &data).is_err());
    }
}
