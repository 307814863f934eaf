//! Constant-velocity linear-Gaussian model with position measurements.

use serde::{Deserialize, Serialize};

use super::{run_filter, stream_rng, FilterKind, FilterRun, FilterSettings, Stream};
use crate::error::Result;
use crate::gaussian::GaussianBelief;
use crate::linalg::{Matrix, Vector};
use crate::model::{build_linear_model, sample_noise, NoiseSpec, StateSpaceModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearScenario {
    pub dt: f64,
    /// White-acceleration spectral density.
    pub accel_density: f64,
    pub meas_variance: f64,
    pub initial_variance: f64,
}

impl Default for LinearScenario {
    fn default() -> Self {
        Self {
            dt: 0.1,
            accel_density: 1.0,
            meas_variance: 0.25,
            initial_variance: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearData {
    pub truth: Vec<Vector>,
    pub measurements: Vec<Vector>,
}

impl LinearScenario {
    pub fn model(&self) -> Result<StateSpaceModel> {
        let dt = self.dt;
        let a = Matrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
        let c = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let q = Matrix::from_row_slice(2, 2, &[dt.powi(3) / 3.0, dt * dt / 2.0, dt * dt / 2.0, dt]) * self.accel_density;
        let r = Matrix::from_element(1, 1, self.meas_variance);
        build_linear_model(a, c, q, r)
    }

    pub fn initial_estimate(&self) -> Result<GaussianBelief> {
        GaussianBelief::new(Vector::zeros(2), Matrix::identity(2, 2) * self.initial_variance)
    }

    pub fn simulate(&self, seed: u64, horizon: usize) -> Result<LinearData> {
        let model = self.model()?;
        let q = GaussianBelief::new(Vector::zeros(2), model.process_cov().clone())?;
        let mut x = self.initial_estimate()?.sample(&mut stream_rng(seed, Stream::InitialState))?;
        let mut proc_rng = stream_rng(seed, Stream::ProcessNoise);
        let mut meas_rng = stream_rng(seed, Stream::MeasurementNoise);
        let r = NoiseSpec::gaussian(self.meas_variance);
        let mut data = LinearData {
            truth: Vec::with_capacity(horizon),
            measurements: Vec::with_capacity(horizon),
        };
        for _ in 0..horizon {
            x = model.transition(&x) + q.sample(&mut proc_rng)?;
            let y = model.measure(&x) + sample_noise(&r, 1, &mut meas_rng)?;
            data.truth.push(x.clone());
            data.measurements.push(y);
        }
        Ok(data)
    }

    pub fn run(&self, kind: FilterKind, settings: &FilterSettings, data: &LinearData) -> Result<FilterRun> {
        let model = self.model()?;
        run_filter(kind, settings, &self.initial_estimate()?, |_| Ok(model.clone()), &data.measurements)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigma::TransformParams;

    #[test]
    fn all_filters_agree_on_linear_model() {
        let s = LinearScenario::default();
        let data = s.simulate(1, 50).unwrap();
        let settings = FilterSettings::default();
        let kf = s.run(FilterKind::Kf, &settings, &data).unwrap();
        // The Stein Hessian needs fourth moments, which the 2n-point rule
        // does not integrate exactly.
        let mut df = settings;
        df.nano.quad = TransformParams::gauss_hermite(3);
        for kind in [FilterKind::Ekf, FilterKind::Ukf, FilterKind::Nano, FilterKind::NanoDf] {
            let s_k = if kind == FilterKind::NanoDf { &df } else { &settings };
            let run = s.run(kind, s_k, &data).unwrap();
            for (a, b) in run.estimates.iter().zip(&kf.estimates) {
                assert!((a - b).amax() < 1e-8, "{kind}");
            }
        }
    }
}
