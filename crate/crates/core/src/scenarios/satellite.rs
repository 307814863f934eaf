//! Satellite attitude estimation from gravity and magnetic field readings,
//! with Euler-angle state `θ = (p, r, y)`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{run_filter, stream_rng, FilterKind, FilterRun, FilterSettings, Stream};
use crate::error::{Error, Result};
use crate::gaussian::GaussianBelief;
use crate::linalg::{self, Matrix, Vector};
use crate::model::{sample_noise, NoiseDistribution, NoiseSpec, StateSpaceModel};

pub const GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];
pub const MAGNETIC: [f64; 3] = [27.75, -3.65, 47.21];
const GIMBAL_GUARD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputProfile {
    /// `ω_t = (π/18) sin(2π Δt t) · 1`.
    Sinusoidal,
    /// `ω_t = π/(18√2) · 1`.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Estimate starts at zero.
    Accurate,
    /// Estimate starts at 10° on every axis.
    Biased,
}

/// `M(θ)`, mapping body rates to Euler-angle rates.
pub fn euler_rate_matrix(theta: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let cp = theta.x.cos();
    if cp.abs() < GIMBAL_GUARD {
        return Err(Error::GimbalLock(theta.x));
    }
    Ok(euler_rate_matrix_unchecked(theta))
}

fn euler_rate_matrix_unchecked(theta: &Vector3<f64>) -> Matrix3<f64> {
    let (sp, cp) = theta.x.sin_cos();
    let (sr, cr) = theta.y.sin_cos();
    Matrix3::new(1.0, sp * sr / cp, cr * sp / cp, 0.0, cr, -sr, 0.0, sr / cp, cr / cp)
}

/// `R(θ) = R_p R_r R_y`.
pub fn attitude_matrix(theta: &Vector3<f64>) -> Matrix3<f64> {
    let (sp, cp) = theta.x.sin_cos();
    let (sr, cr) = theta.y.sin_cos();
    let (sy, cy) = theta.z.sin_cos();
    let rp = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rr = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
    let ry = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
    rp * rr * ry
}

fn vec3(v: &Vector) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

/// Truth trajectories keep `|cos p|` above this.
pub const GIMBAL_MARGIN: f64 = 0.1;
const MAX_SIMULATION_ATTEMPTS: usize = 100;

/// Noise-free transition `θ + M(θ) ω Δt`.
pub fn satellite_transition(theta: &Vector, omega: &Vector, dt: f64) -> Result<Vector> {
    linalg::check_dim("satellite state", 3, theta.len())?;
    linalg::check_dim("satellite input", 3, omega.len())?;
    let m = euler_rate_matrix(&vec3(theta))?;
    let step = m * vec3(omega) * dt;
    Ok(theta + Vector::from_column_slice(step.as_slice()))
}

/// `[R(θ)ᵀ g; R(θ)ᵀ b]`.
pub fn satellite_measurement(theta: &Vector) -> Vector {
    let rt = attitude_matrix(&vec3(theta)).transpose();
    let g = rt * Vector3::from(GRAVITY);
    let b = rt * Vector3::from(MAGNETIC);
    Vector::from_row_slice(&[g.x, g.y, g.z, b.x, b.y, b.z])
}

pub fn satellite_input(profile: InputProfile, step: usize, dt: f64) -> Vector {
    let w = match profile {
        InputProfile::Sinusoidal => PI / 18.0 * (2.0 * PI * dt * step as f64).sin(),
        InputProfile::Constant => PI / (18.0 * 2f64.sqrt()),
    };
    Vector::from_element(3, w)
}

/// Scenario parameters. The filter covariances default to the second
/// moments of the simulated noise mixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SatelliteScenario {
    pub dt: f64,
    pub input: InputProfile,
    pub init: InitMode,
    pub process_noise: NoiseSpec,
    pub measurement_noise: NoiseSpec,
    /// Variance of the true initial state around zero.
    pub initial_variance: f64,
    /// Per-axis bias of the biased initial estimate, degrees.
    pub bias_deg: f64,
    /// Filter process variance per axis; `None` uses the mixture variance.
    pub filter_process_variance: Option<f64>,
    /// Filter measurement variance per channel; `None` uses the mixture variance.
    pub filter_measurement_variance: Option<f64>,
}

impl Default for SatelliteScenario {
    fn default() -> Self {
        Self {
            dt: 0.01,
            input: InputProfile::Sinusoidal,
            init: InitMode::Accurate,
            process_noise: NoiseSpec {
                components: vec![
                    (0.9, NoiseDistribution::Laplace { variance: 1e-5 }),
                    (0.1, NoiseDistribution::Laplace { variance: 1e-2 }),
                ],
            },
            measurement_noise: NoiseSpec {
                components: vec![
                    (0.85, NoiseDistribution::Gaussian { variance: 1e-4 }),
                    (
                        0.15,
                        NoiseDistribution::Beta {
                            a: 1.2,
                            b: 1.5,
                            centered: false,
                        },
                    ),
                ],
            },
            initial_variance: 1e-3,
            bias_deg: 10.0,
            filter_process_variance: None,
            filter_measurement_variance: None,
        }
    }
}

/// A simulated satellite trajectory: `truth[t]` is the state after input
/// `inputs[t]`, observed as `measurements[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SatelliteData {
    pub truth: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub measurements: Vec<Vector>,
}

impl SatelliteScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.initial_variance > 0.0) {
            return Err(Error::InvalidParameter("initial variance must be positive".into()));
        }
        self.process_noise.validate()?;
        self.measurement_noise.validate()?;
        for v in [self.filter_process_variance, self.filter_measurement_variance].into_iter().flatten() {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("filter variance must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn filter_process_variance(&self) -> f64 {
        self.filter_process_variance.unwrap_or_else(|| self.process_noise.variance())
    }

    pub fn filter_measurement_variance(&self) -> f64 {
        self.filter_measurement_variance
            .unwrap_or_else(|| self.measurement_noise.variance())
    }

    /// The filter's model for the step driven by `omega`.
    pub fn filter_model(&self, omega: &Vector) -> Result<StateSpaceModel> {
        let (w, dt) = (vec3(omega), self.dt);
        let w2 = w;
        StateSpaceModel::new(
            3,
            6,
            Arc::new(move |x: &Vector| {
                let step = euler_rate_matrix_unchecked(&vec3(x)) * w * dt;
                x + Vector::from_column_slice(step.as_slice())
            }),
            Arc::new(satellite_measurement),
            Matrix::identity(3, 3) * self.filter_process_variance(),
            Matrix::identity(6, 6) * self.filter_measurement_variance(),
        )
        .map(|m| {
            m.with_transition_jacobian(Arc::new(move |x: &Vector| {
                linalg::numerical_jacobian(
                    |v| {
                        let step = euler_rate_matrix_unchecked(&vec3(v)) * w2 * dt;
                        v + Vector::from_column_slice(step.as_slice())
                    },
                    x,
                )
            }))
        })
    }

    pub fn initial_estimate(&self) -> Result<GaussianBelief> {
        let mean = match self.init {
            InitMode::Accurate => Vector::zeros(3),
            InitMode::Biased => Vector::from_element(3, self.bias_deg.to_radians()),
        };
        GaussianBelief::new(mean, Matrix::identity(3, 3) * self.initial_variance)
    }

    /// Simulates `horizon` steps. A trajectory whose pitch comes within
    /// [`GIMBAL_MARGIN`] of the Euler singularity is discarded and redrawn
    /// from the continuing generators, so the result is still a pure
    /// function of the seed.
    pub fn simulate(&self, seed: u64, horizon: usize) -> Result<SatelliteData> {
        self.validate()?;
        let mut init_rng = stream_rng(seed, Stream::InitialState);
        let mut proc_rng = stream_rng(seed, Stream::ProcessNoise);
        let mut meas_rng = stream_rng(seed, Stream::MeasurementNoise);
        let x0 = GaussianBelief::new(Vector::zeros(3), Matrix::identity(3, 3) * self.initial_variance)?;
        let mut last_pitch = 0.0;
        'attempt: for _ in 0..MAX_SIMULATION_ATTEMPTS {
            let mut x = x0.sample(&mut init_rng)?;
            let mut data = SatelliteData {
                truth: Vec::with_capacity(horizon),
                inputs: Vec::with_capacity(horizon),
                measurements: Vec::with_capacity(horizon),
            };
            for t in 0..horizon {
                let omega = satellite_input(self.input, t, self.dt);
                x = satellite_transition(&x, &omega, self.dt)? + sample_noise(&self.process_noise, 3, &mut proc_rng)?;
                if x[0].cos().abs() < GIMBAL_MARGIN {
                    last_pitch = x[0];
                    continue 'attempt;
                }
                let y = satellite_measurement(&x) + sample_noise(&self.measurement_noise, 6, &mut meas_rng)?;
                data.truth.push(x.clone());
                data.inputs.push(omega);
                data.measurements.push(y);
            }
            return Ok(data);
        }
        Err(Error::GimbalLock(last_pitch))
    }

    pub fn run(&self, kind: FilterKind, settings: &FilterSettings, data: &SatelliteData) -> Result<FilterRun> {
        run_filter(
            kind,
            settings,
            &self.initial_estimate()?,
            |t| self.filter_model(&data.inputs[t]),
            &data.measurements,
        )
    }
}

/// Joint RMSE over all three Euler angles, in degrees, with wrapped residuals.
pub fn satellite_rmse_deg(truth: &[Vector], estimates: &[Vector]) -> Result<f64> {
    crate::harness::rmse_wrapped(truth, estimates).map(f64::to_degrees)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_maps_are_identities() {
        assert_eq!(euler_rate_matrix(&Vector3::zeros()).unwrap(), Matrix3::identity());
        assert_eq!(attitude_matrix(&Vector3::zeros()), Matrix3::identity());
        let y = satellite_measurement(&Vector::zeros(3));
        assert_eq!(y.as_slice(), &[0.0, 0.0, -9.81, 27.75, -3.65, 47.21]);
    }

    #[test]
    fn transition_examples() {
        let omega = Vector::from_row_slice(&[0.1, -0.2, 0.3]);
        let out = satellite_transition(&Vector::zeros(3), &omega, 0.01).unwrap();
        assert!((out - &omega * 0.01).amax() < 1e-16);
        let theta = Vector::from_row_slice(&[0.3, -0.4, 1.0]);
        assert_eq!(satellite_transition(&theta, &Vector::zeros(3), 0.01).unwrap(), theta);
        let near = Vector::from_row_slice(&[PI / 2.0 - 1e-4, 0.0, 0.0]);
        assert!(matches!(satellite_transition(&near, &omega, 0.01), Err(Error::GimbalLock(_))));
    }

    #[test]
    fn rate_matrix_entries() {
        let (p, r) = (0.4_f64, -0.7_f64);
        let m = euler_rate_matrix(&Vector3::new(p, r, 0.2)).unwrap();
        let tp = p.tan();
        let expected = [
            [1.0, tp * r.sin(), tp * r.cos()],
            [0.0, r.cos(), -r.sin()],
            [0.0, r.sin() / p.cos(), r.cos() / p.cos()],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[(i, j)] - expected[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn measurement_preserves_field_norms() {
        let theta = Vector::from_row_slice(&[0.5, -1.2, 2.0]);
        let y = satellite_measurement(&theta);
        assert!((y.rows(0, 3).norm() - 9.81).abs() < 1e-12);
        assert!((y.rows(3, 3).norm() - Vector3::from(MAGNETIC).norm()).abs() < 1e-12);
        let r = attitude_matrix(&vec3(&theta));
        assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn input_profiles() {
        assert_eq!(satellite_input(InputProfile::Sinusoidal, 0, 0.01), Vector::zeros(3));
        let c = satellite_input(InputProfile::Constant, 17, 0.01);
        assert!((c[0] - PI / (18.0 * 2f64.sqrt())).abs() < 1e-15);
        let s = satellite_input(InputProfile::Sinusoidal, 25, 0.01);
        assert!((s[1] - PI / 18.0).abs() < 1e-12);
    }

    #[test]
    fn default_filter_noise_matches_mixture_moments() {
        let s = SatelliteScenario::default();
        assert!((s.filter_process_variance() - (0.9 * 1e-5 + 0.1 * 1e-2)).abs() < 1e-15);
        let (a, b) = (1.2, 1.5);
        let mean = a / (a + b);
        let var_beta = a * b / ((a + b) * (a + b) * (a + b + 1.0));
        let second = 0.85 * 1e-4 + 0.15 * (var_beta + mean * mean);
        let expected = second - (0.15 * mean) * (0.15 * mean);
        assert!((s.filter_measurement_variance() - expected).abs() < 1e-15);
    }

    #[test]
    fn simulation_is_seeded() {
        let s = SatelliteScenario::default();
        let a = s.simulate(3, 20).unwrap();
        assert_eq!(a, s.simulate(3, 20).unwrap());
        assert_ne!(a.truth, s.simulate(4, 20).unwrap().truth);
    }

    #[test]
    fn long_trajectories_avoid_the_singularity() {
        for input in [InputProfile::Sinusoidal, InputProfile::Constant] {
            let s = SatelliteScenario { input, ..SatelliteScenario::default() };
            for seed in 0..10 {
                let d = s.simulate(seed, 1000).unwrap();
                assert_eq!(d.truth.len(), 1000);
                assert!(d.truth.iter().all(|x| x[0].cos().abs() >= GIMBAL_MARGIN));
            }
        }
    }
}
