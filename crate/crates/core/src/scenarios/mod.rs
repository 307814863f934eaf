//! Benchmark scenarios and the per-trial filter runner they share.

mod attitude;
mod linear;
mod satellite;
mod slam;

pub use attitude::*;
pub use linear::*;
pub use satellite::*;
pub use slam::*;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{ekf_predict, ekf_update, kf_predict, kf_update, ukf_predict, ukf_update};
use crate::error::{Error, Result};
use crate::gaussian::GaussianBelief;
use crate::linalg::Vector;
use crate::model::StateSpaceModel;
use crate::nano::{nano_predict, nano_update, DerivativeMode, NanoConfig};
use crate::sigma::TransformParams;

/// Independent random sub-streams of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    InitialState = 0,
    ProcessNoise = 1,
    MeasurementNoise = 2,
    Map = 3,
}

/// Generator for one sub-stream of a trial seed.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    Kf,
    Ekf,
    Ukf,
    Nano,
    NanoDf,
}

impl FilterKind {
    pub const ALL: [FilterKind; 5] = [
        FilterKind::Kf,
        FilterKind::Ekf,
        FilterKind::Ukf,
        FilterKind::Nano,
        FilterKind::NanoDf,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            FilterKind::Kf => "kf",
            FilterKind::Ekf => "ekf",
            FilterKind::Ukf => "ukf",
            FilterKind::Nano => "nano",
            FilterKind::NanoDf => "nano-df",
        }
    }

    /// NANO settings with the derivative mode this filter implies.
    pub fn nano_config(&self, base: &NanoConfig) -> NanoConfig {
        let derivative_mode = match self {
            FilterKind::NanoDf => DerivativeMode::DerivativeFree,
            _ => DerivativeMode::Derivative,
        };
        NanoConfig {
            derivative_mode,
            ..*base
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.id() == s.trim())
            .ok_or_else(|| Error::Unknown {
                kind: "filter",
                name: s.to_string(),
            })
    }
}

/// Quadrature and NANO settings shared by all filters of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSettings {
    pub nano: NanoConfig,
    /// Sigma-point rule of the UKF.
    pub quad: TransformParams,
}

/// Output of one filter on one simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    /// One estimate per step; frozen at the last valid value after divergence.
    pub estimates: Vec<Vector>,
    /// Wall time of each successful step, in milliseconds.
    pub step_ms: Vec<f64>,
    pub diverged: bool,
}

impl FilterRun {
    pub fn median_step_ms(&self) -> f64 {
        median(&self.step_ms)
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Records step outcomes, freezing the estimate on the first failure.
pub(crate) struct RunRecorder {
    run: FilterRun,
    last: Vector,
}

impl RunRecorder {
    pub(crate) fn new(initial: Vector, horizon: usize) -> Self {
        Self {
            run: FilterRun {
                estimates: Vec::with_capacity(horizon),
                step_ms: Vec::with_capacity(horizon),
                diverged: false,
            },
            last: initial,
        }
    }

    pub(crate) fn diverged(&self) -> bool {
        self.run.diverged
    }

    pub(crate) fn record(&mut self, outcome: Result<Vector>, started: Instant) {
        let elapsed = started.elapsed().as_secs_f64() * 1e3;
        match outcome {
            Ok(est) if est.iter().all(|v| v.is_finite()) => {
                self.run.step_ms.push(elapsed);
                self.last = est;
            }
            _ => self.run.diverged = true,
        }
        self.run.estimates.push(self.last.clone());
    }

    pub(crate) fn hold(&mut self) {
        self.run.estimates.push(self.last.clone());
    }

    pub(crate) fn finish(self) -> FilterRun {
        self.run
    }
}

/// Runs `update` with `cfg`; a derivative-free update whose information
/// matrix loses positive definiteness is redone in derivative mode.
pub fn with_derivative_fallback<T>(cfg: &NanoConfig, update: impl Fn(&NanoConfig) -> Result<T>) -> Result<T> {
    match update(cfg) {
        Err(Error::NotPositiveDefinite(_)) if cfg.derivative_mode == DerivativeMode::DerivativeFree => {
            update(&NanoConfig {
                derivative_mode: DerivativeMode::Derivative,
                ..*cfg
            })
        }
        other => other,
    }
}

/// One predict/update cycle of a Euclidean filter.
pub fn filter_step(
    kind: FilterKind,
    settings: &FilterSettings,
    belief: &GaussianBelief,
    model: &StateSpaceModel,
    y: &Vector,
) -> Result<GaussianBelief> {
    match kind {
        FilterKind::Kf => {
            let (a, c) = model.linear_parts().ok_or_else(|| Error::Unsupported {
                filter: kind.id().into(),
                scenario: "nonlinear model".into(),
            })?;
            let pred = kf_predict(belief, a, model.process_cov())?;
            kf_update(&pred, c, model.meas_cov(), y)
        }
        FilterKind::Ekf => ekf_update(&ekf_predict(belief, model)?, model, y),
        FilterKind::Ukf => ukf_update(&ukf_predict(belief, model, &settings.quad)?, model, y, &settings.quad),
        FilterKind::Nano | FilterKind::NanoDf => {
            let cfg = kind.nano_config(&settings.nano);
            let pred = nano_predict(belief, model, &cfg.quad)?;
            let loss = model.loss()?;
            with_derivative_fallback(&cfg, |c| Ok(nano_update(&pred, &loss, y, c)?.0))
        }
    }
}

/// Runs a Euclidean filter over `measurements`, with `model_at(t)` the
/// model that maps the state at `t` to `t + 1` and explains `measurements[t]`.
pub fn run_filter<M>(
    kind: FilterKind,
    settings: &FilterSettings,
    init: &GaussianBelief,
    model_at: M,
    measurements: &[Vector],
) -> Result<FilterRun>
where
    M: Fn(usize) -> Result<StateSpaceModel>,
{
    if kind == FilterKind::Kf && !measurements.is_empty() && model_at(0)?.linear_parts().is_none() {
        return Err(Error::Unsupported {
            filter: kind.id().into(),
            scenario: "nonlinear model".into(),
        });
    }
    let mut rec = RunRecorder::new(init.mean().clone(), measurements.len());
    let mut belief = init.clone();
    for (t, y) in measurements.iter().enumerate() {
        if rec.diverged() {
            rec.hold();
            continue;
        }
        let model = model_at(t)?;
        let started = Instant::now();
        let outcome = filter_step(kind, settings, &belief, &model, y).map(|b| {
            let mean = b.mean().clone();
            belief = b;
            mean
        });
        rec.record(outcome, started);
    }
    Ok(rec.finish())
}
