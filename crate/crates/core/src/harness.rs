//! Monte Carlo benchmark runner, metrics and result serialization.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::kf_update;
use crate::error::{Error, Result};
use crate::gaussian::GaussianBelief;
use crate::linalg::{self, wrap_angle, Matrix, Vector};
use crate::manifold::{boxminus, boxplus, so3_exp, so3_log, Block, ManifoldState};
use crate::model::{build_linear_model, GaussianLoss, HessianMode};
use crate::nano::{nano_update, nano_update_iteration, stationarity_residuals, NanoConfig, PdStrategy};
use crate::scenarios::{
    attitude_rmse_deg, satellite_rmse_deg, slam_rmse, AttitudeScenario, FilterKind, FilterSettings, LinearScenario,
    SatelliteScenario, SlamScenario,
};
use crate::sigma::TransformParams;

pub const THREADS_ENV: &str = "NANO_BENCH_THREADS";

/// `√((1/T) Σ ‖p_t − p̂_t‖²)`.
pub fn rmse(truth: &[Vector], estimate: &[Vector]) -> Result<f64> {
    rmse_with(truth, estimate, |_| {})
}

/// [`rmse`] with every residual component wrapped to `(−π, π]`.
pub fn rmse_wrapped(truth: &[Vector], estimate: &[Vector]) -> Result<f64> {
    rmse_with(truth, estimate, |r| r.apply(|a| *a = wrap_angle(*a)))
}

fn rmse_with(truth: &[Vector], estimate: &[Vector], wrap: impl Fn(&mut Vector)) -> Result<f64> {
    if truth.is_empty() || truth.len() != estimate.len() {
        return Err(Error::DimensionMismatch {
            context: "rmse sequence length",
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    let mut acc = 0.0;
    for (p, q) in truth.iter().zip(estimate) {
        linalg::check_dim("rmse vector", p.len(), q.len())?;
        let mut r = p - q;
        wrap(&mut r);
        acc += r.norm_squared();
    }
    Ok((acc / truth.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Linear,
    Satellite,
    Slam,
    AttitudeManifold,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Linear,
        ScenarioKind::Satellite,
        ScenarioKind::Slam,
        ScenarioKind::AttitudeManifold,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            ScenarioKind::Linear => "linear",
            ScenarioKind::Satellite => "satellite",
            ScenarioKind::Slam => "slam",
            ScenarioKind::AttitudeManifold => "attitude-manifold",
        }
    }

    pub fn supports(&self, filter: FilterKind) -> bool {
        match self {
            ScenarioKind::Linear => true,
            ScenarioKind::Satellite | ScenarioKind::Slam => filter != FilterKind::Kf,
            ScenarioKind::AttitudeManifold => matches!(filter, FilterKind::Nano | FilterKind::NanoDf),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.id() == s.trim())
            .ok_or_else(|| Error::Unknown {
                kind: "scenario",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Unknown {
                kind: "output format",
                name: other.to_string(),
            }),
        }
    }
}

/// Everything that determines a benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    pub filters: Vec<FilterKind>,
    pub trials: usize,
    pub seed: u64,
    pub horizon: usize,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    /// Measure per-step wall time. Without it the time column is empty and
    /// output is byte-for-byte reproducible.
    pub timing: bool,
    pub nano: NanoConfig,
    /// Sigma-point rule of the UKF.
    pub quad: TransformParams,
    pub linear: LinearScenario,
    pub satellite: SatelliteScenario,
    pub slam: SlamScenario,
    pub attitude: AttitudeScenario,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioKind::Linear,
            filters: vec![FilterKind::Kf, FilterKind::Nano],
            trials: 1,
            seed: 0,
            horizon: 1000,
            out: None,
            format: OutputFormat::Csv,
            timing: true,
            nano: NanoConfig::default(),
            quad: TransformParams::default(),
            linear: LinearScenario::default(),
            satellite: SatelliteScenario::default(),
            slam: SlamScenario::default(),
            attitude: AttitudeScenario::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if self.filters.is_empty() {
            return Err(Error::InvalidParameter("no filters selected".into()));
        }
        self.nano.validate()?;
        for f in &self.filters {
            if !self.scenario.supports(*f) {
                return Err(Error::Unsupported {
                    filter: f.id().into(),
                    scenario: self.scenario.id().into(),
                });
            }
        }
        Ok(())
    }

    fn settings(&self) -> FilterSettings {
        FilterSettings {
            nano: self.nano,
            quad: self.quad,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub scenario: String,
    pub filter: String,
    pub trial: usize,
    pub seed: u64,
    pub rmse: f64,
    pub time_ms_per_step: Option<f64>,
    pub diverged: bool,
}

fn run_trial(config: &RunConfig, trial: usize) -> Result<Vec<TrialResult>> {
    let seed = config.seed.wrapping_add(trial as u64);
    let settings = config.settings();
    let horizon = config.horizon;
    let mut out = Vec::with_capacity(config.filters.len());
    let mut push = |filter: FilterKind, rmse: f64, run: &crate::scenarios::FilterRun| {
        out.push(TrialResult {
            scenario: config.scenario.id().into(),
            filter: filter.id().into(),
            trial,
            seed,
            rmse,
            time_ms_per_step: config.timing.then(|| run.median_step_ms()).filter(|t| t.is_finite()),
            diverged: run.diverged,
        });
    };
    match config.scenario {
        ScenarioKind::Linear => {
            let data = config.linear.simulate(seed, horizon)?;
            for &f in &config.filters {
                let run = config.linear.run(f, &settings, &data)?;
                push(f, rmse(&data.truth, &run.estimates)?, &run);
            }
        }
        ScenarioKind::Satellite => {
            let data = config.satellite.simulate(seed, horizon)?;
            for &f in &config.filters {
                let run = config.satellite.run(f, &settings, &data)?;
                push(f, satellite_rmse_deg(&data.truth, &run.estimates)?, &run);
            }
        }
        ScenarioKind::Slam => {
            let data = config.slam.simulate(seed, horizon)?;
            for &f in &config.filters {
                let run = config.slam.run(f, &settings, &data)?;
                push(f, slam_rmse(&data.truth, &run.estimates)?, &run);
            }
        }
        ScenarioKind::AttitudeManifold => {
            let data = config.attitude.simulate(seed, horizon)?;
            for &f in &config.filters {
                let run = config.attitude.run(f, &settings, &data)?;
                push(f, attitude_rmse_deg(&data.truth, &run.run.estimates)?, &run.run);
            }
        }
    }
    Ok(out)
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs every (filter, trial) pair. All filters of a trial see the same
/// simulated data. Results are sorted by (filter, trial).
pub fn run_trials(config: &RunConfig) -> Result<Vec<TrialResult>> {
    config.validate()?;
    let work = || -> Result<Vec<Vec<TrialResult>>> {
        (0..config.trials).into_par_iter().map(|t| run_trial(config, t)).collect()
    };
    let nested = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let mut results: Vec<TrialResult> = nested.into_iter().flatten().collect();
    results.sort_by(|a, b| a.filter.cmp(&b.filter).then(a.trial.cmp(&b.trial)));
    Ok(results)
}

/// Across-trial statistics of one filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub scenario: String,
    pub filter: String,
    pub trials: usize,
    pub mean_rmse: f64,
    /// Sample variance of the per-trial RMSE.
    pub variance: f64,
    pub std: f64,
    pub mean_time_ms_per_step: Option<f64>,
    pub diverged: usize,
}

pub fn summarize(results: &[TrialResult]) -> Vec<FilterSummary> {
    let mut keys: Vec<(String, String)> = results.iter().map(|r| (r.scenario.clone(), r.filter.clone())).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(scenario, filter)| {
            let rows: Vec<&TrialResult> = results
                .iter()
                .filter(|r| r.scenario == scenario && r.filter == filter)
                .collect();
            let n = rows.len() as f64;
            let mean = rows.iter().map(|r| r.rmse).sum::<f64>() / n;
            let variance = if rows.len() > 1 {
                rows.iter().map(|r| (r.rmse - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let times: Vec<f64> = rows.iter().filter_map(|r| r.time_ms_per_step).collect();
            FilterSummary {
                scenario,
                filter,
                trials: rows.len(),
                mean_rmse: mean,
                variance,
                std: variance.sqrt(),
                mean_time_ms_per_step: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
                diverged: rows.iter().filter(|r| r.diverged).count(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JsonReport {
    results: Vec<TrialResult>,
    summary: Vec<FilterSummary>,
}

pub const CSV_HEADER: &str = "scenario,filter,trial,seed,rmse,time_ms_per_step,diverged";

pub fn write_results_to<W: Write>(results: &[TrialResult], writer: W, format: OutputFormat) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
            w.write_record(CSV_HEADER.split(','))?;
            for r in results {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        OutputFormat::Json => {
            let report = JsonReport {
                results: results.to_vec(),
                summary: summarize(results),
            };
            let mut writer = writer;
            serde_json::to_writer_pretty(&mut writer, &report)?;
            writeln!(writer)?;
        }
    }
    Ok(())
}

pub fn write_results(results: &[TrialResult], path: &Path, format: OutputFormat) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_results_to(results, std::io::BufWriter::new(file), format)
}

pub fn read_results(path: &Path, format: OutputFormat) -> Result<Vec<TrialResult>> {
    match format {
        OutputFormat::Csv => {
            let mut r = csv::Reader::from_path(path)?;
            Ok(r.deserialize().collect::<std::result::Result<Vec<TrialResult>, _>>()?)
        }
        OutputFormat::Json => {
            let report: JsonReport = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            Ok(report.results)
        }
    }
}

/// Human-readable summary table.
pub fn format_summary(summary: &[FilterSummary]) -> String {
    let mut out = format!(
        "{:<18} {:<8} {:>6} {:>12} {:>12} {:>12} {:>9}\n",
        "scenario", "filter", "trials", "mean_rmse", "std", "ms/step", "diverged"
    );
    for s in summary {
        let time = s.mean_time_ms_per_step.map_or_else(|| "-".to_string(), |t| format!("{t:.4}"));
        out.push_str(&format!(
            "{:<18} {:<8} {:>6} {:>12.6} {:>12.6} {:>12} {:>9}\n",
            s.scenario, s.filter, s.trials, s.mean_rmse, s.std, time, s.diverged
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_spd<R: Rng>(rng: &mut R, n: usize, floor: f64) -> Matrix {
    let a = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + Matrix::identity(n, n) * floor
}

fn random_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    match f() {
        Ok((passed, detail)) => CheckOutcome { name, passed, detail },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// A fast invariant suite: Kalman equivalence, quadrature exactness,
/// SO(3) round trips, positive definiteness, stationarity and determinism.
pub fn validate() -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut out = Vec::new();

    out.push(check("kf-equivalence", || {
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let n = rng.random_range(1..=4);
            let m = rng.random_range(1..=4);
            let c = Matrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
            let r = random_spd(&mut rng, m, 0.1);
            let prior = GaussianBelief::new(random_vec(&mut rng, n, 2.0), random_spd(&mut rng, n, 0.1))?;
            let y = random_vec(&mut rng, m, 3.0);
            let model = build_linear_model(Matrix::identity(n, n), c.clone(), Matrix::identity(n, n), r.clone())?;
            let loss = model.loss()?;
            let kf = kf_update(&prior, &c, &r, &y)?;
            let start = GaussianBelief::new(random_vec(&mut rng, n, 5.0), random_spd(&mut rng, n, 0.1))?;
            let one = nano_update_iteration(&start, &prior, &loss, &y, &NanoConfig::default())?;
            worst = worst
                .max((one.mean() - kf.mean()).amax())
                .max((one.cov() - kf.cov()).amax());
        }
        Ok((worst <= 1e-10, format!("max abs diff {worst:.2e}")))
    }));

    out.push(check("sigma-affine-exactness", || {
        let mut worst: f64 = 0.0;
        for params in [TransformParams::default(), TransformParams::cubature(), TransformParams::gauss_hermite(3)] {
            let n = 3;
            let mu = random_vec(&mut rng, n, 1.0);
            let sigma = random_spd(&mut rng, n, 0.2);
            let a = Matrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
            let b = random_vec(&mut rng, 2, 1.0);
            let (m, p) = params.points(&mu, &sigma)?.moment_match(|x| &a * x + &b)?;
            worst = worst
                .max((m - (&a * &mu + &b)).amax())
                .max((p - &a * &sigma * a.transpose()).amax());
        }
        Ok((worst <= 1e-12, format!("max abs diff {worst:.2e}")))
    }));

    out.push(check("so3-round-trip", || {
        let mut worst: f64 = 0.0;
        for _ in 0..500 {
            let axis = nalgebra::Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if axis.norm() < 1e-3 {
                continue;
            }
            let r = axis.normalize() * rng.random_range(0.0..std::f64::consts::PI - 0.1);
            worst = worst.max((so3_log(&so3_exp(&r))? - r).amax());
        }
        Ok((worst <= 1e-9, format!("max error {worst:.2e}")))
    }));

    out.push(check("boxplus-inversion", || {
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let x = ManifoldState::new(vec![
                Block::Rotation(so3_exp(&nalgebra::Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ))),
                Block::Euclidean(random_vec(&mut rng, 3, 5.0)),
            ]);
            let mut d = random_vec(&mut rng, 6, 1.0);
            if d.norm() > 1.0 {
                d /= d.norm();
            }
            worst = worst.max((boxminus(&boxplus(&x, &d)?, &x)? - d).amax());
        }
        Ok((worst <= 1e-9, format!("max error {worst:.2e}")))
    }));

    out.push(check("pd-preservation", || {
        let mut failures = 0;
        for _ in 0..300 {
            let prior = GaussianBelief::new(random_vec(&mut rng, 2, 2.0), random_spd(&mut rng, 2, 0.05))?;
            let loss = GaussianLoss::new(
                std::sync::Arc::new(|x: &Vector| Vector::from_row_slice(&[x[0] * x[1], x[0].sin() + x[1].powi(3)])),
                random_spd(&mut rng, 2, 0.05),
            )?;
            let y = random_vec(&mut rng, 2, 3.0);
            match nano_update(&prior, &loss, &y, &NanoConfig::default()) {
                Ok((post, _)) if post.cholesky().is_ok() => {}
                _ => failures += 1,
            }
        }
        Ok((failures == 0, format!("{failures} failures in 300 updates")))
    }));

    out.push(check("stationarity", || {
        let prior = GaussianBelief::scalar(0.5, 0.2)?;
        let loss = GaussianLoss::new(
            std::sync::Arc::new(|x: &Vector| x.map(|a| a * a)),
            Matrix::from_element(1, 1, 0.1),
        )?
        .with_jacobian(std::sync::Arc::new(|x: &Vector| Matrix::from_element(1, 1, 2.0 * x[0])));
        let cfg = NanoConfig {
            pd_strategy: PdStrategy::CholeskyFactor,
            max_iters: 500,
            gamma: 1e-8,
            quad: TransformParams::gauss_hermite(20),
            ..NanoConfig::default()
        };
        let y = Vector::from_element(1, 1.0);
        let (post, trace) = nano_update(&prior, &loss, &y, &cfg)?;
        let (rm, rc) = stationarity_residuals(&post, &prior, &loss, &y, &cfg.quad, HessianMode::Exact)?;
        let worst = rm.amax().max(rc.amax());
        Ok((trace.converged && worst <= 1e-6, format!("residual {worst:.2e}")))
    }));

    out.push(check("harness-determinism", || {
        let config = RunConfig {
            scenario: ScenarioKind::Linear,
            filters: vec![FilterKind::Kf, FilterKind::Nano],
            trials: 2,
            horizon: 50,
            timing: false,
            ..RunConfig::default()
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_results_to(&run_trials(&config)?, &mut a, OutputFormat::Csv)?;
        write_results_to(&run_trials(&config)?, &mut b, OutputFormat::Csv)?;
        let results = run_trials(&config)?;
        let (kf, nano): (Vec<_>, Vec<_>) = results.iter().partition(|r| r.filter == "kf");
        let gap = kf
            .iter()
            .zip(&nano)
            .map(|(x, y)| (x.rmse - y.rmse).abs())
            .fold(0.0, f64::max);
        Ok((a == b && gap <= 1e-8, format!("identical bytes {}, rmse gap {gap:.2e}", a == b)))
    }));

    out
}
