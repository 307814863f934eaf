//! Acceptance suite. Each test prints one PASS/FAIL line straight to the
//! terminal (bypassing output capture) and then asserts its verdict.

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nano_core::baselines::kf_update;
use nano_core::gaussian::{inverse_fisher_blocks, kl_divergence, log_partition, natural_fisher, NaturalParams};
use nano_core::harness::{run_trials, write_results_to, OutputFormat, RunConfig, ScenarioKind};
use nano_core::manifold::{
    boxminus, boxplus, compose_and_reset, error_state_nano_update, so3_exp, so3_log, Block, ErrorBelief,
    ManifoldLoss, ManifoldState,
};
use nano_core::model::build_linear_model;
use nano_core::nano::{expected_gradient, nano_update_iteration, DerivativeMode};
use nano_core::scenarios::{
    satellite_rmse_deg, slam_rmse, AttitudeScenario, FilterKind, FilterSettings, InitMode, InputProfile,
    SatelliteScenario, SlamScenario,
};
use nano_core::{
    nano_update, GaussianBelief, GaussianLoss, Matrix, NanoConfig, PdStrategy, TransformParams, Vector,
};

fn report(id: u32, name: &str, passed: bool, detail: &str, elapsed: Duration, budget: Duration) -> bool {
    let in_time = elapsed <= budget;
    let ok = passed && in_time;
    let line = format!(
        "criterion {id:>2} {name:<28} {}  {detail}  [{:.2}s of {}s]\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    ok
}

fn v(x: &[f64]) -> Vector {
    Vector::from_row_slice(x)
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Matrix {
    let a = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + Matrix::identity(n, n) * floor
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// `ℓ = (y − x²)²/(2R)` with prior `N(0.5, 0.2)`, `y = 1`, `R = 0.1`.
fn square_problem() -> (GaussianBelief, GaussianLoss, Vector) {
    let loss = GaussianLoss::new(Arc::new(|x: &Vector| x.map(|a| a * a)), Matrix::from_element(1, 1, 0.1))
        .unwrap()
        .with_jacobian(Arc::new(|x: &Vector| Matrix::from_element(1, 1, 2.0 * x[0])));
    (GaussianBelief::scalar(0.5, 0.2).unwrap(), loss, v(&[1.0]))
}

#[test]
fn c01_kf_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = NanoConfig::default();
    let mut worst: f64 = 0.0;
    let mut all_converged = true;
    for _ in 0..100 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=4);
        let c = Matrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
        let r = random_spd(&mut rng, m, 0.1);
        let prior = GaussianBelief::new(random_vec(&mut rng, n, 2.0), random_spd(&mut rng, n, 0.1)).unwrap();
        let y = random_vec(&mut rng, m, 3.0);
        let loss = build_linear_model(Matrix::identity(n, n), c.clone(), Matrix::identity(n, n), r.clone())
            .unwrap()
            .loss()
            .unwrap();
        let kf = kf_update(&prior, &c, &r, &y).unwrap();
        for _ in 0..5 {
            let init = GaussianBelief::new(random_vec(&mut rng, n, 10.0), random_spd(&mut rng, n, 0.01)).unwrap();
            let one = nano_update_iteration(&init, &prior, &loss, &y, &cfg).unwrap();
            worst = worst.max((one.mean() - kf.mean()).amax()).max((one.cov() - kf.cov()).amax());
        }
        let two = NanoConfig { max_iters: 2, ..cfg };
        let (post, trace) = nano_update(&prior, &loss, &y, &two).unwrap();
        all_converged &= trace.converged && (post.mean() - kf.mean()).amax() <= 1e-10;
    }
    let ok = worst <= 1e-10 && all_converged;
    let detail = format!("max abs diff {worst:.2e}, converged after one more step: {all_converged}");
    assert!(report(1, "kf-equivalence", ok, &detail, start.elapsed(), Duration::from_secs(5)), "{detail}");
}

/// Duplication matrix `D` with `vec(A) = D vech(A)` for symmetric `A`.
fn duplication(n: usize) -> Matrix {
    let k = n * (n + 1) / 2;
    let mut d = Matrix::zeros(n * n, k);
    let mut col = 0;
    for j in 0..n {
        for i in j..n {
            d[(i + j * n, col)] = 1.0;
            d[(j + i * n, col)] = 1.0;
            col += 1;
        }
    }
    d
}

fn unpack(n: usize, theta: &Vector) -> (Vector, Matrix) {
    let mean = theta.rows(0, n).into_owned();
    let mut info = Matrix::zeros(n, n);
    let mut idx = n;
    for j in 0..n {
        for i in j..n {
            info[(i, j)] = theta[idx];
            info[(j, i)] = theta[idx];
            idx += 1;
        }
    }
    (mean, info)
}

#[test]
fn c02_fisher_geometry() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for n in 1..=3 {
        let k = n * (n + 1) / 2;
        let dim = n + k;
        for _ in 0..20 {
            let belief = GaussianBelief::new(random_vec(&mut rng, n, 1.0), random_spd(&mut rng, n, 0.5)).unwrap();
            let info = belief.precision().unwrap();
            let mut theta0 = Vector::zeros(dim);
            theta0.rows_mut(0, n).copy_from(belief.mean());
            let mut idx = n;
            for j in 0..n {
                for i in j..n {
                    theta0[idx] = info[(i, j)];
                    idx += 1;
                }
            }
            let kl = |theta: &Vector| {
                let (m, s) = unpack(n, theta);
                let q = GaussianBelief::new(m, s.try_inverse().unwrap()).unwrap();
                kl_divergence(&q, &belief).unwrap()
            };
            let h = 1e-3;
            let mut hess = Matrix::zeros(dim, dim);
            for a in 0..dim {
                for b in 0..dim {
                    let e = |i: usize| Vector::from_fn(dim, |r, _| if r == i { h } else { 0.0 });
                    let (ea, eb) = (e(a), e(b));
                    hess[(a, b)] = (kl(&(&theta0 + &ea + &eb)) - kl(&(&theta0 + &ea - &eb)) - kl(&(&theta0 - &ea + &eb))
                        + kl(&(&theta0 - &ea - &eb)))
                        / (4.0 * h * h);
                }
            }
            let (p, inv_info_block) = inverse_fisher_blocks(&belief).unwrap();
            let d = duplication(n);
            let d_plus = (d.transpose() * &d).try_inverse().unwrap() * d.transpose();
            let mut inv = Matrix::zeros(dim, dim);
            inv.view_mut((0, 0), (n, n)).copy_from(&p);
            inv.view_mut((n, n), (k, k)).copy_from(&(&d_plus * inv_info_block * d_plus.transpose()));
            let err = (inv * hess - Matrix::identity(dim, dim)).norm() / (dim as f64).sqrt();
            worst = worst.max(err);
        }
    }
    let detail = format!("max relative error {worst:.2e}");
    assert!(report(2, "fisher-geometry", worst <= 1e-3, &detail, start.elapsed(), Duration::from_secs(10)), "{detail}");
}

#[test]
fn c03_log_partition_hessian() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p = NaturalParams::from_moments(rng.random_range(-2.0..2.0), rng.random_range(0.2..3.0)).unwrap();
        let psi = |d: [f64; 2]| log_partition(&NaturalParams::new([p.theta[0] + d[0], p.theta[1] + d[1]]).unwrap()).unwrap();
        let h = [1e-3 * (1.0 + p.theta[0].abs()), 1e-3 * p.theta[1].abs()];
        let mut fd = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                let step = |sa: f64, sb: f64| {
                    let mut d = [0.0; 2];
                    d[a] += sa * h[a];
                    d[b] += sb * h[b];
                    psi(d)
                };
                fd[a][b] = (step(1.0, 1.0) - step(1.0, -1.0) - step(-1.0, 1.0) + step(-1.0, -1.0)) / (4.0 * h[a] * h[b]);
            }
        }
        let exact = natural_fisher(&p);
        let scale = exact.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        for a in 0..2 {
            for b in 0..2 {
                worst = worst.max((fd[a][b] - exact[a][b]).abs() / scale);
            }
        }
    }
    let detail = format!("max relative error {worst:.2e}");
    assert!(report(3, "log-partition-hessian", worst <= 1e-4, &detail, start.elapsed(), Duration::from_secs(1)), "{detail}");
}

#[test]
fn c04_sigma_point_exactness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut affine: f64 = 0.0;
    for params in [TransformParams::default(), TransformParams::cubature(), TransformParams::gauss_hermite(3)] {
        for n in 1..=4 {
            let mu = random_vec(&mut rng, n, 2.0);
            let sigma = random_spd(&mut rng, n, 0.1);
            let a = Matrix::from_fn(3, n, |_, _| rng.random_range(-2.0..2.0));
            let b = random_vec(&mut rng, 3, 1.0);
            let (m, p) = params.points(&mu, &sigma).unwrap().moment_match(|x| &a * x + &b).unwrap();
            affine = affine.max((m - (&a * &mu + &b)).amax()).max((p - &a * &sigma * a.transpose()).amax());
        }
    }
    // Moments of N(μ, s²) by m_k = μ m_{k−1} + (k−1) s² m_{k−2}.
    let (mu, s2) = (0.4, 1.7);
    let mut moments = vec![1.0, mu];
    for k in 2..18 {
        moments.push(mu * moments[k - 1] + (k - 1) as f64 * s2 * moments[k - 2]);
    }
    let mut poly: f64 = 0.0;
    for m in 1..=9 {
        let set = TransformParams::gauss_hermite(m)
            .points(&v(&[mu]), &Matrix::from_element(1, 1, s2))
            .unwrap();
        for deg in 0..2 * m {
            let coeffs: Vec<f64> = (0..=deg).map(|_| rng.random_range(0.5..1.5)).collect();
            let exact: f64 = coeffs.iter().zip(&moments).map(|(c, m)| c * m).sum();
            let est: f64 = set
                .expect(|x| v(&[coeffs.iter().enumerate().map(|(k, c)| c * x[0].powi(k as i32)).sum::<f64>()]))
                .unwrap()[0];
            poly = poly.max((est - exact).abs() / exact.abs());
        }
    }
    let ok = affine <= 1e-12 && poly <= 1e-10;
    let detail = format!("affine max abs diff {affine:.2e}, polynomial max rel err {poly:.2e}");
    assert!(report(4, "sigma-point-exactness", ok, &detail, start.elapsed(), Duration::from_secs(5)), "{detail}");
}

fn random_nonlinear_problem(rng: &mut ChaCha8Rng) -> (GaussianBelief, GaussianBelief, GaussianLoss, Vector) {
    let n = rng.random_range(1..=3);
    let w = Matrix::from_fn(2, n, |_, _| rng.random_range(-1.5..1.5));
    let w2 = w.clone();
    let h = move |x: &Vector| {
        let z = &w2 * x;
        v(&[z[0].sin() + z[1] * z[1], z[0] * z[1] + z[1].powi(3) / 3.0])
    };
    let loss = GaussianLoss::new(Arc::new(h), random_spd(rng, 2, 0.01)).unwrap();
    let prior = GaussianBelief::new(random_vec(rng, n, 2.0), random_spd(rng, n, 0.01)).unwrap();
    let iter = GaussianBelief::new(random_vec(rng, n, 2.0), random_spd(rng, n, 0.01)).unwrap();
    (prior, iter, loss, random_vec(rng, 2, 4.0))
}

#[test]
fn c05_pd_preservation() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = [0usize; 2];
    for (slot, (strategy, count)) in [(PdStrategy::GaussNewton, 10_000), (PdStrategy::CholeskyFactor, 1_000)]
        .into_iter()
        .enumerate()
    {
        let cfg = NanoConfig {
            pd_strategy: strategy,
            ..NanoConfig::default()
        };
        for _ in 0..count {
            let (prior, iter, loss, y) = random_nonlinear_problem(&mut rng);
            match nano_update_iteration(&iter, &prior, &loss, &y, &cfg) {
                Ok(next) if next.cholesky().is_ok() => {}
                _ => failures[slot] += 1,
            }
        }
    }
    let ok = failures == [0, 0];
    let detail = format!(
        "gauss-newton failures {}/10000, cholesky-factor failures {}/1000",
        failures[0], failures[1]
    );
    assert!(report(5, "pd-preservation", ok, &detail, start.elapsed(), Duration::from_secs(60)), "{detail}");
}

/// Midpoint rule with 2000 nodes over ±12 standard deviations.
fn grid_expect(mean: f64, var: f64, f: impl Fn(f64) -> (f64, f64)) -> (f64, f64) {
    let nodes = 2000;
    let sd = var.sqrt();
    let (lo, hi) = (mean - 12.0 * sd, mean + 12.0 * sd);
    let dx = (hi - lo) / nodes as f64;
    let mut acc = (0.0, 0.0);
    for i in 0..nodes {
        let x = lo + (i as f64 + 0.5) * dx;
        let w = (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt() * dx;
        let (a, b) = f(x);
        acc.0 += w * a;
        acc.1 += w * b;
    }
    acc
}

#[test]
fn c06_stationarity() {
    let start = Instant::now();
    let (prior, loss, y) = square_problem();
    let cfg = NanoConfig {
        pd_strategy: PdStrategy::CholeskyFactor,
        quad: TransformParams::gauss_hermite(20),
        max_iters: 1000,
        ..NanoConfig::default()
    };
    let (post, trace) = nano_update(&prior, &loss, &y, &cfg).unwrap();
    let (m, p) = (post.mean()[0], post.cov()[(0, 0)]);
    // Exact derivatives of (1 − x²)²/0.2.
    let (grad, hess) = grid_expect(m, p, |x| ((x * x - 1.0) * 2.0 * x / 0.1, (6.0 * x * x - 2.0) / 0.1));
    let mean_res = (m - 0.5 + 0.2 * grad).abs();
    let cov_res = (1.0 / p - 1.0 / 0.2 - hess).abs();
    let bound = 10.0 * cfg.gamma;
    let ok = trace.converged && mean_res <= bound && cov_res <= bound;
    let detail = format!(
        "converged {} in {} iterations, residuals {mean_res:.2e} / {cov_res:.2e} (bound {bound:.0e})",
        trace.converged, trace.iterations_run
    );
    assert!(report(6, "stationarity", ok, &detail, start.elapsed(), Duration::from_secs(10)), "{detail}");
}

fn satellite_means(s: &SatelliteScenario, trials: u64) -> ([f64; 3], Vec<[f64; 3]>) {
    let settings = FilterSettings::default();
    let mut per_trial = Vec::new();
    for t in 0..trials {
        let data = s.simulate(t, 1000).unwrap();
        let mut row = [0.0; 3];
        for (i, k) in [FilterKind::Ekf, FilterKind::Ukf, FilterKind::Nano].into_iter().enumerate() {
            let run = s.run(k, &settings, &data).unwrap();
            row[i] = satellite_rmse_deg(&data.truth, &run.estimates).unwrap();
        }
        per_trial.push(row);
    }
    let mut mean = [0.0; 3];
    for row in &per_trial {
        for i in 0..3 {
            mean[i] += row[i] / trials as f64;
        }
    }
    (mean, per_trial)
}

#[test]
fn c07_satellite_benchmark() {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for input in [InputProfile::Sinusoidal, InputProfile::Constant] {
        let s = SatelliteScenario {
            input,
            ..SatelliteScenario::default()
        };
        let ([ekf, ukf, nano], _) = satellite_means(&s, 20);
        let ratio = nano / ekf;
        let gap = (ekf - ukf).abs() / ekf;
        ok &= ratio < 0.85 && gap < 0.05;
        parts.push(format!("{input:?}: nano/ekf {ratio:.3}, |ekf-ukf|/ekf {gap:.3}"));
    }
    let biased = SatelliteScenario {
        init: InitMode::Biased,
        ..SatelliteScenario::default()
    };
    let (_, rows) = satellite_means(&biased, 20);
    let wins = rows.iter().filter(|r| r[2] < r[0]).count();
    ok &= wins >= 16;
    parts.push(format!("biased init nano wins {wins}/20"));
    let detail = parts.join("; ");
    assert!(report(7, "satellite-benchmark", ok, &detail, start.elapsed(), Duration::from_secs(300)), "{detail}");
}

#[test]
fn c08_slam() {
    let start = Instant::now();
    let s = SlamScenario::default();
    let settings = FilterSettings::default();
    let (mut ekf, mut nano) = (0.0, 0.0);
    let mut nano_diverged = 0;
    for seed in 0..5 {
        let data = s.simulate(seed, 2000).unwrap();
        let e = s.run(FilterKind::Ekf, &settings, &data).unwrap();
        let n = s.run(FilterKind::Nano, &settings, &data).unwrap();
        ekf += slam_rmse(&data.truth, &e.estimates).unwrap() / 5.0;
        nano += slam_rmse(&data.truth, &n.estimates).unwrap() / 5.0;
        nano_diverged += n.diverged as usize;
    }
    let ok = s.landmarks == 20 && nano <= ekf && nano_diverged == 0;
    let detail = format!("mean rmse nano {nano:.3} m, ekf {ekf:.3} m, nano divergences {nano_diverged}");
    assert!(report(8, "slam", ok, &detail, start.elapsed(), Duration::from_secs(300)), "{detail}");
}

#[test]
fn c09_manifold() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let unit = |rng: &mut ChaCha8Rng| loop {
        let a = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if a.norm() > 1e-2 && a.norm() <= 1.0 {
            return a.normalize();
        }
    };
    let mut round: f64 = 0.0;
    for _ in 0..1000 {
        let r = unit(&mut rng) * rng.random_range(0.0..std::f64::consts::PI - 1e-3);
        round = round.max((so3_log(&so3_exp(&r)).unwrap() - r).amax());
    }
    let mut boxes: f64 = 0.0;
    for _ in 0..1000 {
        let x = ManifoldState::new(vec![
            Block::Rotation(so3_exp(&(unit(&mut rng) * rng.random_range(0.0..3.0)))),
            Block::Euclidean(random_vec(&mut rng, 2, 10.0)),
            Block::Rotation(so3_exp(&(unit(&mut rng) * rng.random_range(0.0..3.0)))),
        ]);
        let mut d = random_vec(&mut rng, 8, 1.0);
        d.rows_mut(0, 3).copy_from(&(unit(&mut rng) * rng.random_range(0.0..3.0)));
        boxes = boxes.max((boxminus(&boxplus(&x, &d).unwrap(), &x).unwrap() - d).amax());
    }

    let h = |x: &Vector| v(&[x[0] * x[1] - x[2], x[0].cos() + x[2] * x[2]]);
    let r = Matrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]);
    let plain = GaussianLoss::new(Arc::new(h), r.clone()).unwrap();
    let mloss = ManifoldLoss::new(Arc::new(move |x: &ManifoldState| h(x.euclidean_block(0).unwrap())), r).unwrap();
    let mut euclid: f64 = 0.0;
    for _ in 0..20 {
        let mean = random_vec(&mut rng, 3, 2.0);
        let cov = random_spd(&mut rng, 3, 0.05);
        let y = random_vec(&mut rng, 2, 3.0);
        let cfg = NanoConfig::default();
        let (p_post, _) = nano_update(&GaussianBelief::new(mean.clone(), cov.clone()).unwrap(), &plain, &y, &cfg).unwrap();
        let belief = ErrorBelief::centered(ManifoldState::euclidean(mean), cov).unwrap();
        let (m_post, _) = error_state_nano_update(&belief, &mloss, &y, &cfg).unwrap();
        let composed = compose_and_reset(&m_post).unwrap();
        euclid = euclid
            .max((composed.nominal.euclidean_block(0).unwrap() - p_post.mean()).amax())
            .max((composed.delta.cov() - p_post.cov()).amax());
    }

    let scenario = AttitudeScenario::default();
    let settings = FilterSettings::default();
    let (mut max_err, mut max_orth, mut diverged) = (0.0f64, 0.0f64, 0);
    for seed in 0..10 {
        let data = scenario.simulate(seed, 1000).unwrap();
        let run = scenario.run(FilterKind::Nano, &settings, &data).unwrap();
        diverged += run.run.diverged as usize;
        max_err = run.error_after.iter().fold(max_err, |m, e| m.max(*e));
        max_orth = max_orth.max(run.max_orthogonality_error);
    }
    let max_err_deg = max_err.to_degrees();
    let ok = round <= 1e-9 && boxes <= 1e-9 && euclid <= 1e-12 && diverged == 0 && max_err_deg < 5.0 && max_orth < 1e-9;
    let detail = format!(
        "exp/log {round:.1e}, boxplus {boxes:.1e}, euclidean {euclid:.1e}, attitude max error {max_err_deg:.2} deg, orthogonality {max_orth:.1e}, divergences {diverged}"
    );
    assert!(report(9, "manifold", ok, &detail, start.elapsed(), Duration::from_secs(60)), "{detail}");
}

#[test]
fn c10_derivative_free_consistency() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let unscented = TransformParams::default();
    let mut grad_gap: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=4);
        let c = Matrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
        let loss = build_linear_model(Matrix::identity(n, n), c, Matrix::identity(n, n), random_spd(&mut rng, m, 0.1))
            .unwrap()
            .loss()
            .unwrap();
        let belief = GaussianBelief::new(random_vec(&mut rng, n, 2.0), random_spd(&mut rng, n, 0.1)).unwrap();
        let y = random_vec(&mut rng, m, 3.0);
        let a = expected_gradient(&belief, &loss, &y, &unscented, DerivativeMode::Derivative).unwrap();
        let b = expected_gradient(&belief, &loss, &y, &unscented, DerivativeMode::DerivativeFree).unwrap();
        grad_gap = grad_gap.max((a - b).amax());
    }
    let (prior, loss, y) = square_problem();
    let base = NanoConfig {
        pd_strategy: PdStrategy::CholeskyFactor,
        quad: TransformParams::gauss_hermite(9),
        max_iters: 1000,
        gamma: 1e-8,
        ..NanoConfig::default()
    };
    let df = NanoConfig {
        derivative_mode: DerivativeMode::DerivativeFree,
        ..base
    };
    let (pd, _) = nano_update(&prior, &loss, &y, &base).unwrap();
    let (pf, _) = nano_update(&prior, &loss, &y, &df).unwrap();
    let fixed_gap = (pd.mean() - pf.mean()).amax().max((pd.cov() - pf.cov()).amax());
    let ok = grad_gap <= 1e-10 && fixed_gap <= 1e-3;
    let detail = format!("mean-term gap {grad_gap:.2e}, fixed-point gap {fixed_gap:.2e}");
    assert!(report(10, "derivative-free-consistency", ok, &detail, start.elapsed(), Duration::from_secs(10)), "{detail}");
}

#[test]
fn c11_harness_determinism() {
    let start = Instant::now();
    let mut config = RunConfig {
        scenario: ScenarioKind::Linear,
        filters: vec![FilterKind::Kf, FilterKind::Nano],
        trials: 5,
        seed: 11,
        horizon: 200,
        timing: false,
        ..RunConfig::default()
    };
    config.nano.max_iters = 1;
    let csv = |c: &RunConfig| {
        let mut buf = Vec::new();
        write_results_to(&run_trials(c).unwrap(), &mut buf, OutputFormat::Csv).unwrap();
        buf
    };
    let identical = csv(&config) == csv(&config);
    let rows = run_trials(&config).unwrap();
    let kf: Vec<_> = rows.iter().filter(|r| r.filter == "kf").collect();
    let nano: Vec<_> = rows.iter().filter(|r| r.filter == "nano").collect();
    let paired = kf.len() == nano.len() && kf.iter().zip(&nano).all(|(a, b)| a.trial == b.trial && a.seed == b.seed);
    let gap = kf.iter().zip(&nano).map(|(a, b)| (a.rmse - b.rmse).abs()).fold(0.0, f64::max);
    let ok = identical && paired && gap <= 1e-8;
    let detail = format!("byte-identical {identical}, paired {paired}, kf/nano rmse gap {gap:.2e}");
    assert!(report(11, "harness-determinism", ok, &detail, start.elapsed(), Duration::from_secs(10)), "{detail}");
}
