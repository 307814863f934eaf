//! Planar range-bearing SLAM with Ackermann vehicle kinematics, a seeded
//! simulator, and a plain-text event log.

use std::collections::HashSet;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{stream_rng, with_derivative_fallback, FilterKind, FilterRun, FilterSettings, RunRecorder, Stream};
use crate::baselines::{kf_update_moments, ukf_update_moments, CovarianceForm};
use crate::error::{Error, Result};
use crate::gaussian::GaussianBelief;
use crate::linalg::{self, wrap_angle, Matrix, Vector};
use crate::model::GaussianLoss;
use crate::nano::nano_update_local;
use crate::sigma::TransformParams;

const JACKKNIFE_TOL: f64 = 1e-6;
/// χ² quantile, 2 degrees of freedom, 0.99.
const GATE_CHI2: f64 = 9.21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionForm {
    /// Sensor mounted at constant offsets `(a, b)` from the rear axle.
    ConstantOffsets,
    /// The printed variant with `tan θ` and the steering angle in place of `a`.
    LiteralSteering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Association {
    /// Landmark ids are taken from the observations.
    Known,
    /// Ids are ignored; each observation goes to the nearest landmark under
    /// a 99% χ² gate, or starts a new one.
    NearestNeighbor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlamScenario {
    pub wheelbase: f64,
    pub track: f64,
    pub dt: f64,
    pub offset_a: f64,
    pub offset_b: f64,
    pub motion_form: MotionForm,
    pub association: Association,
    pub landmarks: usize,
    /// Encoder speed of the reference trajectory, m/s.
    pub speed: f64,
    /// Radius of the circular reference trajectory, m.
    pub turn_radius: f64,
    pub landmark_inner_radius: f64,
    pub landmark_outer_radius: f64,
    /// Minimum distance between a landmark and the reference path.
    pub path_clearance: f64,
    pub sensor_range: f64,
    pub sigma_v: f64,
    pub sigma_steer_deg: f64,
    pub sigma_range: f64,
    pub sigma_bearing_deg: f64,
    pub initial_pose_variance: f64,
}

impl Default for SlamScenario {
    fn default() -> Self {
        Self {
            wheelbase: 2.83,
            track: 0.76,
            dt: 0.1,
            offset_a: 0.0,
            offset_b: 0.0,
            motion_form: MotionForm::ConstantOffsets,
            association: Association::Known,
            landmarks: 20,
            speed: 3.0,
            turn_radius: 25.0,
            landmark_inner_radius: 15.0,
            landmark_outer_radius: 35.0,
            path_clearance: 2.0,
            sensor_range: 15.0,
            sigma_v: 2.0,
            sigma_steer_deg: 6.0,
            sigma_range: 1.0,
            sigma_bearing_deg: 3.0,
            initial_pose_variance: 1e-4,
        }
    }
}

/// `v = v_e / (1 − H tan α / (2L))`.
pub fn speed_from_encoder(v_e: f64, alpha: f64, params: &SlamScenario) -> Result<f64> {
    if alpha.abs() >= FRAC_PI_2 {
        return Err(Error::Jackknife(alpha));
    }
    let denom = 1.0 - params.track * alpha.tan() / (2.0 * params.wheelbase);
    if denom.abs() < JACKKNIFE_TOL {
        return Err(Error::Jackknife(alpha));
    }
    Ok(v_e / denom)
}

/// One Ackermann step of the pose `(p_x, p_y, θ)`.
pub fn slam_motion(state: &Vector, v_e: f64, alpha: f64, dt: f64, params: &SlamScenario) -> Result<Vector> {
    linalg::check_dim("vehicle pose", 3, state.len())?;
    let v = speed_from_encoder(v_e, alpha, params)?;
    let (px, py, th) = (state[0], state[1], state[2]);
    let (s, c) = th.sin_cos();
    let l = params.wheelbase;
    let turn = v / l * alpha.tan();
    let (dx, dy) = match params.motion_form {
        MotionForm::ConstantOffsets => {
            let (a, b) = (params.offset_a, params.offset_b);
            (v * c - turn * (a * s + b * c), v * s + turn * (a * c - b * s))
        }
        MotionForm::LiteralSteering => {
            let lit = v / l * th.tan();
            let b = params.offset_b;
            (v * c - lit * (alpha * s + b * c), v * s + lit * (alpha * c + b * s))
        }
    };
    Ok(Vector::from_row_slice(&[px + dt * dx, py + dt * dy, th + dt * turn]))
}

/// Range and wrapped bearing from the pose to a landmark.
pub fn slam_measurement(state: &Vector, landmark: &[f64; 2]) -> Result<[f64; 2]> {
    let (dx, dy) = (landmark[0] - state[0], landmark[1] - state[1]);
    let r = dx.hypot(dy);
    if r == 0.0 {
        return Err(Error::ZeroRange);
    }
    Ok([r, wrap_angle(dy.atan2(dx) - state[2])])
}

/// Joint Gaussian over the pose followed by landmark positions in `ids` order.
#[derive(Debug, Clone, PartialEq)]
pub struct SlamBelief {
    pub belief: GaussianBelief,
    pub ids: Vec<u64>,
}

impl SlamBelief {
    pub fn new(pose: GaussianBelief) -> Result<Self> {
        linalg::check_dim("vehicle pose belief", 3, pose.dim())?;
        Ok(Self {
            belief: pose,
            ids: Vec::new(),
        })
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.ids.iter().position(|&i| i == id)
    }

    pub fn landmark(&self, slot: usize) -> [f64; 2] {
        let m = self.belief.mean();
        [m[3 + 2 * slot], m[4 + 2 * slot]]
    }

    pub fn pose(&self) -> Vector {
        self.belief.mean().rows(0, 3).into_owned()
    }
}

fn measurement_noise(params: &SlamScenario) -> Matrix {
    Matrix::from_diagonal(&Vector::from_row_slice(&[
        params.sigma_range.powi(2),
        params.sigma_bearing_deg.to_radians().powi(2),
    ]))
}

/// Appends landmarks initialized by inverse measurement, with first-order
/// covariance `J_x P J_xᵀ + J_z R J_zᵀ` and cross terms `J_x P_{x,·}`.
pub fn slam_augment_state(belief: &SlamBelief, observations: &[(u64, [f64; 2])], r: &Matrix) -> Result<SlamBelief> {
    let mut seen = HashSet::new();
    for (id, _) in observations {
        if belief.index_of(*id).is_some() || !seen.insert(*id) {
            return Err(Error::DuplicateLandmark(*id));
        }
    }
    let n0 = belief.belief.dim();
    let n = n0 + 2 * observations.len();
    let mut mean = Vector::zeros(n);
    mean.rows_mut(0, n0).copy_from(belief.belief.mean());
    let mut cov = Matrix::zeros(n, n);
    cov.view_mut((0, 0), (n0, n0)).copy_from(belief.belief.cov());
    let (px, py, th) = (mean[0], mean[1], mean[2]);
    let mut ids = belief.ids.clone();
    for (k, (id, [range, bearing])) in observations.iter().enumerate() {
        let at = n0 + 2 * k;
        let (s, c) = (th + bearing).sin_cos();
        mean[at] = px + range * c;
        mean[at + 1] = py + range * s;
        let jx = Matrix::from_row_slice(2, 3, &[1.0, 0.0, -range * s, 0.0, 1.0, range * c]);
        let jz = Matrix::from_row_slice(2, 2, &[c, -range * s, s, range * c]);
        let pose_rows = cov.rows(0, 3).columns(0, at).into_owned();
        let cross = &jx * pose_rows;
        let pvv = cov.view((0, 0), (3, 3)).into_owned();
        let pll = &jx * pvv * jx.transpose() + &jz * r * jz.transpose();
        cov.view_mut((at, 0), (2, at)).copy_from(&cross);
        cov.view_mut((0, at), (at, 2)).copy_from(&cross.transpose());
        cov.view_mut((at, at), (2, 2)).copy_from(&pll);
        ids.push(*id);
    }
    Ok(SlamBelief {
        belief: GaussianBelief::from_symmetrized(mean, cov)?,
        ids,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlamEvent {
    Odometry { t: f64, v_e: f64, alpha: f64 },
    Observation { t: f64, id: u64, range: f64, bearing: f64 },
}

impl SlamEvent {
    pub fn time(&self) -> f64 {
        match *self {
            SlamEvent::Odometry { t, .. } | SlamEvent::Observation { t, .. } => t,
        }
    }
}

pub fn format_slam_log(events: &[SlamEvent]) -> String {
    let mut out = String::new();
    for e in events {
        // Display for f64 prints the shortest round-trip form.
        let _ = match *e {
            SlamEvent::Odometry { t, v_e, alpha } => writeln!(out, "ODO {t} {v_e} {alpha}"),
            SlamEvent::Observation { t, id, range, bearing } => writeln!(out, "OBS {t} {id} {range} {bearing}"),
        };
    }
    out
}

pub fn write_slam_log(path: &Path, events: &[SlamEvent]) -> Result<()> {
    std::fs::write(path, format_slam_log(events))?;
    Ok(())
}

pub fn parse_slam_log(text: &str) -> Result<Vec<SlamEvent>> {
    let mut events = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line, message };
        let fields: Vec<&str> = content.split_whitespace().collect();
        let float = |s: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| err(format!("invalid number `{s}`")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(format!("non-finite number `{s}`")))
            }
        };
        let event = match (fields[0], fields.len()) {
            ("ODO", 4) => SlamEvent::Odometry {
                t: float(fields[1])?,
                v_e: float(fields[2])?,
                alpha: float(fields[3])?,
            },
            ("OBS", 5) => SlamEvent::Observation {
                t: float(fields[1])?,
                id: fields[2].parse().map_err(|_| err(format!("invalid landmark id `{}`", fields[2])))?,
                range: float(fields[3])?,
                bearing: float(fields[4])?,
            },
            ("ODO", n) | ("OBS", n) => return Err(err(format!("`{}` record has {} fields", fields[0], n - 1))),
            (tag, _) => return Err(err(format!("unknown record type `{tag}`"))),
        };
        if event.time() < last_t {
            return Err(err(format!("timestamp {} precedes {}", event.time(), last_t)));
        }
        last_t = event.time();
        events.push(event);
    }
    Ok(events)
}

pub fn load_slam_log(path: &Path) -> Result<Vec<SlamEvent>> {
    parse_slam_log(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlamData {
    pub landmarks: Vec<[f64; 2]>,
    pub initial_pose: Vector,
    /// Pose after each odometry step.
    pub truth: Vec<Vector>,
    pub events: Vec<SlamEvent>,
}

impl SlamScenario {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.wheelbase > 0.0, "wheelbase must be positive"),
            (self.track >= 0.0, "track must be non-negative"),
            (self.dt > 0.0, "dt must be positive"),
            (self.landmarks >= 1, "at least one landmark is needed"),
            (self.sigma_range > 0.0 && self.sigma_bearing_deg > 0.0, "measurement noise must be positive"),
            (self.sigma_v >= 0.0 && self.sigma_steer_deg >= 0.0, "control noise must be non-negative"),
            (self.initial_pose_variance > 0.0, "initial pose variance must be positive"),
            (
                self.landmark_inner_radius < self.landmark_outer_radius,
                "landmark annulus is empty",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::InvalidParameter(msg.into()));
            }
        }
        Ok(())
    }

    fn reference_steer(&self) -> f64 {
        (self.wheelbase / self.turn_radius).atan()
    }

    fn control_cov(&self) -> Matrix {
        Matrix::from_diagonal(&Vector::from_row_slice(&[
            self.sigma_v.powi(2),
            self.sigma_steer_deg.to_radians().powi(2),
        ]))
    }

    /// Vehicle on a circle of radius `turn_radius` around the origin with
    /// landmarks scattered in an annulus; controls reach the log with noise.
    pub fn simulate(&self, seed: u64, horizon: usize) -> Result<SlamData> {
        self.validate()?;
        let mut map_rng = stream_rng(seed, Stream::Map);
        let mut ctl_rng = stream_rng(seed, Stream::ProcessNoise);
        let mut meas_rng = stream_rng(seed, Stream::MeasurementNoise);
        let mut landmarks = Vec::with_capacity(self.landmarks);
        while landmarks.len() < self.landmarks {
            let (r2a, r2b) = (self.landmark_inner_radius.powi(2), self.landmark_outer_radius.powi(2));
            let radius = (r2a + (r2b - r2a) * map_rng.random::<f64>()).sqrt();
            let angle = 2.0 * PI * map_rng.random::<f64>();
            if (radius - self.turn_radius).abs() < self.path_clearance {
                continue;
            }
            landmarks.push([radius * angle.cos(), radius * angle.sin()]);
        }
        let initial_pose = Vector::from_row_slice(&[self.turn_radius, 0.0, FRAC_PI_2]);
        let alpha = self.reference_steer();
        let (sr, sb) = (self.sigma_range, self.sigma_bearing_deg.to_radians());
        let (sv, sg) = (self.sigma_v, self.sigma_steer_deg.to_radians());
        let mut pose = initial_pose.clone();
        let mut truth = Vec::with_capacity(horizon);
        let mut events = Vec::with_capacity(horizon * 6);
        for k in 0..horizon {
            let t = k as f64 * self.dt;
            let v_noise: f64 = ctl_rng.sample(StandardNormal);
            let g_noise: f64 = ctl_rng.sample(StandardNormal);
            events.push(SlamEvent::Odometry {
                t,
                v_e: self.speed + sv * v_noise,
                alpha: alpha + sg * g_noise,
            });
            pose = slam_motion(&pose, self.speed, alpha, self.dt, self)?;
            let t_obs = (k + 1) as f64 * self.dt;
            for (id, lm) in landmarks.iter().enumerate() {
                let [range, bearing] = slam_measurement(&pose, lm)?;
                if range > self.sensor_range {
                    continue;
                }
                let nr: f64 = meas_rng.sample(StandardNormal);
                let nb: f64 = meas_rng.sample(StandardNormal);
                events.push(SlamEvent::Observation {
                    t: t_obs,
                    id: id as u64,
                    range: range + sr * nr,
                    bearing: wrap_angle(bearing + sb * nb),
                });
            }
            truth.push(pose.clone());
        }
        Ok(SlamData {
            landmarks,
            initial_pose,
            truth,
            events,
        })
    }

    pub fn initial_belief(&self, pose: &Vector) -> Result<SlamBelief> {
        SlamBelief::new(GaussianBelief::new(
            pose.clone(),
            Matrix::identity(3, 3) * self.initial_pose_variance,
        )?)
    }

    pub fn run(&self, kind: FilterKind, settings: &FilterSettings, data: &SlamData) -> Result<FilterRun> {
        self.run_events(kind, settings, &data.initial_pose, &data.events)
    }

    /// Replays an event stream. One estimate (the pose) is recorded per
    /// odometry event, after the observations that follow it.
    pub fn run_events(
        &self,
        kind: FilterKind,
        settings: &FilterSettings,
        initial_pose: &Vector,
        events: &[SlamEvent],
    ) -> Result<FilterRun> {
        if kind == FilterKind::Kf {
            return Err(Error::Unsupported {
                filter: kind.id().into(),
                scenario: "slam".into(),
            });
        }
        let steps = events.iter().filter(|e| matches!(e, SlamEvent::Odometry { .. })).count();
        let mut state = self.initial_belief(initial_pose)?;
        let mut rec = RunRecorder::new(state.pose(), steps);
        let mut pending: Vec<(u64, [f64; 2])> = Vec::new();
        let mut control: Option<(f64, f64)> = None;
        let mut next_auto_id = 1u64 << 32;
        let mut close_step = |state: &mut SlamBelief,
                              control: Option<(f64, f64)>,
                              pending: &mut Vec<(u64, [f64; 2])>,
                              rec: &mut RunRecorder| {
            let Some((v_e, alpha)) = control else {
                pending.clear();
                return;
            };
            if rec.diverged() {
                pending.clear();
                rec.hold();
                return;
            }
            let started = Instant::now();
            let outcome = self
                .filter_cycle(kind, settings, state, v_e, alpha, pending, &mut next_auto_id)
                .map(|next| {
                    *state = next;
                    state.pose()
                });
            pending.clear();
            rec.record(outcome, started);
        };
        for e in events {
            match *e {
                SlamEvent::Odometry { v_e, alpha, .. } => {
                    close_step(&mut state, control, &mut pending, &mut rec);
                    control = Some((v_e, alpha));
                }
                SlamEvent::Observation { id, range, bearing, .. } => pending.push((id, [range, bearing])),
            }
        }
        close_step(&mut state, control, &mut pending, &mut rec);
        Ok(rec.finish())
    }

    #[allow(clippy::too_many_arguments)]
    fn filter_cycle(
        &self,
        kind: FilterKind,
        settings: &FilterSettings,
        state: &SlamBelief,
        v_e: f64,
        alpha: f64,
        observations: &[(u64, [f64; 2])],
        next_auto_id: &mut u64,
    ) -> Result<SlamBelief> {
        let predicted = self.predict(kind, settings, state, v_e, alpha)?;
        let (known, fresh) = self.associate(&predicted, observations, next_auto_id)?;
        let updated = if known.is_empty() {
            predicted
        } else {
            self.update(kind, settings, &predicted, &known)?
        };
        if fresh.is_empty() {
            Ok(updated)
        } else {
            slam_augment_state(&updated, &fresh, &measurement_noise(self))
        }
    }

    fn motion_fn(&self, v_e: f64, alpha: f64) -> impl Fn(&Vector) -> Vector + '_ {
        move |x: &Vector| {
            slam_motion(x, v_e, alpha, self.dt, self).unwrap_or_else(|_| Vector::from_element(3, f64::NAN))
        }
    }

    /// Pose process noise from the control noise, linearized at `pose`.
    fn pose_noise(&self, pose: &Vector, v_e: f64, alpha: f64) -> Matrix {
        let ju = linalg::numerical_jacobian(
            |u| {
                slam_motion(pose, u[0], u[1], self.dt, self).unwrap_or_else(|_| Vector::from_element(3, f64::NAN))
            },
            &Vector::from_row_slice(&[v_e, alpha]),
        );
        &ju * self.control_cov() * ju.transpose() + Matrix::identity(3, 3) * 1e-10
    }

    fn predict(
        &self,
        kind: FilterKind,
        settings: &FilterSettings,
        state: &SlamBelief,
        v_e: f64,
        alpha: f64,
    ) -> Result<SlamBelief> {
        let b = &state.belief;
        let n = b.dim();
        let mu_v = b.mean().rows(0, 3).into_owned();
        let p_vv = b.cov().view((0, 0), (3, 3)).into_owned();
        let f = self.motion_fn(v_e, alpha);
        // (new pose mean, pose covariance, linear map applied to pose-landmark cross terms)
        let (m_v, c_vv, a) = match kind {
            FilterKind::Ekf => {
                let fx = linalg::numerical_jacobian(&f, &mu_v);
                (f(&mu_v), &fx * &p_vv * fx.transpose(), fx)
            }
            _ => {
                let quad: TransformParams = match kind {
                    FilterKind::Ukf => settings.quad,
                    _ => kind.nano_config(&settings.nano).quad,
                };
                let set = quad.points(&mu_v, &p_vv)?;
                let (m, c) = set.moment_match(&f)?;
                let cross = set.cross_covariance(&f)?;
                let a = (linalg::spd_inverse(&p_vv, "pose covariance")? * cross).transpose();
                (m, c, a)
            }
        };
        linalg::check_finite_vec(&m_v, "predicted pose")?;
        let mut mean = b.mean().clone();
        mean.rows_mut(0, 3).copy_from(&m_v);
        let mut cov = b.cov().clone();
        let q = self.pose_noise(&mu_v, v_e, alpha);
        cov.view_mut((0, 0), (3, 3)).copy_from(&(c_vv + q));
        if n > 3 {
            let p_vl = b.cov().view((0, 3), (3, n - 3)).into_owned();
            let new_vl = &a * p_vl;
            cov.view_mut((0, 3), (3, n - 3)).copy_from(&new_vl);
            cov.view_mut((3, 0), (n - 3, 3)).copy_from(&new_vl.transpose());
        }
        Ok(SlamBelief {
            belief: GaussianBelief::from_symmetrized(mean, cov)?,
            ids: state.ids.clone(),
        })
    }

    /// Splits observations into (state slot, measurement) pairs for mapped
    /// landmarks and (id, measurement) pairs for new ones.
    #[allow(clippy::type_complexity)]
    fn associate(
        &self,
        state: &SlamBelief,
        observations: &[(u64, [f64; 2])],
        next_auto_id: &mut u64,
    ) -> Result<(Vec<(usize, [f64; 2])>, Vec<(u64, [f64; 2])>)> {
        let mut known = Vec::new();
        let mut fresh = Vec::new();
        match self.association {
            Association::Known => {
                for &(id, z) in observations {
                    match state.index_of(id) {
                        Some(slot) => known.push((slot, z)),
                        None if fresh.iter().any(|(f, _)| *f == id) => {}
                        None => fresh.push((id, z)),
                    }
                }
            }
            Association::NearestNeighbor => {
                let r = measurement_noise(self);
                for &(_, z) in observations {
                    let mut best: Option<(usize, f64)> = None;
                    for slot in 0..state.ids.len() {
                        let support = support_indices(&[slot]);
                        let local = state.belief.mean().select_rows(&support);
                        let Ok(pred) = slam_measurement(&local, &state.landmark(slot)) else {
                            continue;
                        };
                        let h = local_jacobian(&local, 1);
                        let p = state.belief.cov().select_rows(&support).select_columns(&support);
                        let s = &h * p * h.transpose() + &r;
                        let nu = Vector::from_row_slice(&[z[0] - pred[0], wrap_angle(z[1] - pred[1])]);
                        let Some(chol) = s.cholesky() else { continue };
                        let d2 = nu.dot(&chol.solve(&nu));
                        if d2 < GATE_CHI2 && best.is_none_or(|(_, b)| d2 < b) {
                            best = Some((slot, d2));
                        }
                    }
                    match best {
                        Some((slot, _)) => known.push((slot, z)),
                        None => {
                            fresh.push((*next_auto_id, z));
                            *next_auto_id += 1;
                        }
                    }
                }
            }
        }
        Ok((known, fresh))
    }

    fn update(
        &self,
        kind: FilterKind,
        settings: &FilterSettings,
        state: &SlamBelief,
        obs: &[(usize, [f64; 2])],
    ) -> Result<SlamBelief> {
        let slots: Vec<usize> = obs.iter().map(|(s, _)| *s).collect();
        let support = support_indices(&slots);
        let k = obs.len();
        let y = Vector::from_iterator(2 * k, obs.iter().flat_map(|(_, z)| z.iter().copied()));
        let r_one = measurement_noise(self);
        let mut r = Matrix::zeros(2 * k, 2 * k);
        for i in 0..k {
            r.view_mut((2 * i, 2 * i), (2, 2)).copy_from(&r_one);
        }
        let wrap = |v: &mut Vector| {
            for i in (1..v.len()).step_by(2) {
                v[i] = wrap_angle(v[i]);
            }
        };
        let prior = &state.belief;
        let belief = match kind {
            FilterKind::Ekf => {
                let local = prior.mean().select_rows(&support);
                let mut innovation = &y - local_measurement(&local, k);
                wrap(&mut innovation);
                let h_local = local_jacobian(&local, k);
                let mut h = Matrix::zeros(2 * k, prior.dim());
                for (a, &i) in support.iter().enumerate() {
                    h.set_column(i, &h_local.column(a));
                }
                let (m, p) =
                    kf_update_moments(prior.mean(), prior.cov(), &h, &r, &innovation, CovarianceForm::Standard)?;
                GaussianBelief::from_symmetrized(m, p)?
            }
            FilterKind::Ukf => {
                let (m, p) = ukf_update_moments(
                    prior,
                    |x| local_measurement(&x.select_rows(&support), k),
                    &r,
                    &y,
                    wrap,
                    &settings.quad,
                    CovarianceForm::Standard,
                )?;
                GaussianBelief::from_symmetrized(m, p)?
            }
            _ => {
                let loss = GaussianLoss::new(Arc::new(move |z: &Vector| local_measurement(z, k)), r)?
                    .with_jacobian(Arc::new(move |z: &Vector| local_jacobian(z, k)))
                    .with_wrap(Arc::new(wrap));
                let cfg = kind.nano_config(&settings.nano);
                with_derivative_fallback(&cfg, |c| Ok(nano_update_local(prior, &loss, &support, &y, c)?.0))?
            }
        };
        Ok(SlamBelief {
            belief,
            ids: state.ids.clone(),
        })
    }
}

/// Pose indices followed by the coordinates of each landmark slot.
fn support_indices(slots: &[usize]) -> Vec<usize> {
    let mut idx = vec![0, 1, 2];
    for &s in slots {
        idx.push(3 + 2 * s);
        idx.push(4 + 2 * s);
    }
    idx
}

/// Stacked range-bearing predictions on a local vector `(pose, m₁, …, m_k)`.
fn local_measurement(z: &Vector, k: usize) -> Vector {
    let mut out = Vector::zeros(2 * k);
    for i in 0..k {
        let lm = [z[3 + 2 * i], z[4 + 2 * i]];
        let [r, b] = slam_measurement(z, &lm).unwrap_or([f64::NAN, f64::NAN]);
        out[2 * i] = r;
        out[2 * i + 1] = b;
    }
    out
}

fn local_jacobian(z: &Vector, k: usize) -> Matrix {
    let mut h = Matrix::zeros(2 * k, 3 + 2 * k);
    for i in 0..k {
        let (dx, dy) = (z[3 + 2 * i] - z[0], z[4 + 2 * i] - z[1]);
        let q = dx * dx + dy * dy;
        let r = q.sqrt();
        let (row_r, row_b) = (2 * i, 2 * i + 1);
        h[(row_r, 0)] = -dx / r;
        h[(row_r, 1)] = -dy / r;
        h[(row_r, 3 + 2 * i)] = dx / r;
        h[(row_r, 4 + 2 * i)] = dy / r;
        h[(row_b, 0)] = dy / q;
        h[(row_b, 1)] = -dx / q;
        h[(row_b, 2)] = -1.0;
        h[(row_b, 3 + 2 * i)] = -dy / q;
        h[(row_b, 4 + 2 * i)] = dx / q;
    }
    h
}

/// Position RMSE of the vehicle track.
pub fn slam_rmse(truth: &[Vector], estimates: &[Vector]) -> Result<f64> {
    let t: Vec<Vector> = truth.iter().map(|v| v.rows(0, 2).into_owned()).collect();
    let e: Vec<Vector> = estimates.iter().map(|v| v.rows(0, 2).into_owned()).collect();
    crate::harness::rmse(&t, &e)
}
