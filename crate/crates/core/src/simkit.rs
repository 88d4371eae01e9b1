//! Trajectory simulation, IMU/GNSS synthesis and the Monte-Carlo harness.

use nalgebra::Rotation3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backtrack::{align, misalignment, AlignmentConfig, GnssNoise};
use crate::errmodel::{cn_to_nprime, GnssFix, SensorBudget};
use crate::error::{Error, Result};
use crate::geokin::{
    earth_rate_n, gravity_n, rad_to_arcmin, transport_rate_n, Dcm, EarthModel, Euler, GeoPosition,
    Mat3, Vec3,
};
use crate::formats::{trace_rows, truth_at, TraceRow};
use crate::mech::{step_rotation, ImuRecord, ImuSample, NavState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManeuverSegment {
    CruiseStraight { duration: f64 },
    Accelerate { duration: f64, target_speed: f64 },
    Decelerate { duration: f64, target_speed: f64 },
    /// Constant-rate arc at the current speed; positive angles turn left.
    Turn { duration: f64, turn_angle_deg: f64 },
}

impl ManeuverSegment {
    pub fn duration(&self) -> f64 {
        match *self {
            ManeuverSegment::CruiseStraight { duration }
            | ManeuverSegment::Accelerate { duration, .. }
            | ManeuverSegment::Decelerate { duration, .. }
            | ManeuverSegment::Turn { duration, .. } => duration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub imu_rate_hz: f64,
    pub gnss_rate_hz: f64,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_m: f64,
    pub initial_speed: f64,
    /// Heading measured counterclockwise from north.
    pub initial_heading_deg: f64,
    pub segments: Vec<ManeuverSegment>,
}

impl Scenario {
    /// 600 s vehicle run: straight cruise, acceleration, a U-turn and four
    /// speed ramps between 10 and 20 m/s, ending at 20 m/s.
    pub fn paper() -> Self {
        use ManeuverSegment::*;
        Scenario {
            imu_rate_hz: 125.0,
            gnss_rate_hz: 1.0,
            lat_deg: 30.0,
            lon_deg: 114.0,
            alt_m: 50.0,
            initial_speed: 10.0,
            initial_heading_deg: 0.0,
            segments: vec![
                CruiseStraight { duration: 290.0 },
                Accelerate { duration: 10.0, target_speed: 20.0 },
                Turn { duration: 10.0, turn_angle_deg: 180.0 },
                CruiseStraight { duration: 20.0 },
                Decelerate { duration: 10.0, target_speed: 10.0 },
                CruiseStraight { duration: 40.0 },
                Accelerate { duration: 10.0, target_speed: 20.0 },
                CruiseStraight { duration: 40.0 },
                Decelerate { duration: 10.0, target_speed: 10.0 },
                CruiseStraight { duration: 40.0 },
                Accelerate { duration: 10.0, target_speed: 20.0 },
                CruiseStraight { duration: 110.0 },
            ],
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.imu_rate_hz
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(ManeuverSegment::duration).sum()
    }

    pub fn earth_model(&self) -> EarthModel {
        EarthModel::at_latitude(self.lat_deg.to_radians())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InconsistentScenario(m));
        if !(self.imu_rate_hz > 0.0 && self.imu_rate_hz.is_finite()) {
            return bad(format!("IMU rate {} must be positive", self.imu_rate_hz));
        }
        if !(self.gnss_rate_hz > 0.0 && self.gnss_rate_hz <= self.imu_rate_hz) {
            return bad(format!(
                "GNSS rate {} must be positive and not exceed the IMU rate",
                self.gnss_rate_hz
            ));
        }
        let ratio = self.imu_rate_hz / self.gnss_rate_hz;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return bad("IMU rate must be an integer multiple of the GNSS rate".into());
        }
        if !(self.initial_speed >= 0.0) {
            return bad("initial speed must be nonnegative".into());
        }
        self.start_state()?;
        Ok(())
    }

    pub fn start_state(&self) -> Result<NavState> {
        let yaw = self.initial_heading_deg.to_radians();
        let att = Dcm::from_euler(Euler::new(0.0, 0.0, yaw));
        Ok(NavState {
            t: 0.0,
            att,
            vel: att * Vec3::new(0.0, self.initial_speed, 0.0),
            pos: GeoPosition::new(self.lat_deg.to_radians(), self.lon_deg.to_radians(), self.alt_m)
                .map_err(|e| Error::InconsistentScenario(e.to_string()))?,
        })
    }
}

/// Speed and heading over time, piecewise from the segment list.
struct Profile {
    /// (start time, start speed, start yaw, segment)
    pieces: Vec<(f64, f64, f64, ManeuverSegment)>,
    end_speed: f64,
    end_yaw: f64,
}

impl Profile {
    fn new(segments: &[ManeuverSegment], speed: f64, yaw: f64) -> Result<Self> {
        let mut pieces = Vec::with_capacity(segments.len());
        let (mut t, mut v, mut psi) = (0.0, speed, yaw);
        for (i, seg) in segments.iter().enumerate() {
            let d = seg.duration();
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InconsistentScenario(format!(
                    "segment {i} has non-positive duration {d}"
                )));
            }
            pieces.push((t, v, psi, *seg));
            match *seg {
                ManeuverSegment::CruiseStraight { .. } => {}
                ManeuverSegment::Accelerate { target_speed, .. } => {
                    if !(target_speed >= v) {
                        return Err(Error::InconsistentScenario(format!(
                            "segment {i} accelerates from {v} m/s to {target_speed} m/s"
                        )));
                    }
                    v = target_speed;
                }
                ManeuverSegment::Decelerate { target_speed, .. } => {
                    if !(target_speed <= v && target_speed >= 0.0) {
                        return Err(Error::InconsistentScenario(format!(
                            "segment {i} decelerates from {v} m/s to {target_speed} m/s"
                        )));
                    }
                    v = target_speed;
                }
                ManeuverSegment::Turn { turn_angle_deg, .. } => {
                    if !turn_angle_deg.is_finite() {
                        return Err(Error::InconsistentScenario(format!(
                            "segment {i} has a non-finite turn angle"
                        )));
                    }
                    psi += turn_angle_deg.to_radians();
                }
            }
            t += d;
        }
        Ok(Profile {
            pieces,
            end_speed: v,
            end_yaw: psi,
        })
    }

    fn at(&self, t: f64) -> (f64, f64) {
        let idx = self.pieces.partition_point(|p| p.0 <= t);
        if idx == 0 {
            return self
                .pieces
                .first()
                .map(|p| (p.1, p.2))
                .unwrap_or((self.end_speed, self.end_yaw));
        }
        let (t0, v0, psi0, seg) = self.pieces[idx - 1];
        let d = seg.duration();
        let u = ((t - t0) / d).min(1.0);
        match seg {
            ManeuverSegment::CruiseStraight { .. } => (v0, psi0),
            ManeuverSegment::Accelerate { target_speed, .. }
            | ManeuverSegment::Decelerate { target_speed, .. } => {
                (v0 + (target_speed - v0) * u, psi0)
            }
            ManeuverSegment::Turn { turn_angle_deg, .. } => {
                (v0, psi0 + turn_angle_deg.to_radians() * u)
            }
        }
    }
}

fn position_step(pos: &GeoPosition, vel: &Vec3, dt: f64, em: &EarthModel) -> GeoPosition {
    let rh = em.radius + pos.alt;
    GeoPosition {
        lat: pos.lat + dt * vel.y / rh,
        lon: pos.lon + dt * vel.x / (rh * pos.lat.cos()),
        alt: pos.alt + dt * vel.z,
    }
}

/// Level truth trajectory sampled every `dt`, starting with `start`.
///
/// Velocity follows the heading; positions are integrated with the same
/// first-order rule as the mechanization.
pub fn generate_truth(
    segments: &[ManeuverSegment],
    dt: f64,
    start: &NavState,
    em: &EarthModel,
) -> Result<Vec<NavState>> {
    if !(dt > 0.0) {
        return Err(Error::InconsistentScenario(format!("dt {dt} must be positive")));
    }
    let e = start.att.to_euler();
    let speed = start.vel.norm();
    let level = Dcm::from_euler(Euler::new(0.0, 0.0, e.yaw));
    if e.pitch.abs() > 1e-12
        || e.roll.abs() > 1e-12
        || (level * Vec3::new(0.0, speed, 0.0) - start.vel).norm() > 1e-9
    {
        return Err(Error::InconsistentScenario(
            "start state must be level and moving along its heading".into(),
        ));
    }
    let profile = Profile::new(segments, speed, e.yaw)?;
    let total: f64 = segments.iter().map(ManeuverSegment::duration).sum();
    let n = (total / dt + 1e-6).floor() as usize;

    let mut out = Vec::with_capacity(n + 1);
    out.push(*start);
    for k in 1..=n {
        let t = k as f64 * dt;
        let prev = out[k - 1];
        let (v, yaw) = profile.at(t);
        let att = Dcm::from_euler(Euler::new(0.0, 0.0, yaw));
        out.push(NavState {
            t,
            att,
            vel: att * Vec3::new(0.0, v, 0.0),
            pos: position_step(&prev.pos, &prev.vel, dt, em),
        });
    }
    Ok(out)
}

/// Rotation vector of a rotation matrix.
fn rotation_vector(m: &Mat3) -> Vec3 {
    let v = 0.5 * Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let s = v.norm();
    let c = 0.5 * (m.trace() - 1.0);
    if s < 1e-300 {
        return if c > 0.0 { Vec3::zeros() } else { Rotation3::from_matrix_unchecked(*m).scaled_axis() };
    }
    if c < -0.5 {
        return Rotation3::from_matrix_unchecked(*m).scaled_axis();
    }
    v * (s.atan2(c) / s)
}

/// Inverts the discrete mechanization: returns the IMU samples that drive it
/// exactly through `truth`.
pub fn synthesize_imu(truth: &[NavState], em: &EarthModel) -> Result<ImuRecord> {
    if truth.len() < 2 {
        return ImuRecord::new(Vec::new(), 1.0);
    }
    let dt = truth[1].t - truth[0].t;
    let g = gravity_n(em);
    let mut samples = Vec::with_capacity(truth.len() - 1);
    for w in truth.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let ca = a.att.matrix();
        let cb = b.att.matrix();

        let w_ie = earth_rate_n(a.pos.lat, em);
        let w_en = transport_rate_n(&a.vel, &a.pos, em)?;
        let body = ca.transpose() * step_rotation(&(w_ie + w_en), dt) * cb;
        // step_rotation(w) turns by atan(dt |w|) about w
        let phi = rotation_vector(&body);
        let angle = phi.norm();
        let gyro = if angle > 0.0 {
            phi * (angle.tan() / angle) / dt
        } else {
            Vec3::zeros()
        };

        let c_mid = 0.5 * (ca + cb);
        let rhs = (b.vel - a.vel) / dt + (2.0 * w_ie + w_en).cross(&a.vel) - g;
        let accel = c_mid
            .try_inverse()
            .ok_or_else(|| Error::InconsistentScenario("attitude step too large".into()))?
            * rhs;
        samples.push(ImuSample::new(b.t, gyro, accel));
    }
    ImuRecord::new(samples, dt)
}

/// Sensor errors drawn for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorErrors {
    pub gyro_bias: Vec3,
    pub accel_bias: Vec3,
}

fn normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let n: f64 = StandardNormal.sample(rng);
    sigma * n
}

/// Adds constant biases and white noise from `budget`, deterministic in `seed`.
pub fn corrupt_imu(clean: &ImuRecord, budget: &SensorBudget, seed: u64) -> Result<(ImuRecord, SensorErrors)> {
    budget.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let errors = SensorErrors {
        gyro_bias: Vec3::from_fn(|_, _| normal(&mut rng, budget.gyro_bias_sigma)),
        accel_bias: Vec3::from_fn(|_, _| normal(&mut rng, budget.accel_bias_sigma)),
    };
    let sg = budget.gyro_arw / clean.dt().sqrt();
    let sa = budget.accel_vrw / clean.dt().sqrt();
    let add = |x: &mut f64, bias: f64, sigma: f64, rng: &mut ChaCha8Rng| {
        if bias != 0.0 {
            *x += bias;
        }
        if sigma > 0.0 {
            *x += normal(rng, sigma);
        }
    };
    let samples = clean
        .samples()
        .iter()
        .map(|s| {
            let mut s = *s;
            for i in 0..3 {
                add(&mut s.gyro[i], errors.gyro_bias[i], sg, &mut rng);
            }
            for i in 0..3 {
                add(&mut s.accel[i], errors.accel_bias[i], sa, &mut rng);
            }
            s
        })
        .collect();
    Ok((ImuRecord::new(samples, clean.dt())?, errors))
}

/// Samples the truth at `rate_hz` and adds GNSS noise, deterministic in `seed`.
pub fn synthesize_gnss(
    truth: &[NavState],
    noise: &GnssNoise,
    rate_hz: f64,
    seed: u64,
    em: &EarthModel,
) -> Result<Vec<GnssFix>> {
    noise.validate()?;
    if truth.len() < 2 {
        return Ok(truth
            .iter()
            .map(|s| GnssFix { t: s.t, vel: s.vel, pos: s.pos })
            .collect());
    }
    let dt = truth[1].t - truth[0].t;
    let stride = (1.0 / (rate_hz * dt)).round();
    if !(stride >= 1.0) || ((1.0 / (rate_hz * dt)) - stride).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "GNSS rate {rate_hz} Hz does not divide the truth rate"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut add = |x: f64, sigma: f64| if sigma > 0.0 { x + normal(&mut rng, sigma) } else { x };
    Ok(truth
        .iter()
        .step_by(stride as usize)
        .map(|s| {
            let ps = noise.position_sigma(&s.pos, em);
            let vel = Vec3::new(
                add(s.vel.x, noise.vel_sigma),
                add(s.vel.y, noise.vel_sigma),
                add(s.vel.z, noise.vel_sigma),
            );
            let pos = GeoPosition {
                lat: add(s.pos.lat, ps.x),
                lon: add(s.pos.lon, ps.y),
                alt: add(s.pos.alt, ps.z),
            };
            GnssFix { t: s.t, vel, pos }
        })
        .collect())
}

/// SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of run `i` (zero-based): `splitmix64(master + (i + 1) * 0x9E3779B97F4A7C15)`.
pub fn run_seed(master: u64, i: usize) -> u64 {
    splitmix64(master.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// GNSS noise seed paired with an IMU run seed.
pub fn gnss_seed(run_seed: u64) -> u64 {
    splitmix64(run_seed ^ 0x5EED_6E55)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedAlgorithm {
    pub name: String,
    pub config: AlignmentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSpec {
    pub n_runs: usize,
    pub seed: u64,
    pub scenario: Scenario,
    pub budget: SensorBudget,
    pub gnss_noise: GnssNoise,
    /// True initial platform error angles, rad.
    pub misalignment: [f64; 3],
    pub algorithms: Vec<NamedAlgorithm>,
    /// Keep the per-epoch trace of every aligned run.
    #[serde(default)]
    pub keep_traces: bool,
}

/// Outcome of one algorithm on one run.
#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    /// Final misalignment (arcmin) and the error after every pass.
    Aligned {
        final_error: [f64; 3],
        pass_errors: Vec<[f64; 3]>,
        trace: Option<Vec<TraceRow>>,
    },
    Diverged(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmResult {
    pub name: String,
    /// Per-axis RMS over non-diverged runs, arcmin.
    pub rms: [f64; 3],
    pub diverged: usize,
    /// Outcomes in run order.
    pub runs: Vec<RunOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloTable {
    pub rows: Vec<AlgorithmResult>,
}

impl MonteCarloTable {
    pub fn row(&self, name: &str) -> Option<&AlgorithmResult> {
        self.rows.iter().find(|r| r.name == name)
    }
}

fn arcmin(v: &Vec3) -> [f64; 3] {
    [rad_to_arcmin(v.x), rad_to_arcmin(v.y), rad_to_arcmin(v.z)]
}

fn run_one(
    spec: &MonteCarloSpec,
    truth: &[NavState],
    clean: &ImuRecord,
    em: &EarthModel,
    i: usize,
) -> Result<Vec<RunOutcome>> {
    let seed = run_seed(spec.seed, i);
    let (imu, _) = corrupt_imu(clean, &spec.budget, seed)?;
    let gnss = synthesize_gnss(truth, &spec.gnss_noise, spec.scenario.gnss_rate_hz, gnss_seed(seed), em)?;
    let alpha0 = Vec3::from(spec.misalignment);
    let att0 = cn_to_nprime(&alpha0) * truth[0].att;

    Ok(spec
        .algorithms
        .iter()
        .map(|alg| match align(&imu, &gnss, &att0, &alg.config, em) {
            Ok(report) => {
                let Some(t_end) = truth_at(truth, report.final_time) else {
                    return RunOutcome::Diverged("final time outside the truth".into());
                };
                let final_error = arcmin(&misalignment(&report.final_attitude, &t_end.att));
                let mut pass_errors = Vec::new();
                for p in 0..report.passes.len() {
                    let last = report.trace.iter().rev().find(|(idx, _)| *idx == p);
                    if let Some((_, e)) = last {
                        if let Some(tr) = truth_at(truth, e.t) {
                            pass_errors.push(arcmin(&misalignment(&e.attitude, &tr.att)));
                        }
                    }
                }
                if final_error.iter().all(|x| x.is_finite()) {
                    RunOutcome::Aligned {
                        final_error,
                        pass_errors,
                        trace: spec.keep_traces.then(|| trace_rows(&report.trace, Some(truth))),
                    }
                } else {
                    RunOutcome::Diverged("non-finite attitude".into())
                }
            }
            Err(e) => RunOutcome::Diverged(e.to_string()),
        })
        .collect())
}

/// Runs every algorithm on `n_runs` independently corrupted copies of the
/// same truth. `jobs = 0` uses the global thread pool.
pub fn run_monte_carlo(spec: &MonteCarloSpec, jobs: usize) -> Result<MonteCarloTable> {
    if spec.n_runs == 0 {
        return Err(Error::InvalidInput("n_runs must be at least 1".into()));
    }
    if spec.algorithms.is_empty() {
        return Err(Error::InvalidInput("no algorithms selected".into()));
    }
    for a in &spec.algorithms {
        a.config.validate()?;
    }
    spec.scenario.validate()?;
    let em = spec.scenario.earth_model();
    let start = spec.scenario.start_state()?;
    let truth = generate_truth(&spec.scenario.segments, spec.scenario.dt(), &start, &em)?;
    if truth.len() < 2 {
        return Err(Error::InconsistentScenario("scenario has zero duration".into()));
    }
    let clean = synthesize_imu(&truth, &em)?;

    let work = || {
        (0..spec.n_runs)
            .into_par_iter()
            .map(|i| run_one(spec, &truth, &clean, &em, i))
            .collect::<Result<Vec<_>>>()
    };
    let per_run = if jobs == 0 {
        work()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
            .install(work)?
    };

    let rows = spec
        .algorithms
        .iter()
        .enumerate()
        .map(|(a, alg)| {
            let runs: Vec<RunOutcome> = per_run.iter().map(|r| r[a].clone()).collect();
            let ok: Vec<[f64; 3]> = runs
                .iter()
                .filter_map(|r| match r {
                    RunOutcome::Aligned { final_error, .. } => Some(*final_error),
                    RunOutcome::Diverged(_) => None,
                })
                .collect();
            let rms = [0, 1, 2].map(|k| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    (ok.iter().map(|e| e[k] * e[k]).sum::<f64>() / ok.len() as f64).sqrt()
                }
            });
            AlgorithmResult {
                name: alg.name.clone(),
                rms,
                diverged: runs.len() - ok.len(),
                runs,
            }
        })
        .collect();
    Ok(MonteCarloTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mech::{run_mechanization, Direction};

    fn straight(seconds: f64) -> (Vec<NavState>, EarthModel) {
        let sc = Scenario {
            segments: vec![ManeuverSegment::CruiseStraight { duration: seconds }],
            ..Scenario::paper()
        };
        let em = sc.earth_model();
        let truth = generate_truth(&sc.segments, sc.dt(), &sc.start_state().unwrap(), &em).unwrap();
        (truth, em)
    }

    #[test]
    fn straight_cruise_latitude_gain() {
        let (truth, em) = straight(290.0);
        let last = truth.last().unwrap();
        let expected = 290.0 * 10.0 / (em.radius + 50.0);
        assert!((last.pos.lat - truth[0].pos.lat - expected).abs() < 1e-10);
        assert!((last.pos.lon - truth[0].pos.lon).abs() < 1e-15);
        assert_eq!(truth.len(), 290 * 125 + 1);
    }

    #[test]
    fn zero_duration_is_start_only() {
        let sc = Scenario::paper();
        let start = sc.start_state().unwrap();
        let truth = generate_truth(&[], sc.dt(), &start, &sc.earth_model()).unwrap();
        assert_eq!(truth, vec![start]);
    }

    #[test]
    fn inconsistent_segments_rejected() {
        let sc = Scenario::paper();
        let start = sc.start_state().unwrap();
        let em = sc.earth_model();
        let bad = [ManeuverSegment::Accelerate { duration: 5.0, target_speed: 5.0 }];
        assert!(matches!(
            generate_truth(&bad, sc.dt(), &start, &em),
            Err(Error::InconsistentScenario(_))
        ));
        let bad = [ManeuverSegment::CruiseStraight { duration: 0.0 }];
        assert!(generate_truth(&bad, sc.dt(), &start, &em).is_err());
    }

    #[test]
    fn paper_scenario_shape() {
        let sc = Scenario::paper();
        assert!((sc.duration() - 600.0).abs() < 1e-12);
        let em = sc.earth_model();
        let truth = generate_truth(&sc.segments, sc.dt(), &sc.start_state().unwrap(), &em).unwrap();
        let last = truth.last().unwrap();
        assert!((last.vel.norm() - 20.0).abs() < 1e-9);
        let yaw = last.att.to_euler().yaw;
        assert!((yaw.abs() - std::f64::consts::PI).abs() < 1e-9);
        let at = |t: f64| truth[(t * 125.0).round() as usize].vel.norm();
        assert!((at(100.0) - 10.0).abs() < 1e-12);
        assert!((at(305.0) - 20.0).abs() < 1e-12);
        assert!((at(360.0) - 10.0).abs() < 1e-12);
        assert!((at(410.0) - 20.0).abs() < 1e-12);
        assert!((at(460.0) - 10.0).abs() < 1e-12);
        // every maneuver ends by 500 s
        let mut t = 0.0;
        for s in &sc.segments {
            t += s.duration();
            if !matches!(s, ManeuverSegment::CruiseStraight { .. }) {
                assert!(t <= 500.0);
            }
        }
    }

    #[test]
    fn stationary_inverse() {
        let sc = Scenario {
            initial_speed: 0.0,
            initial_heading_deg: 40.0,
            segments: vec![ManeuverSegment::CruiseStraight { duration: 1.0 }],
            ..Scenario::paper()
        };
        let em = sc.earth_model();
        let truth = generate_truth(&sc.segments, sc.dt(), &sc.start_state().unwrap(), &em).unwrap();
        let imu = synthesize_imu(&truth, &em).unwrap();
        let c = truth[0].att.matrix();
        let gyro = c.transpose() * earth_rate_n(truth[0].pos.lat, &em);
        let accel = c.transpose() * Vec3::new(0.0, 0.0, em.gravity);
        for s in imu.samples() {
            assert!((s.gyro() - gyro).norm() < 1e-13);
            assert!((s.accel() - accel).norm() < 1e-12);
        }
    }

    #[test]
    fn turn_rate_appears_on_z_gyro() {
        let sc = Scenario {
            segments: vec![ManeuverSegment::Turn { duration: 10.0, turn_angle_deg: 180.0 }],
            ..Scenario::paper()
        };
        let em = sc.earth_model();
        let truth = generate_truth(&sc.segments, sc.dt(), &sc.start_state().unwrap(), &em).unwrap();
        let imu = synthesize_imu(&truth, &em).unwrap();
        let rate = std::f64::consts::PI / 10.0;
        for (k, s) in imu.samples().iter().enumerate() {
            let a = &truth[k];
            let w_in = earth_rate_n(a.pos.lat, &em) + transport_rate_n(&a.vel, &a.pos, &em).unwrap();
            let proj = (a.att.matrix().transpose() * w_in).z;
            let step = rate * sc.dt();
            let expected = step.tan() / sc.dt() + proj;
            assert!((s.gyro[2] - expected).abs() < 1e-9, "{k}");
        }
    }

    #[test]
    fn synthesized_imu_reproduces_truth() {
        let sc = Scenario::paper();
        let em = sc.earth_model();
        let truth = generate_truth(&sc.segments, sc.dt(), &sc.start_state().unwrap(), &em).unwrap();
        let imu = synthesize_imu(&truth, &em).unwrap();
        assert_eq!(imu.len(), 75_000);
        let nav = run_mechanization(&imu, &truth[0], Direction::Forward, &em).unwrap();
        let (a, b) = (nav.last().unwrap(), truth.last().unwrap());
        let north = (a.pos.lat - b.pos.lat) * em.radius;
        let east = (a.pos.lon - b.pos.lon) * em.radius * b.pos.lat.cos();
        assert!(north.hypot(east) < 1.0, "{north} {east}");
        assert!(misalignment(&a.att, &b.att).norm().to_degrees() < 0.005);
    }

    #[test]
    fn zero_budget_is_identity() {
        let (truth, em) = straight(2.0);
        let clean = synthesize_imu(&truth, &em).unwrap();
        let (out, errs) = corrupt_imu(&clean, &SensorBudget::zero(), 1).unwrap();
        assert_eq!(out, clean);
        assert_eq!(errs.gyro_bias, Vec3::zeros());
    }

    #[test]
    fn bias_only_offsets_every_sample() {
        let (truth, em) = straight(2.0);
        let clean = synthesize_imu(&truth, &em).unwrap();
        let budget = SensorBudget {
            gyro_arw: 0.0,
            accel_vrw: 0.0,
            ..SensorBudget::mems()
        };
        let (out, errs) = corrupt_imu(&clean, &budget, 42).unwrap();
        let n = out.len() as f64;
        for i in 0..3 {
            let mean: f64 = out
                .samples()
                .iter()
                .zip(clean.samples())
                .map(|(a, b)| a.gyro[i] - b.gyro[i])
                .sum::<f64>()
                / n;
            assert!((mean - errs.gyro_bias[i]).abs() < 1e-12);
            let mean: f64 = out
                .samples()
                .iter()
                .zip(clean.samples())
                .map(|(a, b)| a.accel[i] - b.accel[i])
                .sum::<f64>()
                / n;
            assert!((mean - errs.accel_bias[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn white_noise_calibration() {
        // 0.1 deg/sqrt(h) at 125 Hz: sigma = 0.1 * pi/180 / 60 * sqrt(125) rad/s
        let dt = 1.0 / 125.0;
        let samples = (1..=1_000_000)
            .map(|k| ImuSample::new(k as f64 * dt, Vec3::zeros(), Vec3::zeros()))
            .collect();
        let clean = ImuRecord::new(samples, dt).unwrap();
        let budget = SensorBudget {
            gyro_bias_sigma: 0.0,
            accel_bias_sigma: 0.0,
            ..SensorBudget::mems()
        };
        let (out, _) = corrupt_imu(&clean, &budget, 7).unwrap();
        let target_g = 0.1_f64.to_radians() / 60.0 * 125.0_f64.sqrt();
        let target_a = 1e-3 * 9.80665 * 125.0_f64.sqrt();
        let var = |f: &dyn Fn(&ImuSample) -> f64| {
            out.samples().iter().map(|s| f(s).powi(2)).sum::<f64>() / out.len() as f64
        };
        let vg = var(&|s| s.gyro[0]);
        let va = var(&|s| s.accel[2]);
        assert!((vg.sqrt() / target_g - 1.0).abs() < 0.05);
        assert!((va.sqrt() / target_a - 1.0).abs() < 0.05);
        // Allan variance at the base cluster time equals the white-noise variance
        let g: Vec<f64> = out.samples().iter().map(|s| s.gyro[1]).collect();
        let avar = g.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / (2.0 * (g.len() - 1) as f64);
        assert!((avar.sqrt() / target_g - 1.0).abs() < 0.05);
    }

    #[test]
    fn corruption_is_deterministic() {
        let (truth, em) = straight(2.0);
        let clean = synthesize_imu(&truth, &em).unwrap();
        let a = corrupt_imu(&clean, &SensorBudget::mems(), 9).unwrap();
        let b = corrupt_imu(&clean, &SensorBudget::mems(), 9).unwrap();
        let c = corrupt_imu(&clean, &SensorBudget::mems(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn gnss_cadence_and_noise() {
        let (truth, em) = straight(600.0);
        let clean = synthesize_gnss(&truth, &GnssNoise::zero(), 1.0, 0, &em).unwrap();
        assert_eq!(clean.len(), 601);
        for (j, f) in clean.iter().enumerate() {
            let s = &truth[j * 125];
            assert_eq!((f.t, f.vel, f.pos), (s.t, s.vel, s.pos));
            assert!((f.t - j as f64).abs() < 1e-9);
        }
        let noise = GnssNoise::default();
        let noisy = synthesize_gnss(&truth, &noise, 1.0, 3, &em).unwrap();
        let sd = |f: &dyn Fn(&GnssFix, &GnssFix) -> f64| {
            (noisy.iter().zip(&clean).map(|(a, b)| f(a, b).powi(2)).sum::<f64>() / 601.0).sqrt()
        };
        let rh = em.radius + 50.0;
        assert!((sd(&|a, b| a.vel.x - b.vel.x) / 0.1 - 1.0).abs() < 0.2);
        assert!((sd(&|a, b| (a.pos.lat - b.pos.lat) * rh) / 3.0 - 1.0).abs() < 0.2);
        assert!((sd(&|a, b| a.pos.alt - b.pos.alt) / 5.0 - 1.0).abs() < 0.2);
    }

    #[test]
    fn splitmix_reference_values() {
        // first outputs of the reference SplitMix64 generator seeded with 0
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(0x9E37_79B9_7F4A_7C15), 0x6E78_9E6A_A1B9_65F4);
        assert_ne!(run_seed(1, 0), run_seed(1, 1));
    }
}
