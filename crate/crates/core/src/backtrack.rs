//! Backtracking alignment: alternating forward and backward navigation and
//! filter passes over one stored IMU/GNSS record.
//!
//! Every pass runs the mechanization at the IMU rate and the filter at the
//! GNSS epochs. Velocity and position error estimates are fed back into the
//! navigation solution at each epoch; the platform error angles stay open
//! loop inside a pass and are folded into the attitude at the pass end.
//! Between passes the navigation state and the filter are mapped into the
//! other time direction.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::errmodel::{
    alpha_from_dcm, cn_to_nprime, linear_dynamics, measurement_model, measurement_residual,
    nonlinear_dynamics, ErrorState, GnssFix, MeasMat, ModelKind, SensorBudget, StateMat, StateVec,
    IDX_ACCEL_BIAS, IDX_ALPHA, IDX_GYRO_BIAS, IDX_POS, IDX_VEL, MEAS_DIM, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::geokin::{dcm_renormalize, rad_to_arcmin, Dcm, EarthModel, GeoPosition, Vec3};
use crate::mech::{
    forward_step, reverse_record, reverse_state, Direction, ImuRecord, ImuSample, NavState,
};
use crate::ukf::{
    kf_time_update, linear_measurement_update, ut_time_update, GaussianState, Integrator,
    NoiseConfig, UtParams,
};

pub type FilterState = GaussianState<STATE_DIM>;
pub type FilterNoise = NoiseConfig<STATE_DIM, MEAS_DIM>;

/// One-sigma GNSS accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnssNoise {
    /// m/s per axis
    pub vel_sigma: f64,
    /// m
    pub horiz_sigma: f64,
    /// m
    pub vert_sigma: f64,
}

impl Default for GnssNoise {
    fn default() -> Self {
        GnssNoise {
            vel_sigma: 0.1,
            horiz_sigma: 3.0,
            vert_sigma: 5.0,
        }
    }
}

impl GnssNoise {
    pub fn zero() -> Self {
        GnssNoise {
            vel_sigma: 0.0,
            horiz_sigma: 0.0,
            vert_sigma: 0.0,
        }
    }

    /// Position sigmas in state units `(rad, rad, m)` at `pos`.
    pub fn position_sigma(&self, pos: &GeoPosition, em: &EarthModel) -> Vec3 {
        let rh = em.radius + pos.alt;
        Vec3::new(
            self.horiz_sigma / rh,
            self.horiz_sigma / (rh * pos.lat.cos()),
            self.vert_sigma,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.vel_sigma, self.horiz_sigma, self.vert_sigma];
        if v.iter().all(|x| *x >= 0.0 && x.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("GNSS noise must be nonnegative: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    pub model: ModelKind,
    pub use_backtracking: bool,
    /// Total passes, forward first, alternating.
    pub n_passes: usize,
    /// Expected magnitude of the initial platform error angles, rad.
    pub initial_misalignment: [f64; 3],
    pub ut: UtParams,
    pub budget: SensorBudget,
    pub gnss_noise: GnssNoise,
    pub integrator: Integrator,
    /// Restart the filter from its prior at every pass boundary instead of
    /// carrying it; only the navigation solution carries over.
    pub reset_covariance: bool,
    /// Angle sigmas of the restarted prior, rad. `None` reuses
    /// `initial_misalignment`.
    #[serde(default)]
    pub reset_misalignment: Option<[f64; 3]>,
    /// Stop once a pass corrects the attitude by less than this, arcmin.
    pub early_stop_arcmin: Option<f64>,
    /// Largest final-pass correction, arcmin, still reported as converged.
    pub convergence_arcmin: f64,
}

impl AlignmentConfig {
    pub fn new(model: ModelKind, use_backtracking: bool, n_passes: usize) -> Self {
        AlignmentConfig {
            model,
            use_backtracking,
            n_passes,
            initial_misalignment: [0.0; 3],
            ut: UtParams::default(),
            budget: SensorBudget::mems(),
            gnss_noise: GnssNoise::default(),
            integrator: Integrator::Rk4,
            reset_covariance: false,
            reset_misalignment: None,
            early_stop_arcmin: None,
            convergence_arcmin: 1.0,
        }
    }

    pub fn passes(&self) -> usize {
        if self.use_backtracking {
            self.n_passes
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_passes == 0 {
            return Err(Error::InvalidInput("n_passes must be at least 1".into()));
        }
        let finite = |a: &[f64; 3]| a.iter().all(|x| x.is_finite());
        if !finite(&self.initial_misalignment) || !self.reset_misalignment.as_ref().is_none_or(finite) {
            return Err(Error::InvalidInput("initial misalignment must be finite".into()));
        }
        self.ut.validate(STATE_DIM)?;
        self.budget.validate()?;
        self.gnss_noise.validate()
    }

    /// Process and measurement noise with positions expressed at `pos`.
    pub fn noise(&self, pos: &GeoPosition, em: &EarthModel) -> FilterNoise {
        let mut q = StateMat::zeros();
        let arw2 = self.budget.gyro_arw * self.budget.gyro_arw;
        let vrw2 = self.budget.accel_vrw * self.budget.accel_vrw;
        for i in 0..3 {
            q[(IDX_ALPHA + i, IDX_ALPHA + i)] = arw2;
            q[(IDX_VEL + i, IDX_VEL + i)] = vrw2;
        }
        let ps = self.gnss_noise.position_sigma(pos, em);
        let vs = self.gnss_noise.vel_sigma;
        let r = MeasMat::from_diagonal(&nalgebra::Vector6::new(
            vs * vs,
            vs * vs,
            vs * vs,
            ps.x * ps.x,
            ps.y * ps.y,
            ps.z * ps.z,
        ));
        NoiseConfig {
            process_psd: q,
            meas_cov: r,
        }
    }

    /// Zero-mean prior over the error state at `pos`.
    pub fn initial_filter(&self, pos: &GeoPosition, em: &EarthModel) -> FilterState {
        self.prior(&self.initial_misalignment, pos, em)
    }

    /// Prior used at pass boundaries when `reset_covariance` is set.
    pub fn restart_filter(&self, pos: &GeoPosition, em: &EarthModel) -> FilterState {
        let sigma = self.reset_misalignment.unwrap_or(self.initial_misalignment);
        self.prior(&sigma, pos, em)
    }

    fn prior(&self, angle_sigma: &[f64; 3], pos: &GeoPosition, em: &EarthModel) -> FilterState {
        let mut d = StateVec::zeros();
        let ps = self.gnss_noise.position_sigma(pos, em);
        for i in 0..3 {
            d[IDX_ALPHA + i] = angle_sigma[i].powi(2);
            d[IDX_VEL + i] = self.gnss_noise.vel_sigma.powi(2);
            d[IDX_POS + i] = ps[i].powi(2);
            d[IDX_GYRO_BIAS + i] = self.budget.gyro_bias_sigma.powi(2);
            d[IDX_ACCEL_BIAS + i] = self.budget.accel_bias_sigma.powi(2);
        }
        GaussianState::new(StateVec::zeros(), StateMat::from_diagonal(&d))
    }
}

/// Filter output at one GNSS epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochEstimate {
    /// Time in the forward time frame.
    pub t: f64,
    /// Platform error angle estimate, rad.
    pub alpha: Vec3,
    /// Attitude with the current angle estimate applied.
    pub attitude: Dcm,
    pub cov_diag: StateVec,
}

#[derive(Debug, Clone)]
pub struct PassResult {
    pub direction: Direction,
    pub epochs: Vec<EpochEstimate>,
    /// Filter at the pass end, in the pass's time frame.
    pub terminal: FilterState,
    /// Navigation state at the pass end, in the pass's time frame.
    pub terminal_nav: NavState,
    pub record_fingerprint: u64,
}

impl PassResult {
    /// Terminal navigation state in the forward time frame.
    pub fn terminal_nav_forward(&self) -> NavState {
        match self.direction {
            Direction::Forward => self.terminal_nav,
            Direction::Backward => reverse_state(&self.terminal_nav),
        }
    }

    /// Terminal error state with the gyro bias in the forward convention.
    pub fn terminal_error_forward(&self) -> ErrorState {
        let x = ErrorState::from_vector(&self.terminal.mean);
        match self.direction {
            Direction::Forward => x,
            Direction::Backward => ErrorState {
                dvel: -x.dvel,
                gyro_bias: -x.gyro_bias,
                ..x
            },
        }
    }
}

fn forward_time(t: f64, dir: Direction) -> f64 {
    match dir {
        Direction::Forward => t,
        Direction::Backward => -t,
    }
}

/// Checks that fixes are strictly increasing and lie within the record span.
pub fn check_gnss(record: &ImuRecord, gnss: &[GnssFix]) -> Result<()> {
    let (start, end) = match (record.start_time(), record.end_time()) {
        (Some(s), Some(e)) => (s, e),
        _ => return Err(Error::EmptyRecord),
    };
    if gnss.is_empty() {
        return Err(Error::TimeAlignment("no GNSS fixes".into()));
    }
    let half = 0.5 * record.dt();
    for (i, f) in gnss.iter().enumerate() {
        if !(f.t >= start - half && f.t <= end + half) {
            return Err(Error::TimeAlignment(format!(
                "GNSS fix {i} at t = {} lies outside the IMU record [{start}, {end}]",
                f.t
            )));
        }
        if i > 0 && f.t <= gnss[i - 1].t {
            return Err(Error::TimeAlignment(format!(
                "GNSS fix {i} at t = {} does not follow t = {}",
                f.t,
                gnss[i - 1].t
            )));
        }
        let finite = f.vel.iter().all(|v| v.is_finite()) && f.pos.validate().is_ok();
        if !finite {
            return Err(Error::InvalidInput(format!("GNSS fix {i} is not a valid fix")));
        }
    }
    Ok(())
}

/// Covariance propagation over one GNSS interval.
struct Interval<'a> {
    nodes: [&'a NavState; 3],
    /// Mean specific force over the interval in the computed frame.
    force: Vec3,
    h: f64,
}

impl Interval<'_> {
    fn node(&self, tau: f64) -> (&NavState, ImuSample) {
        let nav = if tau < 0.25 {
            self.nodes[0]
        } else if tau < 0.75 {
            self.nodes[1]
        } else {
            self.nodes[2]
        };
        let accel = nav.att.matrix().transpose() * self.force;
        (nav, ImuSample::new(nav.t, Vec3::zeros(), accel))
    }
}

fn time_update(
    filter: &FilterState,
    iv: &Interval<'_>,
    dir: Direction,
    cfg: &AlignmentConfig,
    noise: &FilterNoise,
    em: &EarthModel,
) -> Result<FilterState> {
    match cfg.model {
        ModelKind::Nonlinear => ut_time_update(
            filter,
            &cfg.ut,
            cfg.integrator,
            iv.h,
            &noise.process_psd,
            |tau, x| {
                let (nav, imu) = iv.node(tau);
                nonlinear_dynamics(&ErrorState::from_vector(x), nav, &imu, dir, em)
            },
        ),
        ModelKind::Linear => {
            // Simpson average of the system matrix over the interval
            let mut f = StateMat::zeros();
            for (tau, w) in [(0.0, 1.0), (0.5, 4.0), (1.0, 1.0)] {
                let (nav, imu) = iv.node(tau);
                f += w / 6.0 * linear_dynamics(nav, &imu, em)?;
            }
            Ok(kf_time_update(
                filter,
                &f,
                &StateVec::zeros(),
                iv.h,
                &noise.process_psd,
            ))
        }
    }
}

/// Runs one filter pass over the stored (forward-time) record.
///
/// `init_nav` and `init_filter` are in the pass's own time frame, as
/// returned by [`handoff`] for backward passes.
pub fn run_pass(
    record: &ImuRecord,
    gnss: &[GnssFix],
    init_nav: &NavState,
    init_filter: &FilterState,
    dir: Direction,
    cfg: &AlignmentConfig,
    em: &EarthModel,
) -> Result<PassResult> {
    if record.direction() != Direction::Forward {
        return Err(Error::InvalidInput("stored record must be in forward time".into()));
    }
    check_gnss(record, gnss)?;
    let rec: Cow<'_, ImuRecord> = match dir {
        Direction::Forward => Cow::Borrowed(record),
        Direction::Backward => Cow::Owned(reverse_record(record)),
    };
    let fixes: Vec<GnssFix> = match dir {
        Direction::Forward => gnss.to_vec(),
        Direction::Backward => gnss.iter().rev().map(GnssFix::reversed).collect(),
    };
    let dt = rec.dt();
    let half = 0.5 * dt;
    let start = rec.start_time().ok_or(Error::EmptyRecord)?;
    if (init_nav.t - start).abs() > half {
        return Err(Error::TimeAlignment(format!(
            "pass starts at t = {} but the record starts at t = {start}",
            init_nav.t
        )));
    }

    let em_pass = em.for_direction(rec.direction());
    let noise = cfg.noise(&init_nav.pos, em);
    let h_mat = measurement_model();

    let mut nav = *init_nav;
    let mut filter = init_filter.clone();
    let mut segment = vec![nav];
    let mut force_sum = Vec3::zeros();
    let mut epochs = Vec::with_capacity(fixes.len());
    let mut pending = fixes.iter().filter(|f| f.t > start + half).peekable();

    for imu in rec.samples() {
        let prev = nav;
        nav = forward_step(&nav, imu, dt, &em_pass)?;
        force_sum += dt * (0.5 * (prev.att.matrix() + nav.att.matrix())) * imu.accel();
        segment.push(nav);

        let Some(fix) = pending.peek() else { continue };
        if (fix.t - nav.t).abs() > half {
            continue;
        }
        let h = nav.t - segment[0].t;
        let iv = Interval {
            nodes: [&segment[0], &segment[segment.len() / 2], &segment[segment.len() - 1]],
            force: force_sum / h,
            h,
        };
        filter = time_update(&filter, &iv, dir, cfg, &noise, &em_pass)?;

        let z = measurement_residual(&nav, fix);
        filter = linear_measurement_update(&filter, &z, &h_mat, &noise.meas_cov)?.state;
        if !filter.mean.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "filter diverged at t = {}",
                forward_time(nav.t, dir)
            )));
        }

        let x = ErrorState::from_vector(&filter.mean);
        nav.vel -= x.dvel;
        nav.pos = GeoPosition {
            lat: nav.pos.lat - x.dpos.x,
            lon: nav.pos.lon - x.dpos.y,
            alt: nav.pos.alt - x.dpos.z,
        };
        filter.mean.fixed_rows_mut::<6>(IDX_VEL).fill(0.0);

        epochs.push(EpochEstimate {
            t: forward_time(nav.t, dir),
            alpha: x.alpha,
            attitude: corrected_attitude(&nav.att, &x.alpha)?,
            cov_diag: filter.cov_diagonal(),
        });

        pending.next();
        segment.clear();
        segment.push(nav);
        force_sum = Vec3::zeros();
    }
    if let Some(fix) = pending.next() {
        return Err(Error::TimeAlignment(format!(
            "GNSS fix at t = {} is not on the IMU sample grid",
            forward_time(fix.t, dir)
        )));
    }

    Ok(PassResult {
        direction: dir,
        epochs,
        terminal: filter,
        terminal_nav: nav,
        record_fingerprint: record.fingerprint(),
    })
}

/// `C_b^n = C_n^n'(alpha)^T C_b^n'`.
pub fn corrected_attitude(att: &Dcm, alpha: &Vec3) -> Result<Dcm> {
    dcm_renormalize(cn_to_nprime(alpha).transpose() * *att)
}

/// Folds the terminal angle estimate into the terminal attitude and zeroes
/// it in the filter. Returns the applied angles.
pub fn apply_feedback(pass: &mut PassResult) -> Result<Vec3> {
    let alpha: Vec3 = pass.terminal.mean.fixed_rows::<3>(IDX_ALPHA).into();
    pass.terminal_nav.att = corrected_attitude(&pass.terminal_nav.att, &alpha)?;
    pass.terminal.mean.fixed_rows_mut::<3>(IDX_ALPHA).fill(0.0);
    Ok(alpha)
}

/// Sign map of the error state under time reversal: velocity error and gyro
/// bias change sign.
fn reversal_signs() -> StateVec {
    let mut s = StateVec::from_element(1.0);
    for i in 0..3 {
        s[IDX_VEL + i] = -1.0;
        s[IDX_GYRO_BIAS + i] = -1.0;
    }
    s
}

/// Maps a filter state into the opposite time direction.
pub fn reverse_filter(g: &FilterState) -> FilterState {
    let s = reversal_signs();
    GaussianState::new(
        g.mean.component_mul(&s),
        StateMat::from_fn(|i, j| g.cov[(i, j)] * s[i] * s[j]),
    )
}

/// Initial navigation state and filter for the pass following `prev`.
pub fn handoff(prev: &PassResult, next_dir: Direction) -> Result<(NavState, FilterState)> {
    if next_dir != prev.direction.flip() {
        return Err(Error::InvalidInput("passes must alternate direction".into()));
    }
    Ok((reverse_state(&prev.terminal_nav), reverse_filter(&prev.terminal)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassSummary {
    pub index: usize,
    pub direction: Direction,
    /// Attitude correction applied at the pass end, rad.
    pub correction: [f64; 3],
    /// Final one-sigma angle uncertainty, rad.
    pub alpha_sigma: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct AlignmentReport {
    /// Attitude at `final_time` after the last correction.
    pub final_attitude: Dcm,
    pub final_time: f64,
    pub passes: Vec<PassSummary>,
    /// Per-epoch estimates of every pass, tagged with the pass index.
    pub trace: Vec<(usize, EpochEstimate)>,
    /// Forward-time gyro bias estimate, rad/s.
    pub gyro_bias: Vec3,
    /// Accelerometer bias estimate, m/s^2.
    pub accel_bias: Vec3,
    pub converged: bool,
}

/// Runs the configured sequence of passes starting from `initial_att` and the
/// first GNSS fix.
pub fn align(
    record: &ImuRecord,
    gnss: &[GnssFix],
    initial_att: &Dcm,
    cfg: &AlignmentConfig,
    em: &EarthModel,
) -> Result<AlignmentReport> {
    cfg.validate()?;
    check_gnss(record, gnss)?;
    let start = record.start_time().ok_or(Error::EmptyRecord)?;
    let first = gnss[0];
    if (first.t - start).abs() > 0.5 * record.dt() {
        return Err(Error::TimeAlignment(format!(
            "first GNSS fix at t = {} does not coincide with the record start t = {start}",
            first.t
        )));
    }

    let mut filter = cfg.initial_filter(&first.pos, em);
    let mut nav = NavState {
        t: start,
        att: dcm_renormalize(*initial_att)?,
        vel: first.vel,
        pos: first.pos,
    };
    let fingerprint = record.fingerprint();
    let mut dir = Direction::Forward;
    let mut passes = Vec::new();
    let mut trace = Vec::new();
    let mut last: Option<PassResult> = None;

    for index in 0..cfg.passes() {
        let mut pass = run_pass(record, gnss, &nav, &filter, dir, cfg, em)?;
        debug_assert_eq!(pass.record_fingerprint, fingerprint);
        let alpha_sigma = [0, 1, 2].map(|i| pass.terminal.cov[(IDX_ALPHA + i, IDX_ALPHA + i)].sqrt());
        let correction = apply_feedback(&mut pass)?;
        trace.extend(pass.epochs.iter().cloned().map(|e| (index, e)));
        passes.push(PassSummary {
            index,
            direction: dir,
            correction: correction.into(),
            alpha_sigma,
        });

        let small = |tol: f64| correction.iter().all(|a| rad_to_arcmin(a.abs()) < tol);
        let stop = index + 1 == cfg.passes() || cfg.early_stop_arcmin.is_some_and(small);
        if stop {
            last = Some(pass);
            break;
        }
        let (next_nav, next_filter) = handoff(&pass, dir.flip())?;
        nav = next_nav;
        filter = if cfg.reset_covariance {
            cfg.restart_filter(&nav.pos, em)
        } else {
            next_filter
        };
        dir = dir.flip();
    }

    let last = last.ok_or_else(|| Error::InvalidInput("no pass was run".into()))?;
    let final_nav = last.terminal_nav_forward();
    let x = last.terminal_error_forward();
    let final_correction = passes.last().map(|p| p.correction).unwrap_or_default();
    Ok(AlignmentReport {
        final_attitude: final_nav.att,
        final_time: final_nav.t,
        passes,
        trace,
        gyro_bias: x.gyro_bias,
        accel_bias: x.accel_bias,
        converged: final_correction
            .iter()
            .all(|a| rad_to_arcmin(a.abs()) <= cfg.convergence_arcmin),
    })
}

/// Platform error angles of `estimate` relative to `truth`.
pub fn misalignment(estimate: &Dcm, truth: &Dcm) -> Vec3 {
    alpha_from_dcm(&(*estimate * truth.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geokin::Euler;

    fn stationary(seconds: usize) -> (ImuRecord, Vec<GnssFix>, EarthModel, NavState) {
        let lat = 0.6;
        let em = EarthModel::at_latitude(lat);
        let pos = GeoPosition::new(lat, 1.9, 50.0).unwrap();
        let att = Dcm::from_euler(Euler::new(0.0, 0.0, 0.3));
        let gyro = att.matrix().transpose() * crate::geokin::earth_rate_n(lat, &em);
        let accel = att.matrix().transpose() * Vec3::new(0.0, 0.0, em.gravity);
        let dt = 0.01;
        let n = seconds * 100;
        let samples = (1..=n)
            .map(|k| ImuSample::new(k as f64 * dt, gyro, accel))
            .collect();
        let record = ImuRecord::new(samples, dt).unwrap();
        let gnss = (0..=seconds)
            .map(|k| GnssFix {
                t: k as f64,
                vel: Vec3::zeros(),
                pos,
            })
            .collect();
        let nav = NavState {
            t: 0.0,
            att,
            vel: Vec3::zeros(),
            pos,
        };
        (record, gnss, em, nav)
    }

    #[test]
    fn perfect_data_stays_at_zero() {
        let (record, gnss, em, nav) = stationary(20);
        for model in [ModelKind::Nonlinear, ModelKind::Linear] {
            let mut cfg = AlignmentConfig::new(model, true, 3);
            cfg.budget = SensorBudget::zero();
            let report = align(&record, &gnss, &nav.att, &cfg, &em).unwrap();
            for (_, e) in &report.trace {
                assert!(e.alpha.norm() < 1e-8, "{:?}", e.alpha);
            }
            let err = misalignment(&report.final_attitude, &nav.att);
            assert!(err.norm() < 1e-8);
            assert_eq!(report.passes.len(), 3);
        }
    }

    #[test]
    fn level_errors_estimated_when_stationary() {
        let (record, gnss, em, nav) = stationary(60);
        let tilt = Vec3::new(0.01, -0.02, 0.0);
        let att0 = cn_to_nprime(&tilt) * nav.att;
        let mut cfg = AlignmentConfig::new(ModelKind::Nonlinear, false, 1);
        cfg.budget = SensorBudget::zero();
        cfg.initial_misalignment = [0.02, 0.02, 0.02];
        let report = align(&record, &gnss, &att0, &cfg, &em).unwrap();
        let err = misalignment(&report.final_attitude, &nav.att);
        assert!(rad_to_arcmin(err.x.abs()) < 0.1, "{err:?}");
        assert!(rad_to_arcmin(err.y.abs()) < 0.1, "{err:?}");
    }

    #[test]
    fn handoff_flips_gyro_bias_and_is_involution() {
        let mut mean = StateVec::zeros();
        mean[IDX_GYRO_BIAS] = 1e-5;
        mean[IDX_ALPHA] = 0.2;
        let mut cov = StateMat::identity();
        cov[(IDX_GYRO_BIAS, IDX_ALPHA)] = 0.3;
        cov[(IDX_ALPHA, IDX_GYRO_BIAS)] = 0.3;
        let pass = PassResult {
            direction: Direction::Forward,
            epochs: vec![],
            terminal: GaussianState::new(mean, cov),
            terminal_nav: NavState {
                t: 5.0,
                att: Dcm::identity(),
                vel: Vec3::new(1.0, 2.0, 3.0),
                pos: GeoPosition::new(0.1, 0.2, 0.3).unwrap(),
            },
            record_fingerprint: 0,
        };
        let (nav, f) = handoff(&pass, Direction::Backward).unwrap();
        assert_eq!(f.mean[IDX_GYRO_BIAS], -1e-5);
        assert_eq!(f.mean[IDX_ALPHA], 0.2);
        assert_eq!(nav.vel, Vec3::new(-1.0, -2.0, -3.0));
        assert_eq!(nav.t, -5.0);
        let e0 = pass.terminal.cov.symmetric_eigenvalues();
        let e1 = f.cov.symmetric_eigenvalues();
        let (mut a, mut b) = (e0.as_slice().to_vec(), e1.as_slice().to_vec());
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let back = PassResult {
            direction: Direction::Backward,
            terminal: f,
            terminal_nav: nav,
            ..pass.clone()
        };
        let (nav2, f2) = handoff(&back, Direction::Forward).unwrap();
        assert_eq!(f2, pass.terminal);
        assert_eq!(nav2, pass.terminal_nav);
        assert!(handoff(&pass, Direction::Forward).is_err());
    }

    #[test]
    fn feedback_keeps_attitude_orthonormal() {
        let mut pass = PassResult {
            direction: Direction::Forward,
            epochs: vec![],
            terminal: GaussianState::new(
                StateVec::from_fn(|i, _| if i < 3 { 0.5 + i as f64 } else { 0.0 }),
                StateMat::identity(),
            ),
            terminal_nav: NavState {
                t: 0.0,
                att: Dcm::from_euler(Euler::new(0.1, 0.2, 0.3)),
                vel: Vec3::zeros(),
                pos: GeoPosition::new(0.1, 0.2, 0.3).unwrap(),
            },
            record_fingerprint: 0,
        };
        let alpha = apply_feedback(&mut pass).unwrap();
        assert_eq!(alpha, Vec3::new(0.5, 1.5, 2.5));
        assert!(pass.terminal_nav.att.orthogonality_error() < 1e-9);
        assert_eq!(pass.terminal.mean.fixed_rows::<3>(0).norm(), 0.0);
    }

    #[test]
    fn gnss_outside_record_rejected() {
        let (record, mut gnss, em, nav) = stationary(5);
        gnss.push(GnssFix { t: 7.0, ..gnss[0] });
        let cfg = AlignmentConfig::new(ModelKind::Nonlinear, false, 1);
        assert!(matches!(
            align(&record, &gnss, &nav.att, &cfg, &em),
            Err(Error::TimeAlignment(_))
        ));
    }

    #[test]
    fn single_pass_without_backtracking() {
        let (record, gnss, em, nav) = stationary(5);
        let mut cfg = AlignmentConfig::new(ModelKind::Nonlinear, false, 5);
        cfg.budget = SensorBudget::zero();
        let report = align(&record, &gnss, &nav.att, &cfg, &em).unwrap();
        assert_eq!(report.passes.len(), 1);
        assert_eq!(report.trace.len(), 5);
        assert!((report.final_time - 5.0).abs() < 1e-9);
    }

    #[test]
    fn restart_prior_uses_reset_sigma() {
        let em = EarthModel::at_latitude(0.6);
        let pos = GeoPosition::new(0.6, 1.9, 50.0).unwrap();
        let mut cfg = AlignmentConfig::new(ModelKind::Nonlinear, true, 3);
        cfg.initial_misalignment = [0.5, 0.5, 3.0];
        let first = cfg.initial_filter(&pos, &em);
        assert_eq!(cfg.restart_filter(&pos, &em), first);
        cfg.reset_misalignment = Some([0.01, 0.02, 0.05]);
        let restart = cfg.restart_filter(&pos, &em);
        assert_eq!(restart.mean, StateVec::zeros());
        assert!((restart.cov[(IDX_ALPHA + 1, IDX_ALPHA + 1)] - 4e-4).abs() < 1e-18);
        for i in 3..STATE_DIM {
            assert_eq!(restart.cov[(i, i)], first.cov[(i, i)]);
        }
    }

    #[test]
    fn reset_restarts_covariance_at_pass_boundary() {
        let (record, gnss, em, nav) = stationary(10);
        let first_of_second_pass = |reset: bool| {
            let mut cfg = AlignmentConfig::new(ModelKind::Nonlinear, true, 2);
            cfg.initial_misalignment = [0.02, 0.02, 0.05];
            cfg.reset_covariance = reset;
            let report = align(&record, &gnss, &nav.att, &cfg, &em).unwrap();
            report.trace.iter().find(|(p, _)| *p == 1).unwrap().1.cov_diag[IDX_ALPHA]
        };
        let (reset, carried) = (first_of_second_pass(true), first_of_second_pass(false));
        assert!(reset > 2.0 * carried, "{reset:e} vs {carried:e}");
    }
}
