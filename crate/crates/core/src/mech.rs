//! Strapdown mechanization over a stored IMU record, forward and reversed.
//!
//! The reversed recursion is the forward recursion fed transformed inputs:
//! samples in reverse order with the gyro negated, the accelerometer
//! unchanged, the velocity negated and the earth rate negated
//! ([`EarthModel::reversed`]). Times are negated so a reversed record is
//! still strictly increasing.
//!
//! Sample timestamps mark the end of the step a sample drives when the record
//! is in forward time, and the start of it once reversed.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geokin::{
    earth_rate_n, gravity_n, polar_factor, skew, transport_rate_n, Dcm, EarthModel, GeoPosition,
    Mat3, Vec3, VelocityEnu,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    /// Angular rate `w_ib^b`, rad/s.
    pub gyro: [f64; 3],
    /// Specific force `f^b`, m/s^2.
    pub accel: [f64; 3],
}

impl ImuSample {
    pub fn new(t: f64, gyro: Vec3, accel: Vec3) -> Self {
        ImuSample {
            t,
            gyro: gyro.into(),
            accel: accel.into(),
        }
    }

    pub fn gyro(&self) -> Vec3 {
        Vector3::from(self.gyro)
    }

    pub fn accel(&self) -> Vec3 {
        Vector3::from(self.accel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub t: f64,
    /// `C_b^n`.
    pub att: Dcm,
    pub vel: VelocityEnu,
    pub pos: GeoPosition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn flip(self) -> Direction {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

const DT_TOLERANCE: f64 = 1e-9;

/// Uniformly sampled IMU data.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuRecord {
    samples: Vec<ImuSample>,
    dt: f64,
    direction: Direction,
}

impl ImuRecord {
    pub fn new(samples: Vec<ImuSample>, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("sample interval {dt} must be positive")));
        }
        if let Some(k) = first_bad_interval(&samples, dt) {
            return Err(Error::InvalidInput(format!(
                "non-uniform sampling between samples {k} and {} (t = {} -> {})",
                k + 1,
                samples[k].t,
                samples[k + 1].t
            )));
        }
        for (k, s) in samples.iter().enumerate() {
            if !(s.gyro.iter().chain(s.accel.iter()).all(|x| x.is_finite()) && s.t.is_finite()) {
                return Err(Error::InvalidInput(format!("sample {k} is not finite")));
            }
        }
        Ok(ImuRecord {
            samples,
            dt,
            direction: Direction::Forward,
        })
    }

    pub fn samples(&self) -> &[ImuSample] {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time direction the record is stored in.
    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time of the state the first sample starts from.
    pub fn start_time(&self) -> Option<f64> {
        let first = self.samples.first()?;
        Some(match self.direction {
            Direction::Forward => first.t - self.dt,
            Direction::Backward => first.t,
        })
    }

    /// Time of the state the last sample ends at.
    pub fn end_time(&self) -> Option<f64> {
        let last = self.samples.last()?;
        Some(match self.direction {
            Direction::Forward => last.t,
            Direction::Backward => last.t + self.dt,
        })
    }

    /// Stable fingerprint of the stored samples (bit patterns, not values).
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.dt.to_bits().hash(&mut h);
        for s in &self.samples {
            s.t.to_bits().hash(&mut h);
            for x in s.gyro.iter().chain(s.accel.iter()) {
                x.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

pub(crate) fn first_bad_interval(samples: &[ImuSample], dt: f64) -> Option<usize> {
    samples
        .windows(2)
        .position(|w| !((w[1].t - w[0].t - dt).abs() <= DT_TOLERANCE))
}

/// One step of the forward recursion.
///
/// Attitude: `C_k = R(-w_in) C_{k-1} R(w_ib)` with `w_in = w_ie + w_en` and
/// `R(w)` the rotation nearest to `I + T (w x)`. To first order this is
/// `C_{k-1} [I + T (w_nb x)]` with `w_nb = w_ib - C_{k-1}^T w_in`.
/// Velocity: `v_k = v_{k-1} + T [C_mid f - (2 w_ie + w_en) x v_{k-1} + g]`
/// where `C_mid` is the mean of the attitudes before and after the step.
/// Position: first-order in the previous velocity.
pub fn forward_step(s: &NavState, imu: &ImuSample, dt: f64, em: &EarthModel) -> Result<NavState> {
    let c = s.att.matrix();
    let w_ie = earth_rate_n(s.pos.lat, em);
    let w_en = transport_rate_n(&s.vel, &s.pos, em)?;

    let c_new = polar_factor(&(step_rotation(&-(w_ie + w_en), dt) * c * step_rotation(&imu.gyro(), dt)));
    let c_mid = 0.5 * (c + c_new);

    let coriolis = (2.0 * w_ie + w_en).cross(&s.vel);
    let vel = s.vel + dt * (c_mid * imu.accel() - coriolis + gravity_n(em));

    let rh = em.radius + s.pos.alt;
    let pos = GeoPosition {
        lat: s.pos.lat + dt * s.vel.y / rh,
        lon: s.pos.lon + dt * s.vel.x / (rh * s.pos.lat.cos()),
        alt: s.pos.alt + dt * s.vel.z,
    };

    Ok(NavState {
        t: s.t + dt,
        att: Dcm::from_matrix_unchecked(c_new),
        vel,
        pos,
    })
}

/// Rotation nearest to `I + dt (w x)`: angle `atan(dt |w|)` about `w`.
pub fn step_rotation(w: &Vec3, dt: f64) -> Mat3 {
    let n = w.norm();
    if n == 0.0 {
        return Mat3::identity();
    }
    let axis = w / n;
    let angle = (dt * n).atan();
    let k = skew(&axis);
    Mat3::identity() + angle.sin() * k + (1.0 - angle.cos()) * k * k
}

/// One step of the reversed recursion: from the state at the end of
/// `imu`'s interval back to its start. Delegates to [`forward_step`].
pub fn backward_step(s: &NavState, imu: &ImuSample, dt: f64, em: &EarthModel) -> Result<NavState> {
    let reversed = forward_step(&reverse_state(s), &reverse_sample(imu), dt, &em.reversed())?;
    Ok(reverse_state(&reversed))
}

/// Maps a state into reversed time (or back): time and velocity negated.
pub fn reverse_state(s: &NavState) -> NavState {
    NavState {
        t: -s.t,
        att: s.att,
        vel: -s.vel,
        pos: s.pos,
    }
}

pub fn reverse_sample(s: &ImuSample) -> ImuSample {
    ImuSample {
        t: -s.t,
        gyro: [-s.gyro[0], -s.gyro[1], -s.gyro[2]],
        accel: s.accel,
    }
}

pub fn reverse_record(record: &ImuRecord) -> ImuRecord {
    ImuRecord {
        samples: record.samples.iter().rev().map(reverse_sample).collect(),
        dt: record.dt,
        direction: record.direction.flip(),
    }
}

/// Reverses a record and the state at its end so the forward recursion
/// integrates back to the record start. Applying it twice is the identity.
pub fn reverse_transform(record: &ImuRecord, terminal: &NavState) -> Result<(ImuRecord, NavState)> {
    if record.is_empty() {
        return Err(Error::EmptyRecord);
    }
    Ok((reverse_record(record), reverse_state(terminal)))
}

/// Runs the recursion over a whole record, returning one state per sample in
/// the record's own time frame.
///
/// `Forward` walks the samples as stored starting from the record start;
/// `Backward` starts from the record end and walks to its start.
pub fn run_mechanization(
    record: &ImuRecord,
    init: &NavState,
    dir: Direction,
    em: &EarthModel,
) -> Result<Vec<NavState>> {
    let (start, end) = match (record.start_time(), record.end_time()) {
        (Some(s), Some(e)) => (s, e),
        _ => return Err(Error::EmptyRecord),
    };
    let expected = match dir {
        Direction::Forward => start,
        Direction::Backward => end,
    };
    if (init.t - expected).abs() > 0.5 * record.dt {
        return Err(Error::TimeAlignment(format!(
            "initial state at t = {} does not match record {} at t = {expected}",
            init.t,
            match dir {
                Direction::Forward => "start",
                Direction::Backward => "end",
            }
        )));
    }

    match dir {
        Direction::Forward => {
            let em = em.for_direction(record.direction);
            integrate(record, init, &em)
        }
        Direction::Backward => {
            let (rev, rev_init) = reverse_transform(record, init)?;
            let em = em.for_direction(rev.direction);
            let states = integrate(&rev, &rev_init, &em)?;
            Ok(states.iter().map(reverse_state).collect())
        }
    }
}

fn integrate(record: &ImuRecord, init: &NavState, em: &EarthModel) -> Result<Vec<NavState>> {
    let mut out = Vec::with_capacity(record.len());
    let mut s = *init;
    for imu in record.samples() {
        s = forward_step(&s, imu, record.dt, em)?;
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geokin::Euler;

    fn state_at(lat: f64, att: Dcm, vel: Vec3) -> NavState {
        NavState {
            t: 0.0,
            att,
            vel,
            pos: GeoPosition::new(lat, 0.1, 50.0).unwrap(),
        }
    }

    #[test]
    fn stationary_equilibrium() {
        let em = EarthModel::default();
        let s = state_at(0.0, Dcm::identity(), Vec3::zeros());
        let imu = ImuSample::new(
            0.01,
            earth_rate_n(0.0, &em),
            Vec3::new(0.0, 0.0, em.gravity),
        );
        let mut cur = s;
        for _ in 0..1000 {
            cur = forward_step(&cur, &imu, 0.01, &em).unwrap();
        }
        assert!(cur.vel.norm() < 1e-12);
        assert!((cur.pos.lat - s.pos.lat).abs() < 1e-12);
        assert!((cur.pos.alt - s.pos.alt).abs() < 1e-12);
        assert!((cur.att.matrix() - s.att.matrix()).norm() < 1e-12);
    }

    #[test]
    fn free_fall_gains_gravity() {
        let em = EarthModel { gravity: 9.8, ..Default::default() };
        let s = state_at(0.0, Dcm::identity(), Vec3::zeros());
        let imu = ImuSample::new(0.01, Vec3::zeros(), Vec3::zeros());
        let next = forward_step(&s, &imu, 0.01, &em).unwrap();
        assert!((next.vel - Vec3::new(0.0, 0.0, -9.8 * 0.01)).norm() < 1e-15);
    }

    #[test]
    fn latitude_increment() {
        let em = EarthModel::default();
        let mut s = state_at(0.0, Dcm::identity(), Vec3::new(0.0, 1.0, 0.0));
        s.pos.alt = 0.0;
        let imu = ImuSample::new(1.0, Vec3::zeros(), Vec3::new(0.0, 0.0, em.gravity));
        let next = forward_step(&s, &imu, 1.0, &em).unwrap();
        assert!((next.pos.lat - s.pos.lat - 1.5678e-7).abs() < 1e-11);
    }

    #[test]
    fn reverse_transform_substitutions() {
        let rec = ImuRecord::new(
            vec![ImuSample::new(1.0, Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 5.0, 6.0))],
            1.0,
        )
        .unwrap();
        let s = state_at(0.2, Dcm::identity(), Vec3::new(1.0, 2.0, 3.0));
        let (r, s2) = reverse_transform(&rec, &s).unwrap();
        assert_eq!(r.samples()[0].gyro, [-1.0, -2.0, -3.0]);
        assert_eq!(r.samples()[0].accel, [4.0, 5.0, 6.0]);
        assert_eq!(s2.vel, Vec3::new(-1.0, -2.0, -3.0));
        assert_eq!(s2.att, s.att);
        assert_eq!(s2.pos, s.pos);
    }

    #[test]
    fn reverse_transform_empty_record() {
        let rec = ImuRecord::new(vec![], 0.01).unwrap();
        let s = state_at(0.2, Dcm::identity(), Vec3::zeros());
        assert!(matches!(reverse_transform(&rec, &s), Err(Error::EmptyRecord)));
    }

    #[test]
    fn record_rejects_non_uniform() {
        let samples = vec![
            ImuSample::new(0.01, Vec3::zeros(), Vec3::zeros()),
            ImuSample::new(0.02, Vec3::zeros(), Vec3::zeros()),
            ImuSample::new(0.035, Vec3::zeros(), Vec3::zeros()),
        ];
        assert!(ImuRecord::new(samples, 0.01).is_err());
    }

    #[test]
    fn one_sample_record_matches_forward_step() {
        let em = EarthModel::at_latitude(0.5);
        let imu = ImuSample::new(0.008, Vec3::new(0.01, -0.02, 0.3), Vec3::new(0.1, 0.5, 9.7));
        let rec = ImuRecord::new(vec![imu], 0.008).unwrap();
        let s = state_at(0.5, Dcm::from_euler(Euler::new(0.01, 0.02, 1.0)), Vec3::new(3.0, 4.0, 0.0));
        let s = NavState { t: 0.0, ..s };
        let out = run_mechanization(&rec, &s, Direction::Forward, &em).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0], forward_step(&s, &imu, 0.008, &em).unwrap());
    }

    #[test]
    fn z_rotation_round_trip_restores_heading() {
        let em = EarthModel::at_latitude(0.6);
        let dt = 1e-3;
        let samples: Vec<ImuSample> = (1..=1000)
            .map(|k| ImuSample::new(k as f64 * dt, Vec3::new(0.0, 0.0, 0.5), Vec3::new(0.0, 0.0, em.gravity)))
            .collect();
        let rec = ImuRecord::new(samples, dt).unwrap();
        let s0 = NavState {
            t: 0.0,
            att: Dcm::from_euler(Euler::new(0.0, 0.0, 0.2)),
            vel: Vec3::zeros(),
            pos: GeoPosition::new(0.6, 0.0, 0.0).unwrap(),
        };
        let fwd = run_mechanization(&rec, &s0, Direction::Forward, &em).unwrap();
        let end = *fwd.last().unwrap();
        let back = run_mechanization(&rec, &end, Direction::Backward, &em).unwrap();
        let restored = back.last().unwrap();
        let dyaw = restored.att.to_euler().yaw - s0.att.to_euler().yaw;
        assert!(dyaw.abs() < 1e-5, "heading error {dyaw}");
        assert!((restored.t - s0.t).abs() < 1e-9);
    }

    #[test]
    fn attitude_stays_orthonormal() {
        let em = EarthModel::at_latitude(0.6);
        let imu = ImuSample::new(0.0, Vec3::new(0.3, -0.2, 0.7), Vec3::new(0.0, 1.0, em.gravity));
        let mut s = state_at(0.6, Dcm::identity(), Vec3::zeros());
        for _ in 0..100_000 {
            s = forward_step(&s, &imu, 0.008, &em).unwrap();
        }
        assert!(s.att.orthogonality_error() < 1e-9);
    }
}
