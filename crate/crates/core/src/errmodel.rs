//! 15-state error models of the strapdown solution.
//!
//! State order: `[alpha (3), dv (3), dL dlambda dh (3), gyro bias (3), accel bias (3)]`.
//! `alpha` are Euler platform error angles taking the true navigation frame
//! `n` onto the computed frame `n'`, so `C_b^n = C_n^n'^T C_b^n'`.
//! Error quantities are "computed minus true"; sensor errors are
//! "measured minus true".

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geokin::{
    earth_rate_n, skew, transport_rate_n, Dcm, EarthModel, GeoPosition, Mat3, Vec3,
    STANDARD_GRAVITY,
};
use crate::mech::{Direction, ImuSample, NavState};

pub const STATE_DIM: usize = 15;
pub const MEAS_DIM: usize = 6;

pub const IDX_ALPHA: usize = 0;
pub const IDX_VEL: usize = 3;
pub const IDX_POS: usize = 6;
pub const IDX_GYRO_BIAS: usize = 9;
pub const IDX_ACCEL_BIAS: usize = 12;

pub type StateVec = SVector<f64, STATE_DIM>;
pub type StateMat = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type MeasVec = SVector<f64, MEAS_DIM>;
pub type MeasMat = SMatrix<f64, MEAS_DIM, MEAS_DIM>;
pub type MeasJacobian = SMatrix<f64, MEAS_DIM, STATE_DIM>;

/// Cosine of `alpha_x` below which `C_omega` is treated as singular.
pub const GIMBAL_COS_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorState {
    pub alpha: Vec3,
    pub dvel: Vec3,
    /// `[dL (rad), dlambda (rad), dh (m)]`.
    pub dpos: Vec3,
    pub gyro_bias: Vec3,
    pub accel_bias: Vec3,
}

impl ErrorState {
    pub fn to_vector(&self) -> StateVec {
        let mut x = StateVec::zeros();
        x.fixed_rows_mut::<3>(IDX_ALPHA).copy_from(&self.alpha);
        x.fixed_rows_mut::<3>(IDX_VEL).copy_from(&self.dvel);
        x.fixed_rows_mut::<3>(IDX_POS).copy_from(&self.dpos);
        x.fixed_rows_mut::<3>(IDX_GYRO_BIAS).copy_from(&self.gyro_bias);
        x.fixed_rows_mut::<3>(IDX_ACCEL_BIAS).copy_from(&self.accel_bias);
        x
    }

    pub fn from_vector(x: &StateVec) -> Self {
        ErrorState {
            alpha: x.fixed_rows::<3>(IDX_ALPHA).into(),
            dvel: x.fixed_rows::<3>(IDX_VEL).into(),
            dpos: x.fixed_rows::<3>(IDX_POS).into(),
            gyro_bias: x.fixed_rows::<3>(IDX_GYRO_BIAS).into(),
            accel_bias: x.fixed_rows::<3>(IDX_ACCEL_BIAS).into(),
        }
    }
}

/// Inertial sensor error budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorBudget {
    /// rad/s
    pub gyro_bias_sigma: f64,
    /// Angle random walk, rad/sqrt(s).
    pub gyro_arw: f64,
    /// m/s^2
    pub accel_bias_sigma: f64,
    /// Velocity random walk, (m/s^2)/sqrt(Hz).
    pub accel_vrw: f64,
}

impl SensorBudget {
    pub fn zero() -> Self {
        SensorBudget {
            gyro_bias_sigma: 0.0,
            gyro_arw: 0.0,
            accel_bias_sigma: 0.0,
            accel_vrw: 0.0,
        }
    }

    /// Low-cost MEMS grade: 1 deg/h bias, 0.1 deg/sqrt(h) ARW, 2 mg bias,
    /// 1 mg/sqrt(Hz) white noise.
    pub fn mems() -> Self {
        SensorBudget::from_units(1.0, 0.1, 2.0, 1.0)
    }

    /// STIM300-class: 0.5 deg/h bias stability, 0.15 deg/sqrt(h) ARW,
    /// 1 mg bias, 0.06 mg/sqrt(Hz) noise.
    pub fn stim300() -> Self {
        SensorBudget::from_units(0.5, 0.15, 1.0, 0.06)
    }

    /// Builds a budget from datasheet units: deg/h, deg/sqrt(h), mg, mg/sqrt(Hz).
    pub fn from_units(gyro_bias_dph: f64, arw_dpsh: f64, accel_bias_mg: f64, vrw_mg_rthz: f64) -> Self {
        SensorBudget {
            gyro_bias_sigma: gyro_bias_dph.to_radians() / 3600.0,
            gyro_arw: arw_dpsh.to_radians() / 60.0,
            accel_bias_sigma: accel_bias_mg * 1e-3 * STANDARD_GRAVITY,
            accel_vrw: vrw_mg_rthz * 1e-3 * STANDARD_GRAVITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = [
            self.gyro_bias_sigma,
            self.gyro_arw,
            self.accel_bias_sigma,
            self.accel_vrw,
        ];
        if v.iter().all(|x| *x >= 0.0 && x.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("sensor budget must be nonnegative: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Nonlinear,
}

/// `C_n^n'` for Euler platform error angles, rotation order z, x, y.
pub fn cn_to_nprime(alpha: &Vec3) -> Dcm {
    let (sx, cx) = alpha.x.sin_cos();
    let (sy, cy) = alpha.y.sin_cos();
    let (sz, cz) = alpha.z.sin_cos();
    Dcm::from_matrix_unchecked(Mat3::new(
        cy * cz - sy * sx * sz,
        cy * sz + sy * sx * cz,
        -sy * cx,
        -cx * sz,
        cx * cz,
        sx,
        sy * cz + cy * sx * sz,
        sy * sz - cy * sx * cz,
        cy * cx,
    ))
}

/// Inverse of [`cn_to_nprime`]: the angles `alpha` with `C_n^n'(alpha) = m`.
pub fn alpha_from_dcm(m: &Dcm) -> Vec3 {
    let m = m.matrix();
    Vec3::new(
        m[(1, 2)].clamp(-1.0, 1.0).asin(),
        (-m[(0, 2)]).atan2(m[(2, 2)]),
        (-m[(1, 0)]).atan2(m[(1, 1)]),
    )
}

/// Maps `d(alpha)/dt` to the angular rate of `n'` relative to `n`, in `n'`.
pub fn c_omega(alpha: &Vec3) -> Result<Mat3> {
    let (sx, cx) = alpha.x.sin_cos();
    if cx.abs() < GIMBAL_COS_LIMIT {
        return Err(Error::GimbalSingularity { alpha_x: alpha.x });
    }
    let (sy, cy) = alpha.y.sin_cos();
    Ok(Mat3::new(cy, 0.0, -sy * cx, 0.0, 1.0, sx, sy, 0.0, cy * cx))
}

/// 2-norm condition number of `C_omega`; grows without bound as `cos(alpha_x) -> 0`.
pub fn c_omega_condition(alpha: &Vec3) -> Result<f64> {
    let m = c_omega(alpha)?;
    let sv = m.singular_values();
    Ok(sv.max() / sv.min())
}

fn c_omega_inverse(alpha: &Vec3) -> Result<Mat3> {
    let (sx, cx) = alpha.x.sin_cos();
    if cx.abs() < GIMBAL_COS_LIMIT {
        return Err(Error::GimbalSingularity { alpha_x: alpha.x });
    }
    let (sy, cy) = alpha.y.sin_cos();
    // det = cos(alpha_x)
    Ok(Mat3::new(
        cy,
        0.0,
        sy,
        sy * sx / cx,
        1.0,
        -cy * sx / cx,
        -sy / cx,
        0.0,
        cy / cx,
    ))
}

/// Earth and transport rates as seen with position/velocity `(pos, vel)`.
fn frame_rates(pos: &GeoPosition, vel: &Vec3, em: &EarthModel) -> Result<(Vec3, Vec3)> {
    Ok((earth_rate_n(pos.lat, em), transport_rate_n(vel, pos, em)?))
}

/// Continuous-time derivative of the error state under the large-angle model.
///
/// `nav` is the computed solution and `imu` the measured sample that drives
/// it. The same body serves both directions: in reversed time the filter
/// state carries the negated gyro bias, which is exactly the error of the
/// negated gyro input, and `em` is expected to be the reversed earth model.
pub fn nonlinear_dynamics(
    x: &ErrorState,
    nav: &NavState,
    imu: &ImuSample,
    _dir: Direction,
    em: &EarthModel,
) -> Result<StateVec> {
    let c_nn = *cn_to_nprime(&x.alpha).matrix();
    let c_w_inv = c_omega_inverse(&x.alpha)?;
    let c_bn = nav.att.matrix();

    let (w_ie, w_en) = frame_rates(&nav.pos, &nav.vel, em)?;
    let true_pos = GeoPosition {
        lat: nav.pos.lat - x.dpos.x,
        lon: nav.pos.lon - x.dpos.y,
        alt: nav.pos.alt - x.dpos.z,
    };
    let (w_ie_true, w_en_true) = frame_rates(&true_pos, &(nav.vel - x.dvel), em)?;
    let dw_ie = w_ie - w_ie_true;
    let dw_en = w_en - w_en_true;
    let w_in = w_ie + w_en;

    let identity = Mat3::identity();
    let alpha_dot = c_w_inv
        * ((identity - c_nn) * w_in + c_nn * (dw_ie + dw_en) - c_bn * x.gyro_bias);

    let f_n = c_bn * imu.accel();
    let dw = 2.0 * dw_ie + dw_en;
    let dvel_dot = (identity - c_nn.transpose()) * f_n + c_nn.transpose() * c_bn * x.accel_bias
        - dw.cross(&nav.vel)
        - (2.0 * w_ie + w_en).cross(&x.dvel)
        + dw.cross(&x.dvel);

    let dpos_dot = position_error_rate(x, nav, em);

    let mut out = StateVec::zeros();
    out.fixed_rows_mut::<3>(IDX_ALPHA).copy_from(&alpha_dot);
    out.fixed_rows_mut::<3>(IDX_VEL).copy_from(&dvel_dot);
    out.fixed_rows_mut::<3>(IDX_POS).copy_from(&dpos_dot);
    Ok(out)
}

fn position_error_rate(x: &ErrorState, nav: &NavState, em: &EarthModel) -> Vec3 {
    let rh = em.radius + nav.pos.alt;
    let (sin_l, cos_l) = nav.pos.lat.sin_cos();
    let sec = 1.0 / cos_l;
    let tan = sin_l / cos_l;
    let (ve, vn) = (nav.vel.x, nav.vel.y);
    Vec3::new(
        x.dvel.y / rh - vn / (rh * rh) * x.dpos.z,
        sec / rh * x.dvel.x + ve * sec * tan / rh * x.dpos.x - ve * sec / (rh * rh) * x.dpos.z,
        x.dvel.z,
    )
}

/// Continuous-time system matrix of the small-angle model, the first-order
/// expansion of [`nonlinear_dynamics`] about the zero error state.
pub fn linear_dynamics(nav: &NavState, imu: &ImuSample, em: &EarthModel) -> Result<StateMat> {
    let c_bn = *nav.att.matrix();
    let (w_ie, w_en) = frame_rates(&nav.pos, &nav.vel, em)?;
    let w_in = w_ie + w_en;
    let f_n = c_bn * imu.accel();

    let rh = em.radius + nav.pos.alt;
    let (sin_l, cos_l) = nav.pos.lat.sin_cos();
    let tan = sin_l / cos_l;
    let sec = 1.0 / cos_l;
    let (ve, vn) = (nav.vel.x, nav.vel.y);
    let we = em.earth_rate;

    // d(w_ie)/d(dv, dL, dh): only latitude enters.
    //   d(w_ie)/dL = [0, -we sinL, we cosL]
    let mut dwie_dpos = Mat3::zeros();
    dwie_dpos[(1, 0)] = -we * sin_l;
    dwie_dpos[(2, 0)] = we * cos_l;

    // w_en = [-vN/(R+h), vE/(R+h), vE tanL/(R+h)]
    //   d/d(dv) = [[0, -1, 0], [1, 0, 0], [tanL, 0, 0]] / (R+h)
    //   d/dL    = [0, 0, vE sec^2 L/(R+h)]
    //   d/dh    = [vN, -vE, -vE tanL] / (R+h)^2
    let dwen_dvel = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, tan, 0.0, 0.0) / rh;
    let mut dwen_dpos = Mat3::zeros();
    dwen_dpos[(2, 0)] = ve * sec * sec / rh;
    dwen_dpos[(0, 2)] = vn / (rh * rh);
    dwen_dpos[(1, 2)] = -ve / (rh * rh);
    dwen_dpos[(2, 2)] = -ve * tan / (rh * rh);

    let mut f = StateMat::zeros();
    let set = |f: &mut StateMat, r: usize, c: usize, m: &Mat3| {
        f.fixed_view_mut::<3, 3>(r, c).copy_from(m);
    };

    // attitude: -w_in x alpha + dw_in - C_b^n eps
    set(&mut f, IDX_ALPHA, IDX_ALPHA, &(-skew(&w_in)));
    set(&mut f, IDX_ALPHA, IDX_VEL, &dwen_dvel);
    set(&mut f, IDX_ALPHA, IDX_POS, &(dwie_dpos + dwen_dpos));
    set(&mut f, IDX_ALPHA, IDX_GYRO_BIAS, &(-c_bn));

    // velocity: f^n x alpha - (2 w_ie + w_en) x dv + v x (2 dw_ie + dw_en) + C_b^n nabla
    let v_cross = skew(&nav.vel);
    set(&mut f, IDX_VEL, IDX_ALPHA, &skew(&f_n));
    set(
        &mut f,
        IDX_VEL,
        IDX_VEL,
        &(-skew(&(2.0 * w_ie + w_en)) + v_cross * dwen_dvel),
    );
    set(&mut f, IDX_VEL, IDX_POS, &(v_cross * (2.0 * dwie_dpos + dwen_dpos)));
    set(&mut f, IDX_VEL, IDX_ACCEL_BIAS, &c_bn);

    // position
    f[(IDX_POS, IDX_VEL + 1)] = 1.0 / rh;
    f[(IDX_POS, IDX_POS + 2)] = -vn / (rh * rh);
    f[(IDX_POS + 1, IDX_VEL)] = sec / rh;
    f[(IDX_POS + 1, IDX_POS)] = ve * sec * tan / rh;
    f[(IDX_POS + 1, IDX_POS + 2)] = -ve * sec / (rh * rh);
    f[(IDX_POS + 2, IDX_VEL + 2)] = 1.0;

    Ok(f)
}

/// Measurement matrix selecting `[dv; dL dlambda dh]`.
pub fn measurement_model() -> MeasJacobian {
    let mut h = MeasJacobian::zeros();
    for i in 0..3 {
        h[(i, IDX_VEL + i)] = 1.0;
        h[(3 + i, IDX_POS + i)] = 1.0;
    }
    h
}

/// GNSS velocity and position observation, in the same time frame as the
/// navigation solution it is compared with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnssFix {
    pub t: f64,
    pub vel: Vec3,
    pub pos: GeoPosition,
}

impl GnssFix {
    /// Fix as seen from reversed time.
    pub fn reversed(&self) -> GnssFix {
        GnssFix {
            t: -self.t,
            vel: -self.vel,
            pos: self.pos,
        }
    }
}

/// `z = (computed vel, pos) - (GNSS vel, pos)`, positions in (rad, rad, m).
pub fn measurement_residual(nav: &NavState, fix: &GnssFix) -> MeasVec {
    let dv = nav.vel - fix.vel;
    MeasVec::new(
        dv.x,
        dv.y,
        dv.z,
        nav.pos.lat - fix.pos.lat,
        nav.pos.lon - fix.pos.lon,
        nav.pos.alt - fix.pos.alt,
    )
}

pub fn flip_gyro_bias(x: &ErrorState) -> ErrorState {
    ErrorState {
        gyro_bias: -x.gyro_bias,
        ..*x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geokin::Euler;

    // passive (frame) rotations
    fn rx(a: f64) -> Mat3 {
        let (s, c) = a.sin_cos();
        Mat3::new(1.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c)
    }
    fn ry(a: f64) -> Mat3 {
        let (s, c) = a.sin_cos();
        Mat3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c)
    }
    fn rz(a: f64) -> Mat3 {
        let (s, c) = a.sin_cos();
        Mat3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
    }

    #[test]
    fn cn_to_nprime_zero_is_identity() {
        assert_eq!(*cn_to_nprime(&Vec3::zeros()).matrix(), Mat3::identity());
    }

    #[test]
    fn cn_to_nprime_pure_z() {
        let th: f64 = 0.7;
        let (s, c) = th.sin_cos();
        let m = cn_to_nprime(&Vec3::new(0.0, 0.0, th));
        let expected = Mat3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0);
        assert!((m.matrix() - expected).norm() < 1e-15);
    }

    #[test]
    fn cn_to_nprime_matches_elementary_composition() {
        let a = Vec3::new(0.1, 0.2, 0.3);
        let oracle = ry(a.y) * rx(a.x) * rz(a.z);
        let m = cn_to_nprime(&a);
        assert!((m.matrix() - oracle).norm() < 1e-12);
        assert!(m.orthogonality_error() < 1e-12);
    }

    #[test]
    fn alpha_round_trip() {
        let a = Vec3::new(0.4, -1.1, 2.9);
        let back = alpha_from_dcm(&cn_to_nprime(&a));
        assert!((back - a).norm() < 1e-12);
    }

    #[test]
    fn c_omega_examples() {
        assert_eq!(c_omega(&Vec3::zeros()).unwrap(), Mat3::identity());
        let m = c_omega(&Vec3::new(0.0, std::f64::consts::FRAC_PI_2, 0.0)).unwrap();
        let expected = Mat3::new(0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
        assert!((m - expected).norm() < 1e-15);
        assert!(matches!(
            c_omega(&Vec3::new(std::f64::consts::FRAC_PI_2, 0.3, 1.0)),
            Err(Error::GimbalSingularity { .. })
        ));
    }

    #[test]
    fn c_omega_inverse_is_inverse() {
        let a = Vec3::new(0.5, -0.8, 2.0);
        let p = c_omega(&a).unwrap() * c_omega_inverse(&a).unwrap();
        assert!((p - Mat3::identity()).norm() < 1e-14);
        assert!((c_omega(&a).unwrap().determinant() - a.x.cos()).abs() < 1e-14);
        assert!(c_omega_condition(&a).unwrap() >= 1.0);
    }

    #[test]
    fn c_omega_angular_rate_matches_numeric_derivative() {
        // w x = -(dC/dt) C^T for C = C_n^n'(alpha(t)).
        let a = Vec3::new(0.3, -0.6, 1.2);
        let adot = Vec3::new(0.01, -0.02, 0.03);
        let h = 1e-6;
        let cp = cn_to_nprime(&(a + h * adot)).into_inner();
        let cm = cn_to_nprime(&(a - h * adot)).into_inner();
        let cdot = (cp - cm) / (2.0 * h);
        let w_skew = -cdot * cn_to_nprime(&a).into_inner().transpose();
        let w = Vec3::new(w_skew[(2, 1)], w_skew[(0, 2)], w_skew[(1, 0)]);
        assert!((w - c_omega(&a).unwrap() * adot).norm() < 1e-10);
    }

    #[test]
    fn c_omega_near_identity_for_small_angles() {
        for k in 1..50 {
            let a = Vec3::new(0.3, -0.2, 0.5) * (k as f64 * 1e-3);
            let d = (c_omega(&a).unwrap() - Mat3::identity()).norm();
            assert!(d <= 2.0 * a.norm());
        }
    }

    fn nav() -> NavState {
        NavState {
            t: 0.0,
            att: Dcm::from_euler(Euler::new(0.02, -0.01, 0.8)),
            vel: Vec3::new(5.0, 10.0, 0.1),
            pos: GeoPosition::new(0.6, 1.9, 30.0).unwrap(),
        }
    }

    fn sample() -> ImuSample {
        ImuSample::new(0.0, Vec3::new(0.01, 0.0, 0.05), Vec3::new(0.3, 1.0, 9.8))
    }

    #[test]
    fn zero_error_is_fixed_point() {
        let em = EarthModel::at_latitude(0.6);
        let d = nonlinear_dynamics(&ErrorState::default(), &nav(), &sample(), Direction::Forward, &em)
            .unwrap();
        assert!(d.norm() < 1e-15);
    }

    #[test]
    fn gyro_bias_drives_alpha() {
        let em = EarthModel::at_latitude(0.0);
        let nav = NavState {
            t: 0.0,
            att: Dcm::identity(),
            vel: Vec3::zeros(),
            pos: GeoPosition::new(0.0, 0.0, 0.0).unwrap(),
        };
        let e = 3e-6;
        let x = ErrorState {
            gyro_bias: Vec3::new(e, 0.0, 0.0),
            ..Default::default()
        };
        let d = nonlinear_dynamics(&x, &nav, &sample(), Direction::Forward, &em).unwrap();
        assert!((d.fixed_rows::<3>(IDX_ALPHA) - Vec3::new(-e, 0.0, 0.0)).norm() < 1e-20);
    }

    #[test]
    fn altitude_error_latitude_rate() {
        let em = EarthModel::at_latitude(0.0);
        let nav = NavState {
            t: 0.0,
            att: Dcm::identity(),
            vel: Vec3::new(0.0, 10.0, 0.0),
            pos: GeoPosition::new(0.0, 0.0, 0.0).unwrap(),
        };
        let x = ErrorState {
            dpos: Vec3::new(0.0, 0.0, 1.0),
            ..Default::default()
        };
        let d = nonlinear_dynamics(&x, &nav, &sample(), Direction::Forward, &em).unwrap();
        assert!((d[IDX_POS] + 2.458e-13).abs() < 1e-16);
    }

    // central-difference Jacobian of the nonlinear model at zero
    fn numeric_jacobian(nav: &NavState, imu: &ImuSample, em: &EarthModel) -> StateMat {
        let scales = [
            1e-4, 1e-4, 1e-4, 1e-2, 1e-2, 1e-2, 1e-7, 1e-7, 1.0, 1e-6, 1e-6, 1e-6, 1e-3, 1e-3,
            1e-3,
        ];
        let mut j = StateMat::zeros();
        for c in 0..STATE_DIM {
            let mut xp = StateVec::zeros();
            xp[c] = scales[c];
            let fp = nonlinear_dynamics(&ErrorState::from_vector(&xp), nav, imu, Direction::Forward, em)
                .unwrap();
            let fm = nonlinear_dynamics(&ErrorState::from_vector(&-xp), nav, imu, Direction::Forward, em)
                .unwrap();
            j.set_column(c, &((fp - fm) / (2.0 * scales[c])));
        }
        j
    }

    #[test]
    fn linear_model_matches_numeric_jacobian() {
        let em = EarthModel::at_latitude(0.6);
        let (nav, imu) = (nav(), sample());
        let f = linear_dynamics(&nav, &imu, &em).unwrap();
        let j = numeric_jacobian(&nav, &imu, &em);
        for r in 0..STATE_DIM {
            for c in 0..STATE_DIM {
                let scale = f[(r, c)].abs().max(j[(r, c)].abs());
                let diff = (f[(r, c)] - j[(r, c)]).abs();
                assert!(
                    diff <= 1e-6 * scale.max(1e-12),
                    "F[{r},{c}] = {} vs numeric {}",
                    f[(r, c)],
                    j[(r, c)]
                );
            }
        }
    }

    #[test]
    fn measurement_selector_layout() {
        let h = measurement_model();
        let x = ErrorState {
            alpha: Vec3::new(9.0, 9.0, 9.0),
            dvel: Vec3::new(1.0, 2.0, 3.0),
            gyro_bias: Vec3::new(7.0, 7.0, 7.0),
            ..Default::default()
        };
        assert_eq!(h * x.to_vector(), MeasVec::new(1.0, 2.0, 3.0, 0.0, 0.0, 0.0));
        assert_eq!(h * StateVec::zeros(), MeasVec::zeros());
        for r in 0..MEAS_DIM {
            assert_eq!(h.row(r).sum(), 1.0);
        }
        assert_eq!(h.iter().filter(|v| **v != 0.0).count(), 6);
        assert_eq!(h.fixed_view::<3, 3>(0, IDX_VEL), Mat3::identity());
        assert_eq!(h.fixed_view::<3, 3>(3, IDX_POS), Mat3::identity());
    }

    #[test]
    fn flip_gyro_bias_examples() {
        let x = ErrorState {
            alpha: Vec3::new(0.5, 0.6, 0.7),
            gyro_bias: Vec3::new(0.1, -0.2, 0.3),
            ..Default::default()
        };
        let y = flip_gyro_bias(&x);
        assert_eq!(y.gyro_bias, Vec3::new(-0.1, 0.2, -0.3));
        assert_eq!(y.alpha, x.alpha);
        assert_eq!(flip_gyro_bias(&y), x);
        assert_eq!(flip_gyro_bias(&ErrorState::default()).to_vector(), StateVec::zeros());
    }

    #[test]
    fn serialization_order() {
        let x = ErrorState {
            alpha: Vec3::new(0.0, 1.0, 2.0),
            dvel: Vec3::new(3.0, 4.0, 5.0),
            dpos: Vec3::new(6.0, 7.0, 8.0),
            gyro_bias: Vec3::new(9.0, 10.0, 11.0),
            accel_bias: Vec3::new(12.0, 13.0, 14.0),
        };
        let v = x.to_vector();
        for i in 0..STATE_DIM {
            assert_eq!(v[i], i as f64);
        }
        assert_eq!(ErrorState::from_vector(&v), x);
        // flipping commutes with the vector layout
        let mut flipped = v;
        flipped.fixed_rows_mut::<3>(IDX_GYRO_BIAS).neg_mut();
        assert_eq!(flip_gyro_bias(&x).to_vector(), flipped);
    }

    #[test]
    fn budget_units() {
        let b = SensorBudget::mems();
        assert!((b.gyro_bias_sigma - 4.848_136_811e-6).abs() < 1e-14);
        assert!((b.gyro_arw - 2.908_882_087e-5).abs() < 1e-13);
        assert!((b.accel_bias_sigma - 0.019_613_3).abs() < 1e-12);
        assert!((b.accel_vrw - 0.009_806_65).abs() < 1e-12);
    }
}
