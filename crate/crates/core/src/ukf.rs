//! Scaled unscented transform, linear Kalman measurement update and a
//! first-order linearized time update.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative pivot size below which a covariance direction is treated as
/// exactly degenerate.
const PIVOT_TINY: f64 = 1e-14;
/// Relative negative pivot tolerated before declaring the matrix indefinite.
const PIVOT_NEG_TOL: f64 = 1e-9;
const JITTER: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState<const N: usize> {
    pub mean: SVector<f64, N>,
    pub cov: SMatrix<f64, N, N>,
}

impl<const N: usize> GaussianState<N> {
    pub fn new(mean: SVector<f64, N>, cov: SMatrix<f64, N, N>) -> Self {
        GaussianState { mean, cov }
    }

    pub fn symmetrize(&mut self) {
        self.cov = 0.5 * (self.cov + self.cov.transpose());
    }

    pub fn cov_diagonal(&self) -> SVector<f64, N> {
        self.cov.diagonal()
    }
}

/// Process noise density and measurement noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig<const N: usize, const M: usize> {
    /// Continuous-time process noise spectral density; `Q dt` per step.
    pub process_psd: SMatrix<f64, N, N>,
    pub meas_cov: SMatrix<f64, M, M>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtParams {
    pub alpha_ut: f64,
    pub beta_ut: f64,
    pub kappa_ut: f64,
}

impl Default for UtParams {
    fn default() -> Self {
        UtParams {
            alpha_ut: 1e-2,
            beta_ut: 2.0,
            kappa_ut: 0.0,
        }
    }
}

/// Scaled-UT weights for dimension `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtWeights {
    pub lambda: f64,
    pub mean0: f64,
    pub cov0: f64,
    pub rest: f64,
}

impl UtParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.alpha_ut > 0.0 && self.alpha_ut <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "alpha_ut must lie in (0, 1], got {}",
                self.alpha_ut
            )));
        }
        let w = self.weights(n);
        if !(w.lambda + n as f64 > 0.0) || !self.beta_ut.is_finite() {
            return Err(Error::InvalidInput(format!(
                "UT parameters give non-positive lambda + n ({})",
                w.lambda + n as f64
            )));
        }
        Ok(())
    }

    pub fn weights(&self, n: usize) -> UtWeights {
        let n = n as f64;
        let lambda = self.alpha_ut * self.alpha_ut * (n + self.kappa_ut) - n;
        let mean0 = lambda / (n + lambda);
        UtWeights {
            lambda,
            mean0,
            cov0: mean0 + 1.0 - self.alpha_ut * self.alpha_ut + self.beta_ut,
            rest: 0.5 / (n + lambda),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SigmaPoints<const N: usize> {
    pub points: Vec<SVector<f64, N>>,
    pub weights: UtWeights,
}

impl<const N: usize> SigmaPoints<N> {
    pub fn mean_weight(&self, i: usize) -> f64 {
        if i == 0 {
            self.weights.mean0
        } else {
            self.weights.rest
        }
    }

    pub fn cov_weight(&self, i: usize) -> f64 {
        if i == 0 {
            self.weights.cov0
        } else {
            self.weights.rest
        }
    }

    /// Weighted mean and covariance of the (possibly transformed) points.
    pub fn reconstruct(&self, points: &[SVector<f64, N>]) -> GaussianState<N> {
        // Accumulate offsets from the central point: the weights sum to one
        // but the central weight is large and negative for small alpha_ut.
        let center = points[0];
        let mut offset = SVector::<f64, N>::zeros();
        for p in &points[1..] {
            offset += p - center;
        }
        let mean = center + self.weights.rest * offset;
        let mut cov = SMatrix::<f64, N, N>::zeros();
        for (i, p) in points.iter().enumerate() {
            let d = p - mean;
            cov += self.cov_weight(i) * d * d.transpose();
        }
        let mut g = GaussianState { mean, cov };
        g.symmetrize();
        g
    }
}

/// Lower Cholesky factor of a positive semidefinite matrix. Degenerate
/// directions get a zero column instead of failing.
pub fn cholesky_psd<const N: usize>(m: &SMatrix<f64, N, N>) -> Option<SMatrix<f64, N, N>> {
    let mut l = SMatrix::<f64, N, N>::zeros();
    for j in 0..N {
        let scale = m[(j, j)].abs();
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !d.is_finite() || d < -PIVOT_NEG_TOL * scale.max(f64::MIN_POSITIVE) {
            return None;
        }
        if d <= PIVOT_TINY * scale {
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..N {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

fn factor<const N: usize>(cov: &SMatrix<f64, N, N>) -> Result<SMatrix<f64, N, N>> {
    if let Some(l) = cholesky_psd(cov) {
        return Ok(l);
    }
    let mut jittered = *cov;
    for i in 0..N {
        jittered[(i, i)] += JITTER * cov[(i, i)].abs().max(f64::MIN_POSITIVE);
    }
    cholesky_psd(&jittered).ok_or(Error::CholeskyFailure)
}

pub fn sigma_points<const N: usize>(g: &GaussianState<N>, p: &UtParams) -> Result<SigmaPoints<N>> {
    let weights = p.weights(N);
    let l = factor(&g.cov)?;
    let c = (N as f64 + weights.lambda).sqrt();
    let mut points = Vec::with_capacity(2 * N + 1);
    points.push(g.mean);
    for i in 0..N {
        points.push(g.mean + c * l.column(i));
    }
    for i in 0..N {
        points.push(g.mean - c * l.column(i));
    }
    Ok(SigmaPoints { points, weights })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

/// One explicit step of `dx/dt = f(tau, x)` over `dt`; `tau` is the fraction
/// of the step elapsed (0, 0.5 or 1).
pub fn integrate<const N: usize, F>(
    x: &SVector<f64, N>,
    dt: f64,
    integrator: Integrator,
    f: &mut F,
) -> Result<SVector<f64, N>>
where
    F: FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>>,
{
    match integrator {
        Integrator::Euler => Ok(x + dt * f(0.0, x)?),
        Integrator::Rk4 => {
            let k1 = f(0.0, x)?;
            let k2 = f(0.5, &(x + 0.5 * dt * k1))?;
            let k3 = f(0.5, &(x + 0.5 * dt * k2))?;
            let k4 = f(1.0, &(x + dt * k3))?;
            Ok(x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        }
    }
}

/// Propagates sigma points through one integration step of the dynamics and
/// adds `q_psd * dt`.
pub fn ut_time_update<const N: usize, F>(
    g: &GaussianState<N>,
    p: &UtParams,
    integrator: Integrator,
    dt: f64,
    q_psd: &SMatrix<f64, N, N>,
    mut dynamics: F,
) -> Result<GaussianState<N>>
where
    F: FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>>,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    let sp = sigma_points(g, p)?;
    let moved = sp
        .points
        .iter()
        .map(|x| integrate(x, dt, integrator, &mut dynamics))
        .collect::<Result<Vec<_>>>()?;
    let mut out = sp.reconstruct(&moved);
    out.cov += q_psd * dt;
    out.symmetrize();
    Ok(out)
}

/// Linearized prediction of `dx/dt = F x + b` with `Phi = I + F dt`.
pub fn kf_time_update<const N: usize>(
    g: &GaussianState<N>,
    f: &SMatrix<f64, N, N>,
    b: &SVector<f64, N>,
    dt: f64,
    q_psd: &SMatrix<f64, N, N>,
) -> GaussianState<N> {
    let phi = SMatrix::<f64, N, N>::identity() + f * dt;
    let mut out = GaussianState {
        mean: phi * g.mean + b * dt,
        cov: phi * g.cov * phi.transpose() + q_psd * dt,
    };
    out.symmetrize();
    out
}

#[derive(Debug, Clone)]
pub struct MeasurementUpdate<const N: usize, const M: usize> {
    pub state: GaussianState<N>,
    pub innovation: SVector<f64, M>,
    pub gain: SMatrix<f64, N, M>,
}

/// Kalman update for `z = H x + v`, `v ~ N(0, R)`, Joseph-form covariance.
pub fn linear_measurement_update<const N: usize, const M: usize>(
    g: &GaussianState<N>,
    z: &SVector<f64, M>,
    h: &SMatrix<f64, M, N>,
    r: &SMatrix<f64, M, M>,
) -> Result<MeasurementUpdate<N, M>> {
    let innovation = z - h * g.mean;
    let s = h * g.cov * h.transpose() + r;
    let s = 0.5 * (s + s.transpose());
    let s_inv = s
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::SingularInnovation)?;
    let gain = g.cov * h.transpose() * s_inv;
    let ikh = SMatrix::<f64, N, N>::identity() - gain * h;
    let mut state = GaussianState {
        mean: g.mean + gain * innovation,
        cov: ikh * g.cov * ikh.transpose() + gain * r * gain.transpose(),
    };
    state.symmetrize();
    Ok(MeasurementUpdate {
        state,
        innovation,
        gain,
    })
}
