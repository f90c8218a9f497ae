//! Transmit/receive mathematics: eigen-beamforming, zero-forcing, the linear
//! MMSE receiver, its error covariance, SINR and per-user rate.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::channel::ArrayGeometry;
use crate::error::{Error, Result};
use crate::linalg::{c, dominant_eigenpair, hpd_inverse, principal_submatrix, trace_re, CMat, CVec};

/// Tolerance on MSE values outside `(0, 1]` before they are rejected.
pub const MSE_TOL: f64 = 1e-9;

/// Relative tolerance on a negative dominant eigenvalue before the input is
/// rejected as not PSD.
pub const PSD_TOL: f64 = 1e-10;

/// Per-slot link budget shared by all users.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Power per stream per PRB, `P`, in watts.
    pub stream_power_w: f64,
    /// Noise power per PRB, `sigma_n^2`, in watts.
    pub noise_power_w: f64,
    pub prb_bandwidth_hz: f64,
    pub slot_duration_s: f64,
    /// Truncated-Shannon cap per stream, bit/s/Hz.
    pub se_cap: f64,
    /// Streams per user, `L_k` (1 or 2).
    pub streams_per_user: usize,
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("stream_power_w", self.stream_power_w),
            ("noise_power_w", self.noise_power_w),
            ("prb_bandwidth_hz", self.prb_bandwidth_hz),
            ("slot_duration_s", self.slot_duration_s),
            ("se_cap", self.se_cap),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(1..=2).contains(&self.streams_per_user) {
            return Err(Error::InvalidArgument(format!(
                "streams_per_user must be 1 or 2, got {}",
                self.streams_per_user
            )));
        }
        Ok(())
    }
}

/// Rate summary of one user on one slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRate {
    /// Stream-averaged SINR per PRB (linear).
    pub sinr: Vec<f64>,
    /// Mean over PRBs of the capped spectral efficiency, summed over streams.
    pub spectral_efficiency: f64,
    /// Bits delivered in the slot.
    pub rate_bits: f64,
}

/// Eigen-beamformer `W_k = (I_L (x) u) sqrt(P)` on the full array.
///
/// `u` is the dominant unit eigenvector of `R_avg`; stream `l` is sent on
/// polarization `l`.
pub fn eigen_beamformer(r_avg: &CMat, streams: usize, power: f64, geometry: &ArrayGeometry) -> Result<CMat> {
    let active: Vec<usize> = (0..geometry.per_pol()).collect();
    masked_eigen_beamformer(r_avg, &active, streams, power, geometry)
}

/// Eigen-beamformer restricted to the per-polarization elements in `active`.
///
/// The eigenvector is computed on the principal submatrix of `R_avg`, which
/// has the same non-zero spectrum as the masked covariance. Muted rows of the
/// returned `M x L` matrix are exactly zero. An empty `active` set gives the
/// zero precoder.
pub fn masked_eigen_beamformer(
    r_avg: &CMat,
    active: &[usize],
    streams: usize,
    power: f64,
    geometry: &ArrayGeometry,
) -> Result<CMat> {
    let pp = geometry.per_pol();
    if r_avg.nrows() != pp || r_avg.ncols() != pp {
        return Err(Error::DimensionMismatch(format!(
            "R_avg is {}x{}, expected {pp}x{pp}",
            r_avg.nrows(),
            r_avg.ncols()
        )));
    }
    if !(1..=ArrayGeometry::POLARIZATIONS).contains(&streams) {
        return Err(Error::InvalidArgument(format!(
            "eigen-beamforming maps streams to polarizations, got {streams} streams"
        )));
    }
    if !(power.is_finite() && power >= 0.0) {
        return Err(Error::InvalidArgument(format!("stream power {power}")));
    }
    let mut w = CMat::zeros(geometry.total(), streams);
    if active.is_empty() {
        return Ok(w);
    }
    let sub = principal_submatrix(r_avg, active);
    let u = dominant_direction(&sub)?;
    let amp = c(power.sqrt(), 0.0);
    for l in 0..streams {
        for (k, &i) in active.iter().enumerate() {
            w[(l * pp + i, l)] = u[k] * amp;
        }
    }
    Ok(w)
}

fn dominant_direction(r: &CMat) -> Result<CVec> {
    let (lambda, u) = dominant_eigenpair(r)?;
    let scale = trace_re(r).abs().max(f64::MIN_POSITIVE);
    if lambda < -PSD_TOL * scale {
        return Err(Error::NotPsd(format!("dominant eigenvalue {lambda:e}")));
    }
    Ok(u)
}

fn stream_columns(w_all: &CMat, own: &Range<usize>) -> Result<CMat> {
    if own.end > w_all.ncols() || own.start >= own.end {
        return Err(Error::DimensionMismatch(format!(
            "stream range {own:?} outside precoder with {} columns",
            w_all.ncols()
        )));
    }
    Ok(w_all.columns(own.start, own.len()).into_owned())
}

/// Linear MMSE receiver `V_k = (H W W^H H^H + sigma^2 I)^{-1} H W_k`, where
/// `W` stacks every user's precoder and `own` picks user k's columns.
pub fn mmse_receiver(h: &CMat, w_all: &CMat, own: Range<usize>, noise_power: f64) -> Result<CMat> {
    if h.ncols() != w_all.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "channel has {} columns, precoder has {} rows",
            h.ncols(),
            w_all.nrows()
        )));
    }
    if !(noise_power > 0.0) {
        return Err(Error::InvalidArgument("noise power must be positive".into()));
    }
    let w_k = stream_columns(w_all, &own)?;
    let hw = h * w_all;
    let n = h.nrows();
    let cov = &hw * hw.adjoint() + CMat::identity(n, n) * c(noise_power, 0.0);
    Ok(hpd_inverse(&cov)? * (h * w_k))
}

/// Error covariance `E_k = (I + H_eff^H R^{-1} H_eff)^{-1}` with
/// `H_eff = H W_k` and `R` the interference-plus-noise covariance.
pub fn mmse_error_covariance(h: &CMat, w_k: &CMat, r_in: &CMat) -> Result<CMat> {
    if h.ncols() != w_k.nrows() || r_in.nrows() != h.nrows() || r_in.ncols() != h.nrows() {
        return Err(Error::DimensionMismatch("error covariance operands".into()));
    }
    let h_eff = h * w_k;
    let r_inv = hpd_inverse(r_in)?;
    let l = w_k.ncols();
    let inner = CMat::identity(l, l) + h_eff.adjoint() * r_inv * &h_eff;
    hpd_inverse(&inner)
}

/// Error covariance from its definition for an arbitrary receiver `V`:
/// `V^H (H W W^H H^H + sigma^2 I) V - V^H H W_k - W_k^H H^H V + I`.
pub fn expanded_error_covariance(
    h: &CMat,
    w_all: &CMat,
    own: Range<usize>,
    v: &CMat,
    noise_power: f64,
) -> Result<CMat> {
    let w_k = stream_columns(w_all, &own)?;
    let hw = h * w_all;
    let n = h.nrows();
    let cov = &hw * hw.adjoint() + CMat::identity(n, n) * c(noise_power, 0.0);
    let cross = v.adjoint() * h * &w_k;
    let l = w_k.ncols();
    Ok(v.adjoint() * cov * v - &cross - cross.adjoint() + CMat::identity(l, l))
}

/// Stream-averaged SINR `(1/L) sum_i (1/MSE_i - 1)`.
pub fn sinr_from_mse(e: &CMat) -> Result<f64> {
    let l = e.nrows();
    if l == 0 || e.ncols() != l {
        return Err(Error::DimensionMismatch("error covariance must be square".into()));
    }
    let mut acc = 0.0;
    for i in 0..l {
        let mse = e[(i, i)].re;
        if !(mse > 0.0) || mse > 1.0 + MSE_TOL {
            return Err(Error::OutOfRange(format!("MSE {mse} outside (0, 1]")));
        }
        acc += (1.0 / mse - 1.0).max(0.0);
    }
    Ok(acc / l as f64)
}

/// Capped spectral efficiency for `streams` streams at stream-averaged `sinr`.
pub fn capped_se(sinr: f64, streams: usize, se_cap: f64) -> f64 {
    let l = streams as f64;
    ((1.0 + sinr).log2() * l).min(se_cap * l)
}

/// Per-user rate over the PRBs of a slot with no inter-user interference
/// (`R = sigma^2 I`).
pub fn user_rate(prbs: &[CMat], w_k: &CMat, link: &LinkParams) -> Result<UserRate> {
    if prbs.is_empty() {
        return Err(Error::Empty("rate needs at least one PRB".into()));
    }
    let l = w_k.ncols();
    let mut sinr = Vec::with_capacity(prbs.len());
    let mut se_sum = 0.0;
    for h in prbs {
        if h.ncols() != w_k.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "channel has {} columns, precoder has {} rows",
                h.ncols(),
                w_k.nrows()
            )));
        }
        let h_eff = h * w_k;
        let gram = h_eff.adjoint() * &h_eff * c(1.0 / link.noise_power_w, 0.0);
        let e = hpd_inverse(&(CMat::identity(l, l) + gram))?;
        let s = sinr_from_mse(&e)?;
        se_sum += capped_se(s, l, link.se_cap);
        sinr.push(s);
    }
    Ok(UserRate {
        sinr,
        spectral_efficiency: se_sum / prbs.len() as f64,
        rate_bits: se_sum * link.prb_bandwidth_hz * link.slot_duration_s,
    })
}

fn gram_inverse(h: &CMat) -> Result<CMat> {
    if h.nrows() > h.ncols() {
        return Err(Error::Singular(format!(
            "{} users exceed {} antennas",
            h.nrows(),
            h.ncols()
        )));
    }
    hpd_inverse(&(h * h.adjoint()))
}

/// Zero-forcing precoder `W = H^H (H H^H)^{-1}` for stacked single-antenna
/// users `H` (`K x M`).
pub fn zf_precoder(h: &CMat) -> Result<CMat> {
    Ok(h.adjoint() * gram_inverse(h)?)
}

/// `b_k = 1 / [(H H^H)^{-1}]_{kk}` for every user.
pub fn zf_gains(h: &CMat) -> Result<Vec<f64>> {
    let g = gram_inverse(h)?;
    Ok((0..h.nrows()).map(|k| 1.0 / g[(k, k)].re).collect())
}

/// `b_k = 1 / ||w_k||^2` from the precoder columns.
pub fn zf_gains_from_precoder(w: &CMat) -> Vec<f64> {
    w.column_iter().map(|col| 1.0 / col.norm_squared()).collect()
}

/// Zero-forcing rate of user `k`, `B log2(1 + b_k P / sigma^2)`.
pub fn zf_user_rate(h: &CMat, k: usize, power: f64, noise_power: f64, bandwidth: f64) -> Result<f64> {
    if k >= h.nrows() {
        return Err(Error::OutOfRange(format!("user {k} of {}", h.nrows())));
    }
    let b = zf_gains(h)?[k];
    Ok(bandwidth * (1.0 + b * power / noise_power).log2())
}

/// Zero-forcing rate from the SINR definition with interference terms kept,
/// `B log2(1 + P |h_k w_k|^2/||w_k||^2 / (sum_j P |h_k w_j|^2/||w_j||^2 + sigma^2))`.
pub fn zf_user_rate_direct(h: &CMat, w: &CMat, k: usize, power: f64, noise_power: f64, bandwidth: f64) -> f64 {
    let row = h.row(k);
    let gain = |j: usize| {
        let col = w.column(j);
        (row * col)[(0, 0)].norm_sqr() / col.norm_squared()
    };
    let interference: f64 = (0..w.ncols()).filter(|&j| j != k).map(|j| power * gain(j)).sum();
    bandwidth * (1.0 + power * gain(k) / (interference + noise_power)).log2()
}
