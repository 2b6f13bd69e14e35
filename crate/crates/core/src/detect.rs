//! Successive interference cancellation front-ends.
//!
//! Both detectors reduce each slot to one real statistic per code bit of
//! the antenna currently being decoded. The QR front-end rotates the
//! receive vector once and walks the triangular factor from the last
//! antenna upward; the MMSE front-end applies one linear filter row per
//! antenna to an explicitly cancelled receive vector. Either way the
//! statistic of a QPSK symbol splits into independent I and Q parts
//! because the per-layer gain is real.

use num_complex::Complex;
use thiserror::Error;

use crate::linalg::{cholesky_solve, CMat, LinalgError, QrFactors};
use crate::real::Real;

pub use crate::linalg::householder_qr as qr_decompose;

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("linear SNR must be positive, got {0}")]
    InvalidSnr(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Which front-end turns receive vectors into bit statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detector {
    VBlast,
    Mmse,
}

/// Rotates the receive vector into the triangular basis: `Q^H y`.
pub fn vblast_project<T: Real>(qr: &QrFactors<T>, y: &[Complex<T>]) -> Vec<Complex<T>> {
    qr.q.hermitian().mul_vec(y)
}

/// Removes one decided symbol from a residual: `y' <- y' - column * x`.
pub fn cancel_in_place<T: Real>(
    residual: &mut [Complex<T>],
    column: &[Complex<T>],
    symbol: Complex<T>,
) {
    assert_eq!(residual.len(), column.len(), "cancellation dimension mismatch");
    for (r, &c) in residual.iter_mut().zip(column) {
        *r -= c * symbol;
    }
}

/// Bit statistics of antenna `a` from a triangular-basis residual.
///
/// With the diagonal of `R` real and nonnegative, the I and Q bits see
/// `r_aa * Re(w')` and `r_aa * Im(w')` where `w'` is component `a` of the
/// residual. A zero pivot (erased layer) yields exact zero statistics.
/// BPSK reads only the first entry.
pub fn vblast_bit_statistics<T: Real>(
    qr: &QrFactors<T>,
    residual: &[Complex<T>],
    antenna: usize,
) -> [T; 2] {
    let r_aa = qr.r_diag(antenna);
    let w = residual[antenna];
    [r_aa * w.re, r_aa * w.im]
}

/// Linear MMSE filter rows and their effective per-antenna gains.
#[derive(Debug, Clone)]
pub struct MmseFilter<T> {
    /// `N_t x N_r`; row `a` is the filter `w_a^H` of antenna `a`.
    pub w_h: CMat<T>,
    /// Real part of `w_a^H h_a`; positive for every antenna.
    pub gains: Vec<T>,
}

/// Solves `(H^H H + I / snr) W^H = H^H` without forming an inverse.
pub fn mmse_filter<T: Real>(h: &CMat<T>, snr_linear: T) -> Result<MmseFilter<T>, DetectError> {
    if !(snr_linear > T::zero()) || !snr_linear.is_finite() {
        return Err(DetectError::InvalidSnr(snr_linear.to_f64()));
    }
    let n_t = h.cols();
    let mut gram = h.gram();
    let reg = T::one() / snr_linear;
    for j in 0..n_t {
        gram[(j, j)] += Complex::new(reg, T::zero());
    }
    let w_h = cholesky_solve(&gram, &h.hermitian())?;
    let gains = (0..n_t)
        .map(|a| {
            let mut g = Complex::new(T::zero(), T::zero());
            for k in 0..h.rows() {
                g += w_h[(a, k)] * h[(k, a)];
            }
            // The diagonal of W^H H is real by construction; the imaginary
            // part is numerical dust.
            g.re
        })
        .collect();
    Ok(MmseFilter { w_h, gains })
}

/// Successive-cancellation filter bank: row `a` is the minimum-MSE filter
/// for antenna `a` given that antennas decoded before it (`a+1..`) are
/// already subtracted from the receive vector, so it is solved from the
/// leading `a + 1` columns of `H` alone. One Hermitian solve per antenna.
///
/// The last row coincides with the corresponding [`mmse_filter`] row;
/// every earlier row stops spending degrees of freedom on interference
/// that cancellation has removed, which is what makes the successive
/// receiver worth running.
pub fn mmse_sic_filter<T: Real>(h: &CMat<T>, snr_linear: T) -> Result<MmseFilter<T>, DetectError> {
    if !(snr_linear > T::zero()) || !snr_linear.is_finite() {
        return Err(DetectError::InvalidSnr(snr_linear.to_f64()));
    }
    let (n_r, n_t) = (h.rows(), h.cols());
    let reg = T::one() / snr_linear;
    let mut w_h = CMat::zeros(n_t, n_r);
    let mut gains = Vec::with_capacity(n_t);
    for a in 0..n_t {
        let lead = CMat::from_fn(n_r, a + 1, |i, j| h[(i, j)]);
        let mut gram = lead.gram();
        for j in 0..=a {
            gram[(j, j)] += Complex::new(reg, T::zero());
        }
        let rows = cholesky_solve(&gram, &lead.hermitian())?;
        let mut g = Complex::new(T::zero(), T::zero());
        for k in 0..n_r {
            w_h[(a, k)] = rows[(a, k)];
            g += rows[(a, k)] * h[(k, a)];
        }
        gains.push(g.re);
    }
    Ok(MmseFilter { w_h, gains })
}

/// Filter output of antenna `a`: `z = w_a^H y'`.
pub fn mmse_filtered_output<T: Real>(
    filter: &MmseFilter<T>,
    residual: &[Complex<T>],
    antenna: usize,
) -> Complex<T> {
    let mut z = Complex::new(T::zero(), T::zero());
    for (k, &y) in residual.iter().enumerate() {
        z += filter.w_h[(antenna, k)] * y;
    }
    z
}

/// Bit statistics of antenna `a` from a cancelled receive vector.
///
/// With `z = w_a^H y'` and the real effective gain `g_a`, the I and Q bits
/// see `g_a * Re(z)` and `g_a * Im(z)`. BPSK reads only the first entry.
pub fn mmse_bit_statistics<T: Real>(
    filter: &MmseFilter<T>,
    residual: &[Complex<T>],
    antenna: usize,
) -> [T; 2] {
    let z = mmse_filtered_output(filter, residual, antenna);
    let g = filter.gains[antenna];
    [g * z.re, g * z.im]
}

/// Mean squared estimation error of a linear receiver `x_hat = W^H y` on
/// `y = H x + nu` with unit-power symbols and noise variance `n0`:
/// `||I - W^H H||_F^2 + n0 ||W^H||_F^2`.
pub fn linear_receiver_mse<T: Real>(h: &CMat<T>, w_h: &CMat<T>, n0: T) -> T {
    let n_t = h.cols();
    let wh_h = w_h.mul(h);
    let mut mse = T::zero();
    for i in 0..n_t {
        for j in 0..n_t {
            let target = if i == j { T::one() } else { T::zero() };
            let d = Complex::new(wh_h[(i, j)].re - target, wh_h[(i, j)].im);
            mse += d.norm_sqr();
        }
        for k in 0..h.rows() {
            mse += n0 * w_h[(i, k)].norm_sqr();
        }
    }
    mse
}
