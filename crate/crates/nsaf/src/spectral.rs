//! Fourier multiplier algebra: derivatives, Riesz transforms, inverse
//! Laplacians, the Leray projection and the Biot-Savart reconstruction.
//!
//! Multipliers singular at xi = 0 take the value 0 there; every field they
//! act on in this crate has zero mean (vorticities are curls). Odd-symbol
//! operators (derivative, Riesz, Biot-Savart, curl) zero the Nyquist planes:
//! the -N/2 frequency has no positive partner, so an odd symbol there cannot
//! satisfy m(-xi) = conj(m(xi)).

use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::fft::{forward, inverse};
use crate::field::{FieldError, PhysicalField, SpectralField};
use crate::grid::Grid;

/// 1.0 away from Nyquist planes, 0.0 on them.
fn nyquist_mask(grid: Grid, idx: usize) -> f64 {
    let npts = grid.points();
    let ix = grid.unravel(idx);
    if ix[..grid.dim()].iter().any(|i| *i == npts / 2) {
        0.0
    } else {
        1.0
    }
}

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("multiplier returned a non-finite value at xi = {xi:?}")]
    BadMultiplier { xi: Vec<f64> },
    #[error("biot-savart requires zero-mean vorticity: |mean| = {mean:.3e} exceeds {limit:.3e}")]
    NonzeroMean { mean: f64, limit: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// coeff'(xi) = m(xi) coeff(xi). The closure receives the signed wavenumber
/// vector. Hermitian symmetry is preserved whenever m(-xi) = conj(m(xi)).
pub fn apply_multiplier(
    f: &SpectralField,
    m: impl Fn(&[f64]) -> Complex64,
) -> Result<SpectralField, SpectralError> {
    let grid = f.grid();
    let freqs = grid.freqs();
    let n = grid.dim();
    let npts = grid.points();
    let mut out = f.clone();
    let mut xi = [0.0f64; crate::grid::MAX_DIM];
    for (idx, v) in out.data_mut().iter_mut().enumerate() {
        let mut rem = idx;
        for axis in (0..n).rev() {
            xi[axis] = freqs[rem % npts];
            rem /= npts;
        }
        let mv = m(&xi[..n]);
        if !mv.re.is_finite() || !mv.im.is_finite() {
            return Err(SpectralError::BadMultiplier {
                xi: xi[..n].to_vec(),
            });
        }
        *v *= mv;
    }
    Ok(out)
}

/// Partial derivative along `axis` (multiplier i xi_axis).
pub fn derivative(f: &SpectralField, axis: usize) -> SpectralField {
    let mut out = apply_multiplier(f, |xi| Complex64::new(0.0, xi[axis])).expect("finite multiplier");
    let grid = out.grid();
    for (idx, v) in out.data_mut().iter_mut().enumerate() {
        *v *= nyquist_mask(grid, idx);
    }
    out
}

/// Riesz transform R_k = partial_k (-Delta)^(-1/2), multiplier i xi_k / |xi|.
pub fn riesz(f: &SpectralField, axis: usize) -> SpectralField {
    let mut out = apply_multiplier(f, |xi| {
        let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, xi[axis] / norm)
        }
    })
    .expect("finite multiplier");
    let grid = out.grid();
    for (idx, v) in out.data_mut().iter_mut().enumerate() {
        *v *= nyquist_mask(grid, idx);
    }
    out
}

/// (-Delta)^(-s/2) with m(0) = 0.
pub fn inv_laplacian_pow(f: &SpectralField, s: f64) -> SpectralField {
    apply_multiplier(f, |xi| {
        let q = xi.iter().map(|v| v * v).sum::<f64>();
        if q == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(q.powf(-s / 2.0), 0.0)
        }
    })
    .expect("finite multiplier")
}

/// Heat semigroup exp(t Delta), multiplier exp(-t |xi|^2).
pub fn heat(f: &SpectralField, t: f64) -> SpectralField {
    apply_multiplier(f, |xi| {
        let q = xi.iter().map(|v| v * v).sum::<f64>();
        Complex64::new((-t * q).exp(), 0.0)
    })
    .expect("finite multiplier")
}

/// Leray projection of a 2D vector field: P_jk = delta_jk - xi_j xi_k / |xi|^2.
pub fn leray_project(
    u1: &SpectralField,
    u2: &SpectralField,
) -> (SpectralField, SpectralField) {
    let p = |a: &SpectralField, b: &SpectralField, row: usize| {
        let mut out = if row == 0 { a.clone() } else { b.clone() };
        let grid = a.grid();
        let freqs = grid.freqs();
        let npts = grid.points();
        for (idx, v) in out.data_mut().iter_mut().enumerate() {
            let xi = [freqs[idx / npts], freqs[idx % npts]];
            let q = xi[0] * xi[0] + xi[1] * xi[1];
            if q == 0.0 {
                continue; // mean part is already divergence free
            }
            let dot = xi[0] * a.data()[idx] + xi[1] * b.data()[idx];
            *v -= xi[row] * dot / q;
        }
        out
    };
    (p(u1, u2, 0), p(u1, u2, 1))
}

/// Spectral divergence max |xi . u_hat|, relative to the largest coefficient.
pub fn divergence_defect(u1: &SpectralField, u2: &SpectralField) -> f64 {
    let grid = u1.grid();
    let freqs = grid.freqs();
    let npts = grid.points();
    let mut max_div = 0.0f64;
    let mut max_coeff = 0.0f64;
    for idx in 0..grid.len() {
        let xi = [freqs[idx / npts], freqs[idx % npts]];
        let d = (xi[0] * u1.data()[idx] + xi[1] * u2.data()[idx]).norm();
        max_div = max_div.max(d);
        max_coeff = max_coeff
            .max(u1.data()[idx].norm().hypot(u2.data()[idx].norm()));
    }
    if max_coeff == 0.0 {
        0.0
    } else {
        max_div / (max_coeff * grid.freq_max())
    }
}

/// Velocity from 2D scalar vorticity: u1_hat = i xi_2 / |xi|^2 w_hat,
/// u2_hat = -i xi_1 / |xi|^2 w_hat. Requires zero-mean vorticity since the
/// inverse Laplacian is only defined on mean-free fields.
pub fn biot_savart_spectral(
    w: &SpectralField,
) -> Result<(SpectralField, SpectralField), SpectralError> {
    let grid = w.grid();
    assert_eq!(grid.dim(), 2, "biot-savart path is two dimensional");
    let mean = w.data()[0].norm();
    let l1_proxy: f64 = w.data().iter().map(|v| v.norm()).sum();
    let limit = 1e-10 * l1_proxy.max(1e-300);
    if mean > limit {
        return Err(SpectralError::NonzeroMean { mean, limit });
    }
    let mut u1 = apply_multiplier(w, |xi| {
        let q = xi[0] * xi[0] + xi[1] * xi[1];
        if q == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, xi[1] / q)
        }
    })?;
    let mut u2 = apply_multiplier(w, |xi| {
        let q = xi[0] * xi[0] + xi[1] * xi[1];
        if q == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, -xi[0] / q)
        }
    })?;
    for (idx, (a, b)) in u1
        .data_mut()
        .iter_mut()
        .zip(u2.data_mut().iter_mut())
        .enumerate()
    {
        let m = nyquist_mask(grid, idx);
        *a *= m;
        *b *= m;
    }
    Ok((u1, u2))
}

/// Physical-space Biot-Savart wrapper used by the solver and tests.
pub fn biot_savart(w: &PhysicalField) -> Result<(PhysicalField, PhysicalField), SpectralError> {
    let w_hat = forward(w);
    let (u1, u2) = biot_savart_spectral(&w_hat)?;
    Ok((inverse(&u1)?, inverse(&u2)?))
}

/// curl u = d1 u2 - d2 u1 for the 2D scalar vorticity.
pub fn curl(u1: &SpectralField, u2: &SpectralField) -> SpectralField {
    let mut out = u1.clone();
    let grid = u1.grid();
    let freqs = grid.freqs();
    let npts = grid.points();
    for (idx, v) in out.data_mut().iter_mut().enumerate() {
        let xi = [freqs[idx / npts], freqs[idx % npts]];
        *v = (Complex64::new(0.0, xi[0]) * u2.data()[idx]
            - Complex64::new(0.0, xi[1]) * u1.data()[idx])
            * nyquist_mask(grid, idx);
    }
    out
}
