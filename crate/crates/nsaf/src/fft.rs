//! Forward/inverse FFT between physical samples and centered Fourier
//! coefficients.
//!
//! Coefficients are true series coefficients for the centered box: the phase
//! twist (-1)^(i1+...+in) converts between DFT output (samples indexed from
//! x = -L/2) and coefficients of exp(i xi . x). The pair is exactly unitary:
//! inverse(forward(f)) = f to round-off.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::field::{FieldError, PhysicalField, SpectralField};
use crate::grid::Grid;

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans_for(len: usize) -> Arc<Plans> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Plans>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    map.entry(len)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Plans {
                forward: planner.plan_fft_forward(len),
                inverse: planner.plan_fft_inverse(len),
            })
        })
        .clone()
}

/// Transform every axis of the row-major buffer, in place.
fn fft_all_axes(buf: &mut [Complex64], grid: Grid, forward: bool) {
    let npts = grid.points();
    let plans = plans_for(npts);
    let plan = if forward { &plans.forward } else { &plans.inverse };

    // Last axis is contiguous; handle it by rows. Other axes via transpose
    // into a scratch buffer so the FFT always runs on contiguous lines.
    let rows = buf.len() / npts;
    let process_rows = |data: &mut [Complex64]| {
        data.par_chunks_mut(npts * 8.max(rows / 64).min(rows))
            .for_each(|chunk| {
                let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
                for line in chunk.chunks_exact_mut(npts) {
                    plan.process_with_scratch(line, &mut scratch);
                }
            });
    };

    match grid.dim() {
        2 => {
            process_rows(buf);
            transpose_square(buf, npts);
            process_rows(buf);
            transpose_square(buf, npts);
        }
        3 => {
            // axis 2 (contiguous rows)
            process_rows(buf);
            // axes 0 and 1 by gather/scatter lines
            let strides = grid.strides();
            for axis in [0usize, 1] {
                let stride = strides[axis];
                let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
                let mut line = vec![Complex64::default(); npts];
                for base in line_bases(grid, axis) {
                    for (k, v) in line.iter_mut().enumerate() {
                        *v = buf[base + k * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (k, v) in line.iter().enumerate() {
                        buf[base + k * stride] = *v;
                    }
                }
            }
        }
        d => unreachable!("unsupported dimension {d}"),
    }
}

fn transpose_square(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// Linear base offsets of all lines along `axis`.
fn line_bases(grid: Grid, axis: usize) -> Vec<usize> {
    let npts = grid.points();
    let strides = grid.strides();
    let mut bases = Vec::with_capacity(grid.len() / npts);
    let others: Vec<usize> = (0..grid.dim()).filter(|a| *a != axis).collect();
    let mut counters = vec![0usize; others.len()];
    loop {
        let base: usize = others
            .iter()
            .zip(&counters)
            .map(|(a, c)| c * strides[*a])
            .sum();
        bases.push(base);
        let mut k = others.len();
        loop {
            if k == 0 {
                return bases;
            }
            k -= 1;
            counters[k] += 1;
            if counters[k] < npts {
                break;
            }
            counters[k] = 0;
        }
    }
}

fn index_parity_sign(grid: Grid, idx: usize) -> f64 {
    let ix = grid.unravel(idx);
    let s: usize = ix[..grid.dim()].iter().sum();
    if s % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Physical samples -> centered Fourier coefficients.
pub fn forward(f: &PhysicalField) -> SpectralField {
    let grid = f.grid();
    let mut buf: Vec<Complex64> = f.data().iter().map(|v| Complex64::new(*v, 0.0)).collect();
    fft_all_axes(&mut buf, grid, true);
    let scale = 1.0 / grid.len() as f64;
    for (idx, v) in buf.iter_mut().enumerate() {
        *v *= scale * index_parity_sign(grid, idx);
    }
    SpectralField::new(grid, buf, f.time_tag()).expect("sizes match")
}

/// Centered Fourier coefficients -> physical samples.
///
/// Errors if the inverse leaves more than 1e-12 relative imaginary residue,
/// which signals a multiplier that broke Hermitian symmetry.
pub fn inverse(f: &SpectralField) -> Result<PhysicalField, FieldError> {
    let grid = f.grid();
    let mut buf: Vec<Complex64> = f
        .data()
        .iter()
        .enumerate()
        .map(|(idx, v)| v * index_parity_sign(grid, idx))
        .collect();
    fft_all_axes(&mut buf, grid, false);
    let mut max = 0.0f64;
    let mut residue = 0.0f64;
    for v in &buf {
        max = max.max(v.re.abs());
        residue = residue.max(v.im.abs());
    }
    if max > 0.0 && residue > 1e-12 * max.max(1e-300) && residue > 1e-280 {
        return Err(FieldError::ImaginaryResidue { residue, max });
    }
    let data: Vec<f64> = buf.iter().map(|v| v.re).collect();
    PhysicalField::new(grid, data, f.time_tag())
}

/// Inverse for spectra that are Hermitian by construction (kernel symbols,
/// products of transforms of real fields): takes the real part without the
/// residue gate, so fields at the rounding floor do not trip it.
pub fn inverse_real_unchecked(f: &SpectralField) -> Result<PhysicalField, FieldError> {
    let grid = f.grid();
    let mut buf: Vec<Complex64> = f
        .data()
        .iter()
        .enumerate()
        .map(|(idx, v)| v * index_parity_sign(grid, idx))
        .collect();
    fft_all_axes(&mut buf, grid, false);
    let data: Vec<f64> = buf.iter().map(|v| v.re).collect();
    PhysicalField::new(grid, data, f.time_tag())
}

/// Inverse transform that keeps the raw complex output; used by oracles.
pub fn inverse_complex(f: &SpectralField) -> Vec<Complex64> {
    let grid = f.grid();
    let mut buf: Vec<Complex64> = f
        .data()
        .iter()
        .enumerate()
        .map(|(idx, v)| v * index_parity_sign(grid, idx))
        .collect();
    fft_all_axes(&mut buf, grid, false);
    buf
}

/// L2 norm computed in physical space, sqrt(sum f^2 dx^n).
pub fn l2_physical(f: &PhysicalField) -> f64 {
    (f.data().iter().map(|v| v * v).sum::<f64>() * f.grid().cell_volume()).sqrt()
}

/// L2 norm computed from coefficients, sqrt(L^n sum |c|^2); equals the
/// physical norm by Parseval.
pub fn l2_spectral(f: &SpectralField) -> f64 {
    let vol = f.grid().length().powi(f.grid().dim() as i32);
    (f.data().iter().map(|v| v.norm_sqr()).sum::<f64>() * vol).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_field(grid: Grid, seed: u64) -> PhysicalField {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        PhysicalField::new(grid, data, 0.0).unwrap()
    }

    #[test]
    fn constant_field_is_pure_dc() {
        let grid = Grid::new(2, 32, 5.0).unwrap();
        let f = PhysicalField::from_fn(grid, 0.0, |_| 3.25);
        let s = forward(&f);
        assert!((s.data()[0].re - 3.25).abs() < 1e-13);
        assert!(s.data()[0].im.abs() < 1e-13);
        let rest: f64 = s.data()[1..].iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(rest < 1e-13);
    }

    #[test]
    fn single_cosine_mode() {
        let grid = Grid::new(2, 32, 5.0).unwrap();
        let l = grid.length();
        let f = PhysicalField::from_fn(grid, 0.0, |x| (2.0 * std::f64::consts::PI * x[0] / l).cos());
        let s = forward(&f);
        let npts = grid.points();
        // modes (+-1, 0) each carry 1/2
        let plus = s.data()[npts]; // i0 = 1, i1 = 0
        let minus = s.data()[(npts - 1) * npts];
        assert!((plus.re - 0.5).abs() < 1e-13 && plus.im.abs() < 1e-13);
        assert!((minus.re - 0.5).abs() < 1e-13 && minus.im.abs() < 1e-13);
        let total: f64 = s.data().iter().map(|v| v.norm()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn round_trip_random_2d() {
        let grid = Grid::new(2, 64, 7.0).unwrap();
        let f = rand_field(grid, 7);
        let back = inverse(&forward(&f)).unwrap();
        let err = f
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12 * f.max_abs());
    }

    #[test]
    fn round_trip_random_3d() {
        let grid = Grid::new(3, 16, 3.0).unwrap();
        let f = rand_field(grid, 9);
        let back = inverse(&forward(&f)).unwrap();
        let err = f
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn hermitian_symmetry_of_real_input() {
        let grid = Grid::new(2, 32, 4.0).unwrap();
        let s = forward(&rand_field(grid, 3));
        assert!(s.hermitian_defect() < 1e-12);
    }

    #[test]
    fn parseval() {
        let grid = Grid::new(2, 64, 11.0).unwrap();
        let f = rand_field(grid, 21);
        let a = l2_physical(&f);
        let b = l2_spectral(&forward(&f));
        assert!((a - b).abs() < 1e-12 * a);
    }
}
