//! Composite heat-kernel atlas.
//!
//! Evaluates fields of the form dt^l grad^beta R_k1..R_kr (-Delta)^(-p/2) G(t)
//! through a single Fourier symbol and one inverse transform. Time derivatives
//! are realized as (-|xi|^2)^l since dt G = Delta G. A Hermite closed form for
//! pure derivatives grad^alpha G serves as the independent oracle.

use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::field::{FieldError, PhysicalField, SpectralField};
use crate::grid::{Grid, MAX_DIM};

/// Hard cap on |beta| + 2l; higher orders amplify the spectral tail.
pub const MAX_DERIVATIVE_ORDER: u32 = 12;
/// Relative boundary level above which a kernel clearly does not fit the box.
pub const BOX_DECAY_ABORT: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kernel time must be positive, got {0}")]
    BadTime(f64),
    #[error("derivative order |beta| + 2l = {0} exceeds cap {MAX_DERIVATIVE_ORDER}")]
    UnsupportedOrder(u32),
    #[error("under-resolved kernel: sqrt(4t) = {width:.3e} violates sqrt(4t) >= 3 dx = {limit:.3e}")]
    GridTooCoarse { width: f64, limit: f64 },
    #[error(
        "under-resolved kernel: sqrt(4t) * xi_max = {product:.3e} violates sqrt(4t) * xi_max >= 6"
    )]
    SpectrumTruncated { product: f64 },
    #[error("kernel does not fit the box: boundary level {level:.3e} of max exceeds {BOX_DECAY_ABORT:.1e}")]
    BoxTooSmall { level: f64 },
    #[error("hermite oracle supports |alpha| <= 12, got {0}")]
    HermiteOrder(u32),
    #[error("divergent time weight: l + a = {0} must be negative for the tail mode")]
    DivergentTail(f64),
    #[error("divergent time weight: l + a = {0} must be below -1 for an infinite horizon")]
    DivergentHorizon(f64),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Multiplier shape dt^l grad^beta R_{k1}..R_{kr} (-Delta)^(-p/2) G.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KernelShape {
    pub dt_order: u32,
    pub grad: [u32; MAX_DIM],
    pub riesz: Vec<u8>,
    pub inv_sqrt_pow: u32,
}

impl KernelShape {
    pub fn gauss() -> Self {
        Self {
            dt_order: 0,
            grad: [0; MAX_DIM],
            riesz: Vec::new(),
            inv_sqrt_pow: 0,
        }
    }

    pub fn derivative(beta: [u32; MAX_DIM]) -> Self {
        Self {
            grad: beta,
            ..Self::gauss()
        }
    }

    pub fn order(&self) -> u32 {
        self.grad.iter().sum::<u32>() + 2 * self.dt_order
    }

    fn i_power(&self) -> usize {
        (self.grad.iter().sum::<u32>() as usize + self.riesz.len()) % 4
    }

    /// Symbol value at the wavenumber xi (without the exp(-t q) factor and
    /// without the box normalization).
    fn prefactor(&self, xi: &[f64]) -> Complex64 {
        let q: f64 = xi.iter().map(|v| v * v).sum();
        if q == 0.0 {
            // m(0) := 0 when a singular factor is present, delta_{l+|beta|,0}
            // otherwise
            let plain = self.riesz.is_empty() && self.inv_sqrt_pow == 0;
            let constant = self.dt_order == 0 && self.grad.iter().all(|g| *g == 0);
            return if plain && constant {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        let mut mag = (-q).powi(self.dt_order as i32);
        debug_assert!(self.grad[xi.len()..].iter().all(|g| *g == 0));
        for (axis, g) in self.grad[..xi.len()].iter().enumerate() {
            if *g > 0 {
                mag *= xi[axis].powi(*g as i32);
            }
        }
        let norm = q.sqrt();
        for k in &self.riesz {
            mag *= xi[*k as usize] / norm;
        }
        if self.inv_sqrt_pow > 0 {
            mag *= norm.powi(-(self.inv_sqrt_pow as i32));
        }
        match self.i_power() {
            0 => Complex64::new(mag, 0.0),
            1 => Complex64::new(0.0, mag),
            2 => Complex64::new(-mag, 0.0),
            _ => Complex64::new(0.0, -mag),
        }
    }
}

/// One weighted kernel; `t_power` is an explicit extra t^power factor used by
/// profiles whose coefficients carry their own time scaling.
#[derive(Debug, Clone)]
pub struct KernelTerm {
    pub shape: KernelShape,
    pub coeff: f64,
    pub t_power: f64,
}

/// Finite linear combination of kernels; every expansion profile is one.
#[derive(Debug, Clone, Default)]
pub struct KernelSum {
    terms: Vec<KernelTerm>,
}

impl KernelSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, shape: KernelShape, coeff: f64) {
        self.push_scaled(shape, coeff, 0.0);
    }

    pub fn push_scaled(&mut self, shape: KernelShape, coeff: f64, t_power: f64) {
        if coeff != 0.0 {
            self.terms.push(KernelTerm {
                shape,
                coeff,
                t_power,
            });
        }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[KernelTerm] {
        &self.terms
    }

    /// Accumulate scale * symbol(t, xi) into `acc` (length grid.len()).
    ///
    /// Nyquist planes are zeroed: the -N/2 frequency has no +N/2 partner, so
    /// odd-order symbols there would break Hermitian symmetry. The resolution
    /// guard keeps those coefficients at the spectral-tail level anyway.
    pub fn accumulate_symbol(&self, grid: Grid, t: f64, scale: f64, acc: &mut [Complex64]) {
        let freqs = grid.freqs();
        let npts = grid.points();
        let n = grid.dim();
        let nyquist = npts / 2;
        let vol_inv = scale / grid.length().powi(n as i32);
        let mut xi = [0.0f64; MAX_DIM];
        for (idx, v) in acc.iter_mut().enumerate() {
            let mut rem = idx;
            let mut on_nyquist = false;
            for axis in (0..n).rev() {
                let i = rem % npts;
                on_nyquist |= i == nyquist;
                xi[axis] = freqs[i];
                rem /= npts;
            }
            if on_nyquist {
                continue;
            }
            let q: f64 = xi[..n].iter().map(|z| z * z).sum();
            let heat = (-t * q).exp();
            let mut s = Complex64::new(0.0, 0.0);
            for term in &self.terms {
                let w = if term.t_power == 0.0 {
                    term.coeff
                } else {
                    term.coeff * t.powf(term.t_power)
                };
                s += term.shape.prefactor(&xi[..n]) * w;
            }
            *v += s * heat * vol_inv;
        }
    }

    pub fn eval_spectral(&self, grid: Grid, t: f64) -> SpectralField {
        let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
        self.accumulate_symbol(grid, t, 1.0, &mut acc);
        SpectralField::new(grid, acc, t).expect("sizes match")
    }

    pub fn eval(&self, grid: Grid, t: f64) -> Result<PhysicalField, KernelError> {
        // symbols are Hermitian by construction (real coefficients, conjugate
        // symmetric shapes, Nyquist zeroed), so skip the residue gate: profiles
        // whose coefficients cancel to the rounding floor are legitimate
        Ok(crate::fft::inverse_real_unchecked(&self.eval_spectral(grid, t))?)
    }
}

/// Descriptor of one composite kernel at a fixed evaluation time.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub shape: KernelShape,
    pub t: f64,
}

impl KernelSpec {
    pub fn new(
        dt_order: u32,
        grad: [u32; MAX_DIM],
        riesz: Vec<u8>,
        inv_sqrt_pow: u32,
        t: f64,
    ) -> Self {
        Self {
            shape: KernelShape {
                dt_order,
                grad,
                riesz,
                inv_sqrt_pow,
            },
            t,
        }
    }
}

/// Check the resolution preconditions for evaluating a kernel of the given
/// order at time t.
pub fn check_resolution(grid: Grid, t: f64, order: u32) -> Result<(), KernelError> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(KernelError::BadTime(t));
    }
    if order > MAX_DERIVATIVE_ORDER {
        return Err(KernelError::UnsupportedOrder(order));
    }
    let width = (4.0 * t).sqrt();
    let product = width * grid.freq_max();
    if product < 6.0 {
        return Err(KernelError::SpectrumTruncated { product });
    }
    let limit = 3.0 * grid.dx();
    if width < limit {
        return Err(KernelError::GridTooCoarse { width, limit });
    }
    Ok(())
}

/// Evaluate one composite kernel on the grid via its Fourier symbol.
pub fn kernel_field(spec: &KernelSpec, grid: Grid) -> Result<PhysicalField, KernelError> {
    check_resolution(grid, spec.t, spec.shape.order())?;
    let mut sum = KernelSum::new();
    sum.push(spec.shape.clone(), 1.0);
    let field = sum.eval(grid, spec.t)?;
    let level = field.boundary_decay();
    if level > BOX_DECAY_ABORT {
        return Err(KernelError::BoxTooSmall { level });
    }
    Ok(field)
}

fn hermite_value(order: u32, z: f64) -> f64 {
    // physicists' recurrence H_{k+1} = 2 z H_k - 2 k H_{k-1}
    let mut h0 = 1.0;
    if order == 0 {
        return h0;
    }
    let mut h1 = 2.0 * z;
    for k in 1..order {
        let h2 = 2.0 * z * h1 - 2.0 * k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// Closed form for grad^alpha G(t, x) in any dimension, used to validate the
/// spectral route.
pub fn hermite_gauss_derivative(alpha: &[u32], t: f64, x: &[f64]) -> Result<f64, KernelError> {
    assert_eq!(alpha.len(), x.len());
    if !(t > 0.0 && t.is_finite()) {
        return Err(KernelError::BadTime(t));
    }
    let total: u32 = alpha.iter().sum();
    if total > MAX_DERIVATIVE_ORDER {
        return Err(KernelError::HermiteOrder(total));
    }
    let n = x.len() as f64;
    let four_t = 4.0 * t;
    let mut value = (std::f64::consts::PI * four_t).powf(-n / 2.0);
    let mut r2 = 0.0;
    for (a, xi) in alpha.iter().zip(x) {
        let z = xi / four_t.sqrt();
        r2 += xi * xi;
        let sign = if a % 2 == 0 { 1.0 } else { -1.0 };
        value *= sign * four_t.powf(-(*a as f64) / 2.0) * hermite_value(*a, z);
    }
    Ok(value * (-r2 / four_t).exp())
}

/// Time weight mode for the correction-term coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeWeightMode {
    /// integral over (0, t] of s^l (1+s)^a ds; t may be infinite
    Finite(f64),
    /// integral over (t, infinity) of s^l ((1+s)^a - s^a) ds
    Tail(f64),
}

fn binom_general(a: f64, k: u32) -> f64 {
    let mut v = 1.0;
    for i in 0..k {
        v *= (a - i as f64) / (i as f64 + 1.0);
    }
    v
}

/// Scalar time weights appearing in the correction terms, to relative 1e-10.
pub fn scalar_time_weight(l: u32, a: f64, mode: TimeWeightMode) -> Result<f64, KernelError> {
    let lf = l as f64;
    match mode {
        TimeWeightMode::Finite(t) => {
            if t.is_finite() {
                Ok(crate::quad::adaptive_simpson(
                    |s| s.powi(l as i32) * (1.0 + s).powf(a),
                    0.0,
                    t,
                    1e-11,
                ))
            } else {
                if lf + a >= -1.0 {
                    return Err(KernelError::DivergentHorizon(lf + a));
                }
                let big = 1e5;
                let head = crate::quad::adaptive_simpson(
                    |s| s.powi(l as i32) * (1.0 + s).powf(a),
                    0.0,
                    big,
                    1e-11,
                );
                // (1+s)^a = s^a sum_k C(a,k) s^-k beyond the cutoff
                let mut tail = 0.0;
                for k in 0..8u32 {
                    let expo = lf + a - k as f64 + 1.0;
                    tail += binom_general(a, k) * big.powf(expo) / (-expo);
                }
                Ok(head + tail)
            }
        }
        TimeWeightMode::Tail(t) => {
            if lf + a >= 0.0 {
                return Err(KernelError::DivergentTail(lf + a));
            }
            let integrand = |s: f64| {
                // s^(l+a) ((1+1/s)^a - 1), evaluated stably
                s.powf(lf + a) * (a * (1.0 / s).ln_1p()).exp_m1()
            };
            let big = (1e5f64).max(1e3 * t);
            let head = crate::quad::adaptive_simpson(integrand, t, big, 1e-11);
            let mut tail = 0.0;
            for k in 1..9u32 {
                let expo = lf + a - k as f64 + 1.0;
                tail += binom_general(a, k) * big.powf(expo) / (-expo);
            }
            Ok(head + tail)
        }
    }
}
