//! Weighted Lq norms, residual statements, and decay-slope regression.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::PhysicalField;
use crate::quad::linear_fit;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("norm weight gate: outer-shell share {share:.3e} exceeds {limit:.3e}")]
    TailGate { share: f64, limit: f64 },
    #[error("slope fit needs at least {need} positive samples in the window, got {got}")]
    Window { need: usize, got: usize },
    #[error("slope fit requires positive norms; found {0}")]
    NonPositive(f64),
}

/// Lebesgue exponent restricted to the set the grid evaluates exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Q {
    One,
    Two,
    Inf,
}

impl Q {
    /// (n/2)(1 - 1/q) exponent contribution for dimension n.
    pub fn decay_exponent(self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            Q::One => 0.0,
            Q::Two => n / 4.0,
            Q::Inf => n / 2.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Q::One => "1",
            Q::Two => "2",
            Q::Inf => "inf",
        }
    }
}

/// Norm of |x|^mu f in L^q.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormSpec {
    pub q: Q,
    pub mu: f64,
}

impl NormSpec {
    pub fn plain(q: Q) -> Self {
        Self { q, mu: 0.0 }
    }
}

/// || |x|^mu f ||_q with centered box coordinates; q in {1,2}: Riemann sum
/// times dx^n, q = inf: grid max.
pub fn weighted_norm(f: &PhysicalField, spec: NormSpec) -> f64 {
    let grid = f.grid();
    let coords = grid.coords();
    let npts = grid.points();
    let n = grid.dim();
    let mut acc = 0.0f64;
    let mut maxv = 0.0f64;
    for (idx, v) in f.data().iter().enumerate() {
        let mut rem = idx;
        let mut r2 = 0.0;
        for _ in 0..n {
            let c = coords[rem % npts];
            r2 += c * c;
            rem /= npts;
        }
        let w = if spec.mu == 0.0 {
            1.0
        } else {
            r2.sqrt().powf(spec.mu)
        };
        let g = w * v.abs();
        match spec.q {
            Q::One => acc += g,
            Q::Two => acc += g * g,
            Q::Inf => maxv = maxv.max(g),
        }
    }
    match spec.q {
        Q::One => acc * grid.cell_volume(),
        Q::Two => (acc * grid.cell_volume()).sqrt(),
        Q::Inf => maxv,
    }
}

/// Share of the weighted-norm integrand carried by the outermost shell; the
/// reliability gauge for large weights.
pub fn weighted_norm_shell_share(f: &PhysicalField, spec: NormSpec, shell_cells: usize) -> f64 {
    let grid = f.grid();
    let coords = grid.coords();
    let npts = grid.points();
    let n = grid.dim();
    let mut total = 0.0f64;
    let mut shell = 0.0f64;
    for (idx, v) in f.data().iter().enumerate() {
        let ix = grid.unravel(idx);
        let mut r2 = 0.0;
        for a in 0..n {
            let c = coords[ix[a]];
            r2 += c * c;
        }
        let w = if spec.mu == 0.0 {
            1.0
        } else {
            r2.sqrt().powf(spec.mu)
        };
        let g = w * v.abs();
        total += g;
        if (0..n).any(|a| ix[a] < shell_cells || ix[a] >= npts - shell_cells) {
            shell += g;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        shell / total
    }
}

/// Logarithmic correction factor: 1 for m < n, log(2+t) for m = n.
pub fn l_m_factor(m: u32, n: usize, t: f64) -> f64 {
    if m as usize >= n {
        (2.0 + t).ln()
    } else {
        1.0
    }
}

/// Result of a log-log slope fit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
}

/// Least-squares fit of log(norm) against log(t). When `log_compensation`
/// divides each sample first (used for O(. log) claims), pass the divisor per
/// sample time.
pub fn fit_slope(
    times: &[f64],
    norms: &[f64],
    compensation: Option<&dyn Fn(f64) -> f64>,
) -> Result<SlopeFit, MetricsError> {
    if times.len() < 6 {
        return Err(MetricsError::Window {
            need: 6,
            got: times.len(),
        });
    }
    let mut xs = Vec::with_capacity(times.len());
    let mut ys = Vec::with_capacity(times.len());
    for (t, v) in times.iter().zip(norms) {
        let v = match compensation {
            Some(c) => v / c(*t),
            None => *v,
        };
        if !(v > 0.0) {
            return Err(MetricsError::NonPositive(v));
        }
        xs.push(t.ln());
        ys.push(v.ln());
    }
    let (slope, _intercept, stderr) = linear_fit(&xs, &ys);
    Ok(SlopeFit { slope, stderr })
}

/// Measured residual norms at sample times, fitted slope, predicted exponent
/// and verdict for one statement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayReport {
    pub statement: String,
    pub q: String,
    pub mu: f64,
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    pub slope: f64,
    pub stderr: f64,
    pub predicted: f64,
    pub tolerance: f64,
    /// pass iff slope <= predicted + tolerance (one sided) and the fit is tight
    pub verdict: bool,
    /// measured sup of norm * t^(-predicted) / log-compensator over the window
    pub envelope_constant: f64,
    /// set when the criterion fell back to a ratio comparison
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

impl DecayReport {
    #[allow(clippy::too_many_arguments)]
    pub fn from_fit(
        statement: &str,
        q: Q,
        mu: f64,
        times: &[f64],
        norms: &[f64],
        fit: SlopeFit,
        predicted: f64,
        tolerance: f64,
        stderr_max: f64,
        compensation: Option<&dyn Fn(f64) -> f64>,
    ) -> Self {
        let envelope_constant = times
            .iter()
            .zip(norms)
            .map(|(t, v)| {
                let c = compensation.map(|f| f(*t)).unwrap_or(1.0);
                v / c / t.powf(predicted)
            })
            .fold(0.0f64, f64::max);
        DecayReport {
            statement: statement.to_string(),
            q: q.label().to_string(),
            mu,
            times: times.to_vec(),
            norms: norms.to_vec(),
            slope: fit.slope,
            stderr: fit.stderr,
            predicted,
            tolerance,
            verdict: fit.slope <= predicted + tolerance && fit.stderr < stderr_max,
            envelope_constant,
            fallback: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::kernel::{kernel_field, KernelSpec};

    #[test]
    fn gauss_kernel_norms() {
        let g = Grid::new(2, 256, 80.0).unwrap();
        let f = kernel_field(&KernelSpec::new(0, [0; 3], vec![], 0, 1.0), g).unwrap();
        // mass of the heat kernel
        let m = weighted_norm(&f, NormSpec::plain(Q::One));
        assert!((m - 1.0).abs() < 1e-12, "mass = {m}");
        // second moment: integral |x|^2 G(1, x) dx = 2 n t = 4
        let m2 = weighted_norm(&f, NormSpec { q: Q::One, mu: 2.0 });
        assert!((m2 - 4.0).abs() < 1e-10, "m2 = {m2}");
        // zero field
        let z = PhysicalField::zeros(g, 0.0);
        assert_eq!(weighted_norm(&z, NormSpec::plain(Q::Inf)), 0.0);
    }

    #[test]
    fn absolute_homogeneity() {
        let g = Grid::new(2, 64, 10.0).unwrap();
        let f = PhysicalField::from_fn(g, 0.0, |x| (x[0] - 0.5 * x[1]).sin());
        for q in [Q::One, Q::Two, Q::Inf] {
            let spec = NormSpec { q, mu: 1.5 };
            let a = weighted_norm(&f.scaled(-3.5), spec);
            let b = 3.5 * weighted_norm(&f, spec);
            assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
        }
    }

    #[test]
    fn norm_continuous_in_mu() {
        let g = Grid::new(2, 64, 10.0).unwrap();
        let f = PhysicalField::from_fn(g, 0.0, |x| (-(x[0] * x[0] + x[1] * x[1])).exp());
        let a = weighted_norm(&f, NormSpec { q: Q::One, mu: 1.0 });
        let b = weighted_norm(&f, NormSpec { q: Q::One, mu: 1.0 + 1e-6 });
        assert!((a - b).abs() < 1e-4 * a);
    }

    #[test]
    fn slope_fit_exact_power_laws() {
        let times: Vec<f64> = (0..10).map(|i| 2.0f64.powi(i)).collect();
        let norms: Vec<f64> = times.iter().map(|t| 3.0 * t.powf(-2.0)).collect();
        let fit = fit_slope(&times, &norms, None).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert!(fit.stderr < 1e-12);

        // constant series
        let ones: Vec<f64> = times.iter().map(|_| 5.0).collect();
        let fit = fit_slope(&times, &ones, None).unwrap();
        assert!(fit.slope.abs() < 1e-13);

        // rescaling by a positive constant leaves the slope unchanged
        let scaled: Vec<f64> = norms.iter().map(|v| 17.0 * v).collect();
        let fit2 = fit_slope(&times, &scaled, None).unwrap();
        assert!((fit2.slope - fit.slope - (-2.0)).abs() < 1e-12);
    }

    #[test]
    fn slope_fit_with_log_compensation() {
        let times: Vec<f64> = (0..12).map(|i| 1.5f64.powi(i) * 4.0).collect();
        let norms: Vec<f64> = times
            .iter()
            .map(|t| t.powf(-2.0) * (2.0 + t).ln())
            .collect();
        let comp = |t: f64| (2.0 + t).ln();
        let fit = fit_slope(&times, &norms, Some(&comp)).unwrap();
        assert!((fit.slope + 2.0).abs() < 0.01, "slope {}", fit.slope);
    }

    #[test]
    fn slope_fit_guards() {
        let times = [1.0, 2.0, 3.0];
        let norms = [1.0, 0.5, 0.25];
        assert!(matches!(
            fit_slope(&times, &norms, None),
            Err(MetricsError::Window { .. })
        ));
        let times: Vec<f64> = (1..=8).map(|i| i as f64).collect();
        let mut norms: Vec<f64> = times.iter().map(|t| 1.0 / t).collect();
        norms[3] = 0.0;
        assert!(matches!(
            fit_slope(&times, &norms, None),
            Err(MetricsError::NonPositive(_))
        ));
    }
}
