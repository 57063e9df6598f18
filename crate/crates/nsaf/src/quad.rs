//! Scalar quadrature helpers: adaptive Simpson, Gauss-Legendre panels,
//! composite Simpson on non-uniform nodes, and log-log regression.

/// 8-point Gauss-Legendre nodes and weights on [-1, 1].
pub const GL8: [(f64, f64); 8] = [
    (-0.9602898564975363, 0.1012285362903763),
    (-0.7966664774136267, 0.2223810344533745),
    (-0.5255324099163290, 0.3137066458778873),
    (-0.1834346424956498, 0.3626837833783620),
    (0.1834346424956498, 0.3626837833783620),
    (0.5255324099163290, 0.3137066458778873),
    (0.7966664774136267, 0.2223810344533745),
    (0.9602898564975363, 0.1012285362903763),
];

/// Map GL8 to [a, b]: returns (node, weight) pairs.
pub fn gl8_on(a: f64, b: f64) -> [(f64, f64); 8] {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    GL8.map(|(x, w)| (mid + half * x, half * w))
}

/// Geometric panel boundaries from `a` to `b` (a < b), `count` panels whose
/// widths grow geometrically away from the refined end.
pub fn geometric_panels(a: f64, b: f64, count: usize, refine_start: bool) -> Vec<(f64, f64)> {
    assert!(b > a && a > 0.0 && count > 0);
    if refine_start {
        // boundaries a * r^i
        let r = (b / a).powf(1.0 / count as f64);
        let mut edges: Vec<f64> = (0..=count).map(|i| a * r.powi(i as i32)).collect();
        edges[0] = a;
        edges[count] = b;
        edges.windows(2).map(|w| (w[0], w[1])).collect()
    } else {
        // widths shrink toward b with fixed ratio, rescaled to sum exactly
        let rho: f64 = 0.7;
        let total: f64 = (0..count).map(|i| rho.powi(i as i32)).sum();
        let scale = (b - a) / total;
        let mut edges = Vec::with_capacity(count + 1);
        let mut x = a;
        edges.push(x);
        for i in 0..count {
            x += scale * rho.powi(i as i32);
            edges.push(x);
        }
        edges[count] = b;
        edges.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

fn simpson_rule(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson_rule(a, m, fa, flm, fm);
    let right = simpson_rule(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson with mixed relative/absolute tolerance.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    // coarse scale estimate to convert the relative tolerance
    let probe: f64 = gl8_on(a, b).iter().map(|(x, w)| w * f(*x)).sum();
    let tol = rel_tol * probe.abs().max(1e-300);
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson_rule(a, b, fa, fm, fb);
    adaptive_step(&f, a, b, fa, fm, fb, whole, tol.max(1e-16 * probe.abs()), 48)
}

/// Integral over [a, b] of the quadratic through (x0,y0),(x1,y1),(x2,y2),
/// in Newton form.
pub fn quadratic_integral(p: [(f64, f64); 3], a: f64, b: f64) -> f64 {
    let (x0, y0) = p[0];
    let (x1, y1) = p[1];
    let (x2, y2) = p[2];
    let d1 = (y1 - y0) / (x1 - x0);
    let d2 = ((y2 - y1) / (x2 - x1) - d1) / (x2 - x0);
    // integral of y0 + d1 (x-x0) + d2 (x-x0)(x-x1)
    let i1 = |x: f64| x;
    let i2 = |x: f64| 0.5 * (x - x0) * (x - x0);
    let i3 = |x: f64| {
        let u = x - x0;
        u * u * u / 3.0 + 0.5 * u * u * (x0 - x1)
    };
    y0 * (i1(b) - i1(a)) + d1 * (i2(b) - i2(a)) + d2 * (i3(b) - i3(a))
}

/// Composite Simpson over arbitrary increasing nodes. Integrates consecutive
/// node triples; an odd final interval uses the quadratic through the last
/// three nodes.
pub fn simpson_nonuniform(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let m = xs.len();
    if m < 2 {
        return 0.0;
    }
    if m == 2 {
        return 0.5 * (ys[0] + ys[1]) * (xs[1] - xs[0]);
    }
    let mut total = 0.0;
    let mut i = 0;
    while i + 2 < m {
        let p = [(xs[i], ys[i]), (xs[i + 1], ys[i + 1]), (xs[i + 2], ys[i + 2])];
        total += quadratic_integral(p, xs[i], xs[i + 2]);
        i += 2;
    }
    if i + 1 < m {
        // one interval left: quadratic through the last three nodes
        let p = [
            (xs[m - 3], ys[m - 3]),
            (xs[m - 2], ys[m - 2]),
            (xs[m - 1], ys[m - 1]),
        ];
        total += quadratic_integral(p, xs[m - 2], xs[m - 1]);
    }
    total
}

/// Piecewise-quadratic cumulative integral of a sampled series, for
/// finite-horizon coefficients evaluated between nodes.
pub struct SeriesIntegral<'a> {
    xs: &'a [f64],
    ys: &'a [f64],
}

impl<'a> SeriesIntegral<'a> {
    pub fn new(xs: &'a [f64], ys: &'a [f64]) -> Self {
        assert_eq!(xs.len(), ys.len());
        assert!(xs.len() >= 3);
        Self { xs, ys }
    }

    /// Integral from xs[0] to t, with t clamped to the sampled range.
    pub fn integrate_to(&self, t: f64) -> f64 {
        let xs = self.xs;
        let ys = self.ys;
        let m = xs.len();
        let t = t.clamp(xs[0], xs[m - 1]);
        let mut total = 0.0;
        let mut i = 0;
        while i + 2 < m {
            let p = [(xs[i], ys[i]), (xs[i + 1], ys[i + 1]), (xs[i + 2], ys[i + 2])];
            if t >= xs[i + 2] {
                total += quadratic_integral(p, xs[i], xs[i + 2]);
                i += 2;
            } else {
                return total + quadratic_integral(p, xs[i], t);
            }
        }
        if i + 1 < m && t > xs[i] {
            let p = [
                (xs[m - 3], ys[m - 3]),
                (xs[m - 2], ys[m - 2]),
                (xs[m - 1], ys[m - 1]),
            ];
            total += quadratic_integral(p, xs[i], t.min(xs[m - 1]));
        }
        total
    }
}

/// Integer binomial coefficient as f64.
pub fn binom(n: u32, k: u32) -> f64 {
    let mut v = 1.0;
    for i in 0..k {
        v *= (n - i) as f64 / (i + 1) as f64;
    }
    v
}

/// Least squares line fit: returns (slope, intercept, slope standard error).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    assert!(xs.len() >= 2);
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if xs.len() > 2 {
        let ss_res: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let r = y - (slope * x + intercept);
                r * r
            })
            .sum();
        (ss_res / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, intercept, stderr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_simpson_matches_closed_forms() {
        let v = adaptive_simpson(|s| s * s, 0.0, 3.0, 1e-12);
        assert!((v - 9.0).abs() < 1e-10);
        let v = adaptive_simpson(|s| (-s).exp(), 0.0, 50.0, 1e-12);
        assert!((v - 1.0).abs() < 1e-10);
        let v = adaptive_simpson(|s| 1.0 / (1.0 + s * s), 0.0, 1.0, 1e-12);
        assert!((v - std::f64::consts::FRAC_PI_4).abs() < 1e-11);
    }

    #[test]
    fn gl8_is_exact_on_degree_15() {
        let total: f64 = gl8_on(0.0, 1.0)
            .iter()
            .map(|(x, w)| w * x.powi(15))
            .sum();
        assert!((total - 1.0 / 16.0).abs() < 1e-14);
    }

    #[test]
    fn nonuniform_simpson_on_geometric_nodes() {
        // integral of s^-1.5 over [0.25, 100]
        let xs: Vec<f64> = (0..64).map(|i| 0.25 * 400f64.powf(i as f64 / 63.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|s| s.powf(-1.5)).collect();
        let got = simpson_nonuniform(&xs, &ys);
        let want = 2.0 * (0.25f64.powf(-0.5) - 100f64.powf(-0.5));
        assert!((got - want).abs() < 2e-4 * want.abs(), "got {got}, want {want}");
    }

    #[test]
    fn series_integral_partial_panels() {
        let xs: Vec<f64> = (0..33).map(|i| 0.25 * 1.2f64.powi(i)).collect();
        let ys: Vec<f64> = xs.iter().map(|s| 1.0 / (1.0 + s)).collect();
        let si = SeriesIntegral::new(&xs, &ys);
        for t in [0.9_f64, 1.0, 3.7, xs[32]] {
            let got = si.integrate_to(t);
            let want = (1.0 + t).ln() - 1.25f64.ln();
            assert!(
                (got - want).abs() < 2e-4 * want.max(1.0),
                "t={t}: got {got} want {want}"
            );
        }
    }

    #[test]
    fn linear_fit_recovers_exact_line() {
        let xs: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| -2.0 * x + 0.5).collect();
        let (slope, intercept, stderr) = linear_fit(&xs, &ys);
        assert!((slope + 2.0).abs() < 1e-12);
        assert!((intercept - 0.5).abs() < 1e-12);
        assert!(stderr < 1e-12);
    }

    #[test]
    fn geometric_panels_cover_interval() {
        for refine_start in [true, false] {
            let panels = geometric_panels(0.25, 8.0, 16, refine_start);
            assert_eq!(panels.len(), 16);
            assert_eq!(panels[0].0, 0.25);
            assert_eq!(panels[15].1, 8.0);
            for w in panels.windows(2) {
                assert!((w[0].1 - w[1].0).abs() < 1e-14);
            }
        }
    }
}
