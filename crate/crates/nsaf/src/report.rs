//! File emission: CSV tables, JSON reports, and standalone SVG plots with an
//! embedded data table, so reports need no plotting dependency.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::metrics::DecayReport;
use crate::moments::{IntegrandTag, MomentTable};
use crate::solver::DiagRow;

/// Write bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn diagnostics_csv(rows: &[DiagRow]) -> String {
    let mut s = String::from("t,l1_u,l2_u,linf_u,l1_w,linf_w,tail_mass\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.t, r.l1_u, r.l2_u, r.linf_u, r.l1_w, r.linf_w, r.tail_mass
        );
    }
    s
}

fn integrand_label(tag: &IntegrandTag) -> (String, u8, u8) {
    match tag {
        IntegrandTag::Omega0 => ("omega0".into(), 0, 0),
        IntegrandTag::OmegaU { h, j } => ("omega_u".into(), *h, *j),
        IntegrandTag::OmegaUMinusI { h, j, m } => (format!("omega_u_minus_I_m{m}"), *h, *j),
        IntegrandTag::IAtOne { h, k, p } => (format!("I_at_1_p{p}"), *h, *k),
    }
}

pub fn moments_csv(table: &MomentTable) -> String {
    let mut s = String::from("l,beta1,beta2,integrand,h,k,value,tail_fraction,trunc_err\n");
    for (key, entry) in &table.entries {
        let (label, h, k) = integrand_label(&key.tag);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            key.l,
            key.beta[0],
            key.beta[1],
            label,
            h,
            k,
            entry.value,
            entry.tail_fraction,
            entry.trunc_err
        );
    }
    s
}

pub fn decay_reports_csv(reports: &[DecayReport]) -> String {
    let mut s =
        String::from("statement,q,mu,slope,stderr,predicted,tolerance,verdict,envelope\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.statement,
            r.q,
            r.mu,
            r.slope,
            r.stderr,
            r.predicted,
            r.tolerance,
            r.verdict,
            r.envelope_constant
        );
    }
    s
}

/// Log-log plot of the measured norms with a guide line at the predicted
/// slope; the raw series is embedded as an XML comment.
pub fn decay_plot_svg(report: &DecayReport) -> String {
    let w = 640.0f64;
    let h = 420.0f64;
    let ml = 60.0;
    let mr = 20.0;
    let mt = 30.0;
    let mb = 50.0;

    let xs: Vec<f64> = report.times.iter().map(|t| t.log10()).collect();
    let ys: Vec<f64> = report
        .norms
        .iter()
        .map(|v| v.max(1e-300).log10())
        .collect();
    let (x0, x1) = (
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let (mut y0, mut y1) = (
        ys.iter().cloned().fold(f64::INFINITY, f64::min),
        ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    if (y1 - y0).abs() < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| ml + (x - x0) / (x1 - x0).max(1e-12) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(svg, "<!-- data table: t, norm");
    for (t, v) in report.times.iter().zip(&report.norms) {
        let _ = writeln!(svg, "{t},{v}");
    }
    let _ = writeln!(
        svg,
        "slope={} stderr={} predicted={} tolerance={} verdict={} -->",
        report.slope, report.stderr, report.predicted, report.tolerance, report.verdict
    );
    let _ = writeln!(
        svg,
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\
         <text x=\"{}\" y=\"18\" font-family=\"monospace\" font-size=\"13\">{} | slope {:.3} vs predicted {:.3} (tol {:.2}) | {}</text>",
        ml,
        xml_escape(&report.statement),
        report.slope,
        report.predicted,
        report.tolerance,
        if report.verdict { "pass" } else { "fail" }
    );
    // axes
    let _ = writeln!(
        svg,
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\
         <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>",
        h - mb,
        w - mr,
        h - mb,
        h - mb
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\">log10 t</text>\
         <text x=\"8\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" transform=\"rotate(-90 14 {})\">log10 norm</text>",
        (w - mr) / 2.0,
        h - 14.0,
        (h - mb) / 2.0,
        (h - mb) / 2.0,
    );
    // guide line with the predicted slope through the last sample
    if let (Some(&xl), Some(&yl)) = (xs.last(), ys.last()) {
        let y_at = |x: f64| yl + report.predicted * (x - xl);
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#888\" stroke-dasharray=\"6 3\"/>",
            sx(x0),
            sy(y_at(x0)),
            sx(x1),
            sy(y_at(x1))
        );
    }
    // measured polyline + points
    let mut pts = String::new();
    for (x, y) in xs.iter().zip(&ys) {
        let _ = write!(pts, "{:.2},{:.2} ", sx(*x), sy(*y));
    }
    let _ = writeln!(
        svg,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#1656b8\" stroke-width=\"1.5\"/>",
        pts.trim_end()
    );
    for (x, y) in xs.iter().zip(&ys) {
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#1656b8\"/>",
            sx(*x),
            sy(*y)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_contains_data_and_verdict() {
        let report = DecayReport {
            statement: "c-fm q=inf".into(),
            q: "inf".into(),
            mu: 0.0,
            times: vec![10.0, 20.0, 40.0, 80.0],
            norms: vec![1e-3, 2.6e-4, 6.2e-5, 1.6e-5],
            slope: -2.0,
            stderr: 0.001,
            predicted: -2.0,
            tolerance: 0.15,
            verdict: true,
            envelope_constant: 0.1,
            fallback: None,
        };
        let svg = decay_plot_svg(&report);
        assert!(svg.contains("<svg"));
        assert!(svg.contains("data table"));
        assert!(svg.contains("pass"));
        assert!(svg.contains("10,0.001"));
    }
}
