//! Minimal SVG rendering of score traces against the two thresholds.

use std::fmt::Write;

use crate::evaluator::{EvalSpec, SafetyReport};

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 50.0;

/// `E_m_theta` and `E_m_omega` over time with the medium/critical lines.
pub fn render_svg(reports: &[SafetyReport], spec: &EvalSpec) -> String {
    let t0 = reports.first().map_or(0.0, |r| r.t);
    let t1 = reports.last().map_or(1.0, |r| r.t).max(t0 + 1e-9);
    let y_max = reports
        .iter()
        .map(|r| r.e_m_theta.max(r.e_m_omega))
        .fold(spec.eps_ec * 1.5, f64::max);

    let x = |t: f64| MARGIN + (t - t0) / (t1 - t0) * (WIDTH - 2.0 * MARGIN);
    let y = |v: f64| HEIGHT - MARGIN - v / y_max * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{b}" stroke="black"/>"#,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for (eps, colour, name) in [(spec.eps_em, "orange", "eps_em"), (spec.eps_ec, "red", "eps_ec")] {
        let _ = writeln!(
            s,
            r#"<line x1="{MARGIN}" y1="{yy:.2}" x2="{r}" y2="{yy:.2}" stroke="{colour}" stroke-dasharray="6 4"/><text x="{tx}" y="{ty:.2}" fill="{colour}">{name} = {eps}</text>"#,
            yy = y(eps),
            r = WIDTH - MARGIN,
            tx = WIDTH - MARGIN - 110.0,
            ty = y(eps) - 4.0
        );
    }
    for (colour, name, pick) in [
        ("steelblue", "E_m_theta", (|r: &SafetyReport| r.e_m_theta) as fn(&SafetyReport) -> f64),
        ("seagreen", "E_m_omega", |r: &SafetyReport| r.e_m_omega),
    ] {
        let points: Vec<String> = reports
            .iter()
            .map(|r| format!("{:.2},{:.2}", x(r.t), y(pick(r))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = if name == "E_m_theta" { 20.0 } else { 36.0 };
        let _ = writeln!(s, r#"<text x="{MARGIN}" y="{ly}" fill="{colour}">{name}</text>"#);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">t (s): {t0:.2} .. {t1:.2}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0
    );
    s.push_str("</svg>\n");
    s
}
