//! Accuracy-degradation vs density line plot as a standalone SVG.
//!
//! The x axis is log-scaled density, decreasing to the right, so sparser
//! models sit further right. The y axis is the drop in mean test accuracy
//! relative to the dense runs, in percentage points. The dense reference is
//! the zero line. Each method is one `<g class="series" data-method=...>`
//! group holding a polyline and one marker per density.

use std::fmt::Write;

use crate::metrics::SummaryRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

struct Series {
    method: String,
    points: Vec<(f64, f64, f64)>,
}

fn series(rows: &[SummaryRow]) -> Vec<Series> {
    let mut out: Vec<Series> = Vec::new();
    for r in rows {
        let (Some(d), Some(deg)) = (r.density, r.degradation) else {
            continue;
        };
        let std = r.std_test_acc.unwrap_or(0.0);
        let p = (d, 100.0 * deg, 100.0 * std);
        match out.iter_mut().find(|s| s.method == r.method) {
            Some(s) => s.points.push(p),
            None => out.push(Series {
                method: r.method.clone(),
                points: vec![p],
            }),
        }
    }
    for s in &mut out {
        s.points.sort_by(|a, b| b.0.total_cmp(&a.0));
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn degradation_svg(rows: &[SummaryRow], title: &str) -> String {
    let all = series(rows);
    let densities: Vec<f64> = all
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .collect();
    let (mut dmin, mut dmax) = densities
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| {
            (lo.min(d), hi.max(d))
        });
    if !dmin.is_finite() {
        (dmin, dmax) = (0.01, 1.0);
    }
    if dmax / dmin < 1.5 {
        dmin /= 1.25;
        dmax *= 1.25;
    }
    let ys = all
        .iter()
        .flat_map(|s| s.points.iter().flat_map(|p| [p.1 - p.2, p.1 + p.2]));
    let (ylo, yhi) = ys.fold((0.0f64, 1.0f64), |(lo, hi), y| (lo.min(y), hi.max(y)));
    let pad = 0.08 * (yhi - ylo);
    let (ylo, yhi) = (ylo - pad, yhi + pad);

    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let x_of = |d: f64| LEFT + pw * (dmax.ln() - d.ln()) / (dmax.ln() - dmin.ln());
    let y_of = |v: f64| TOP + ph * (yhi - v) / (yhi - ylo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<g class="axes" stroke="#333" fill="none"><rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}"/></g>"##
    );

    let mut ticks: Vec<f64> = densities.clone();
    ticks.sort_by(|a, b| b.total_cmp(a));
    ticks.dedup();
    for d in &ticks {
        let x = x_of(*d);
        let _ = writeln!(
            s,
            r##"<g class="xtick"><line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#333"/><text x="{x:.2}" y="{}" text-anchor="middle">{d}</text></g>"##,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 20.0
        );
    }
    for i in 0..=4 {
        let v = ylo + (yhi - ylo) * i as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(
            s,
            r##"<g class="ytick"><line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#333"/><text x="{}" y="{:.2}" text-anchor="end">{v:.1}</text></g>"##,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">density (log scale)</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {}) rotate(-90)" text-anchor="middle">accuracy drop vs dense (pp)</text>"#,
        TOP + ph / 2.0
    );
    let y0 = y_of(0.0);
    let _ = writeln!(
        s,
        r##"<line class="dense-reference" x1="{LEFT}" y1="{y0:.2}" x2="{}" y2="{y0:.2}" stroke="#777" stroke-dasharray="4 3"/>"##,
        LEFT + pw
    );

    for (i, ser) in all.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let method = escape(&ser.method);
        let _ = writeln!(
            s,
            r#"<g class="series" data-method="{method}" stroke="{color}" fill="{color}">"#
        );
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x_of(p.0), y_of(p.1)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        for &(d, v, e) in &ser.points {
            let (x, y) = (x_of(d), y_of(v));
            if e > 0.0 {
                let _ = writeln!(
                    s,
                    r#"<line class="errorbar" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}"/>"#,
                    y_of(v - e),
                    y_of(v + e)
                );
            }
            let _ = writeln!(
                s,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="3.5" data-density="{d}" data-degradation="{v:.6}"/>"#
            );
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke-width="2"/><text x="{}" y="{}" stroke="none">{method}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        );
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, density: f64, deg: f64) -> SummaryRow {
        SummaryRow {
            method: method.into(),
            density: Some(density),
            n: 3,
            failed: 0,
            mean_test_acc: Some(0.9 - deg),
            std_test_acc: Some(0.01),
            mean_final_density: Some(density),
            degradation: Some(deg),
        }
    }

    #[test]
    fn one_group_per_method_with_all_densities() {
        let mut rows = Vec::new();
        for m in ["weightmom", "oneshot", "random"] {
            for d in [0.10, 0.05, 0.02] {
                rows.push(row(m, d, 0.1 - d));
            }
        }
        let svg = degradation_svg(&rows, "t <&>");
        for m in ["weightmom", "oneshot", "random"] {
            assert_eq!(svg.matches(&format!(r#"data-method="{m}""#)).count(), 1);
        }
        assert_eq!(svg.matches("<circle").count(), 9);
        assert!(svg.contains("t &lt;&amp;&gt;"));
        assert!(svg.contains("dense-reference"));
    }

    #[test]
    fn rows_without_density_are_skipped() {
        let mut dense = row("dense", 1.0, 0.0);
        dense.density = None;
        let svg = degradation_svg(&[dense], "x");
        assert!(!svg.contains("data-method"));
    }
}
