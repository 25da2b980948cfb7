//! Deterministic CSV and SVG report writers.
//!
//! Every file starts with a versioned schema comment so downstream parsing
//! can detect drift. Numbers are formatted with fixed precision, which keeps
//! re-runs byte-identical.

use super::{EvalReport, SeStats};
use crate::error::Result;
use std::fmt::Write as _;
use std::path::Path;

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// One row per gallery size: detection and search metrics side by side.
pub fn write_eval_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut s = String::new();
    let ks: Vec<usize> = reports
        .first()
        .map(|r| r.cmc.iter().map(|&(k, _)| k).collect())
        .unwrap_or_default();
    s.push_str("# schema: mgts-eval-v1\n");
    s.push_str("gallery_size,detection_ap,detection_recall,search_map");
    for k in &ks {
        let _ = write!(s, ",cmc_top{k}");
    }
    s.push('\n');
    for r in reports {
        let _ = write!(
            s,
            "{},{},{},{}",
            r.gallery_size,
            fmt(r.detection_ap),
            fmt(r.detection_recall),
            fmt(r.search_map)
        );
        for &(_, v) in &r.cmc {
            let _ = write!(s, ",{}", fmt(v));
        }
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// One row per probe at each gallery size.
pub fn write_probe_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut s = String::new();
    s.push_str("# schema: mgts-probe-ap-v1\n");
    s.push_str("gallery_size,probe,ap\n");
    for r in reports {
        for (pi, ap) in r.per_probe_ap.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", r.gallery_size, pi, fmt(*ap));
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Per-sample SE-weight summary plus the N20F histogram.
pub fn write_se_csv(path: &Path, stats: &SeStats) -> Result<()> {
    let mut s = String::new();
    s.push_str("# schema: mgts-se-v1\n");
    s.push_str("sample,avg_f,avg_o,n20f\n");
    for (i, sm) in stats.samples.iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{}", i, fmt(sm.avg_f), fmt(sm.avg_o), sm.n20f);
    }
    s.push_str("# histogram: n20f,count\n");
    for (k, c) in stats.histogram.iter().enumerate() {
        let _ = writeln!(s, "{k},{c}");
    }
    std::fs::write(path, s)?;
    Ok(())
}

const CHART_W: f64 = 640.0;
const CHART_H: f64 = 400.0;
const MARGIN: f64 = 60.0;

fn svg_header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CHART_W}\" height=\"{CHART_H}\" viewBox=\"0 0 {CHART_W} {CHART_H}\">"
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>",
        CHART_W / 2.0
    );
    // axes
    let _ = writeln!(
        s,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        b = CHART_H - MARGIN,
        r = CHART_W - MARGIN / 2.0
    );
    let _ = writeln!(
        s,
        "<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        t = MARGIN / 2.0,
        b = CHART_H - MARGIN
    );
    s
}

/// Self-contained line chart of (x, y) points, y clamped to [0, 1].
pub fn write_line_svg(
    path: &Path,
    points: &[(f64, f64)],
    title: &str,
    x_label: &str,
    y_label: &str,
) -> Result<()> {
    let mut s = svg_header(title);
    let (x_lo, x_hi) = points.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &(x, _)| {
        (lo.min(x), hi.max(x))
    });
    let span = if (x_hi - x_lo).abs() < 1e-12 {
        1.0
    } else {
        x_hi - x_lo
    };
    let px = |x: f64| MARGIN + (x - x_lo) / span * (CHART_W - 1.5 * MARGIN);
    let py = |y: f64| (CHART_H - MARGIN) - y.clamp(0.0, 1.0) * (CHART_H - 1.5 * MARGIN);

    let mut poly = String::new();
    for &(x, y) in points {
        let _ = write!(poly, "{:.2},{:.2} ", px(x), py(y));
    }
    let _ = writeln!(
        s,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>",
        poly.trim_end()
    );
    for &(x, y) in points {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>",
            px(x),
            py(y)
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{:.3}</text>",
            px(x),
            py(y) - 8.0,
            y
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{x}</text>",
            px(x),
            CHART_H - MARGIN + 16.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{x_label}</text>",
        CHART_W / 2.0,
        CHART_H - 12.0
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 {})\">{y_label}</text>",
        CHART_H / 2.0,
        CHART_H / 2.0
    );
    s.push_str("</svg>\n");
    std::fs::write(path, s)?;
    Ok(())
}

/// Bar chart of the N20F histogram.
pub fn write_histogram_svg(path: &Path, histogram: &[usize], title: &str) -> Result<()> {
    let mut s = svg_header(title);
    let n = histogram.len();
    let max = *histogram.iter().max().unwrap_or(&1) as f64;
    let max = max.max(1.0);
    let bw = (CHART_W - 1.5 * MARGIN) / n as f64;
    for (i, &c) in histogram.iter().enumerate() {
        let h = c as f64 / max * (CHART_H - 1.5 * MARGIN);
        let x = MARGIN + i as f64 * bw;
        let y = (CHART_H - MARGIN) - h;
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"steelblue\" stroke=\"white\"/>",
            x,
            y,
            bw,
            h
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{i}</text>",
            x + bw / 2.0,
            CHART_H - MARGIN + 14.0
        );
        if c > 0 {
            let _ = writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{c}</text>",
                x + bw / 2.0,
                y - 4.0
            );
        }
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)?;
    Ok(())
}
