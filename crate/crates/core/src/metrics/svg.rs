//! Minimal SVG plots: a scatter with optional fit line, and a Bland-Altman
//! plot with bias and limit lines. Output is byte-stable for a given input.

use std::fmt::Write;

use super::agreement::{BlandAltmanResult, Timepoint};

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn num(x: f64) -> String {
    // Two decimals is plenty for pixel coordinates; strip "-0.00".
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".to_owned()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Frame {
        fn range(v: impl Iterator<Item = f64>) -> (f64, f64) {
            let (lo, hi) = v
                .filter(|x| x.is_finite())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            if !lo.is_finite() {
                return (0.0, 1.0);
            }
            let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5_f64.max(lo.abs() * 0.05) };
            (lo - pad, hi + pad)
        }
        Frame {
            x: range(xs),
            y: range(ys),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn open(out: &mut String, title: &str, frame: &Frame, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = WIDTH,
        h = HEIGHT
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        num(WIDTH / 2.0),
        escape(title)
    );
    let (x0, x1) = (MARGIN, WIDTH - MARGIN);
    let (y0, y1) = (HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        out,
        r#"<path d="M{} {} H{} M{} {} V{}" stroke="black" fill="none"/>"#,
        num(x0),
        num(y0),
        num(x1),
        num(x0),
        num(y0),
        num(y1)
    );
    for (v, anchor, x, y) in [
        (frame.x.0, "start", x0, y0 + 14.0),
        (frame.x.1, "end", x1, y0 + 14.0),
    ] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="{anchor}" font-size="10">{}</text>"#,
            num(x),
            num(y),
            format_tick(v)
        );
    }
    for (v, y) in [(frame.y.0, y0), (frame.y.1, y1)] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{}</text>"#,
            num(x0 - 4.0),
            num(y),
            format_tick(v)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        num(WIDTH / 2.0),
        num(HEIGHT - 10.0),
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{y}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {y})">{}</text>"#,
        escape(y_label),
        y = num(HEIGHT / 2.0)
    );
}

fn format_tick(v: f64) -> String {
    format!("{v:.3}")
}

fn hline(out: &mut String, frame: &Frame, y: f64, dash: bool, label: &str) {
    let py = frame.py(y);
    let _ = writeln!(
        out,
        r#"<line x1="{}" y1="{py}" x2="{}" y2="{py}" stroke="gray"{}/>"#,
        num(MARGIN),
        num(WIDTH - MARGIN),
        if dash { r#" stroke-dasharray="4 3""# } else { "" },
        py = num(py)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{}</text>"#,
        num(WIDTH - MARGIN),
        num(py - 3.0),
        escape(label)
    );
}

fn point(out: &mut String, frame: &Frame, x: f64, y: f64, filled: bool) {
    let _ = writeln!(
        out,
        r#"<circle cx="{}" cy="{}" r="3" stroke="black" fill="{}"/>"#,
        num(frame.px(x)),
        num(frame.py(y)),
        if filled { "black" } else { "none" }
    );
}

/// Scatter plot of `(x, y)` points, with the line `y = slope*x + intercept`
/// drawn across the data range when `fit` is given.
pub fn scatter_svg(
    points: &[(f64, f64)],
    fit: Option<(f64, f64)>,
    title: &str,
    x_label: &str,
    y_label: &str,
) -> String {
    let frame = Frame::fit(points.iter().map(|p| p.0), points.iter().map(|p| p.1));
    let mut out = String::new();
    open(&mut out, title, &frame, x_label, y_label);
    for &(x, y) in points {
        point(&mut out, &frame, x, y, true);
    }
    if let Some((slope, intercept)) = fit {
        let (xa, xb) = frame.x;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
            num(frame.px(xa)),
            num(frame.py(slope * xa + intercept)),
            num(frame.px(xb)),
            num(frame.py(slope * xb + intercept))
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Bland-Altman plot: difference against mean, solid bias line and dashed
/// limits of agreement. Post-treatment points are drawn hollow.
pub fn bland_altman_svg(result: &BlandAltmanResult, title: &str) -> String {
    let ys = result
        .points
        .iter()
        .map(|p| p.diff)
        .chain([result.loa_low, result.loa_high]);
    let frame = Frame::fit(result.points.iter().map(|p| p.mean), ys);
    let mut out = String::new();
    open(&mut out, title, &frame, "mean of readers", "difference (a - b)");
    hline(&mut out, &frame, result.bias, false, &format!("bias {:.3}", result.bias));
    hline(&mut out, &frame, result.loa_high, true, &format!("+1.96 SD {:.3}", result.loa_high));
    hline(&mut out, &frame, result.loa_low, true, &format!("-1.96 SD {:.3}", result.loa_low));
    for p in &result.points {
        let hollow = p.label == Some(Timepoint::PostTreatment);
        point(&mut out, &frame, p.mean, p.diff, !hollow);
    }
    out.push_str("</svg>\n");
    out
}
