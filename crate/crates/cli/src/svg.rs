//! Minimal SVG output: field heat maps and line plots.

use std::fmt::Write;

use beamid::field::DisplacementField;

const FONT: &str = "font-family=\"sans-serif\" font-size=\"12\"";
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn lerp(a: u8, b: u8, t: f64) -> u8 {
    (a as f64 + (b as f64 - a as f64) * t).round() as u8
}

/// Blue-white-red for `v` in [-1, 1].
fn diverging(v: f64) -> String {
    let v = v.clamp(-1.0, 1.0);
    let (r, g, b) = if v < 0.0 {
        let t = -v;
        (lerp(255, 33, t), lerp(255, 102, t), lerp(255, 172, t))
    } else {
        (lerp(255, 178, v), lerp(255, 24, v), lerp(255, 43, v))
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// White to dark for `v` in [0, 1].
fn sequential(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    format!("#{:02x}{:02x}{:02x}", lerp(255, 60, v), lerp(255, 20, v), lerp(255, 90, v))
}

fn header(out: &mut String, w: f64, h: f64, title: &str) {
    let _ = writeln!(out, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">");
    let _ = writeln!(out, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(out, "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" {FONT} font-size=\"14\">{}</text>", w / 2.0, escape(title));
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e-2 && v.abs() < 1e3 {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Nodes on the vertical axis, time on the horizontal. Signed fields use a
/// symmetric diverging scale, non-negative ones a sequential scale.
pub fn heatmap(field: &DisplacementField, title: &str) -> String {
    let (nt, nn) = (field.n_times(), field.n_nodes());
    let (left, top, pw, ph) = (60.0, 35.0, 640.0, 240.0);
    let (cw, ch) = (pw / nt as f64, ph / nn as f64);
    let signed = field.values().iter().any(|v| *v < 0.0);
    let scale = field.max_abs().max(f64::MIN_POSITIVE);
    let mut s = String::new();
    header(&mut s, left + pw + 110.0, top + ph + 50.0, title);
    for r in 0..nt {
        for n in 0..nn {
            let v = field.get(r, n) / scale;
            let fill = if signed { diverging(v) } else { sequential(v) };
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{fill}\"/>",
                left + r as f64 * cw,
                top + n as f64 * ch,
                cw + 0.3,
                ch + 0.3
            );
        }
    }
    let times = field.times();
    let (t0, t1) = (times[0], times[nt - 1]);
    let _ = writeln!(s, "<rect x=\"{left}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>");
    for k in 0..=4 {
        let x = left + pw * k as f64 / 4.0;
        let t = t0 + (t1 - t0) * k as f64 / 4.0;
        let _ = writeln!(s, "<text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\" {FONT}>{}</text>", top + ph + 16.0, tick(t));
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" {FONT}>time (s)</text>", left + pw / 2.0, top + ph + 36.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" {FONT}>node 1</text>", left - 4.0, top + ch / 2.0 + 4.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" {FONT}>node {nn}</text>", left - 4.0, top + ph - ch / 2.0 + 4.0);
    let bx = left + pw + 20.0;
    for k in 0..50 {
        let v = 1.0 - k as f64 / 49.0;
        let fill = if signed { diverging(2.0 * v - 1.0) } else { sequential(v) };
        let _ = writeln!(s, "<rect x=\"{bx}\" y=\"{:.2}\" width=\"16\" height=\"{:.2}\" fill=\"{fill}\"/>", top + ph * k as f64 / 50.0, ph / 50.0 + 0.3);
    }
    let lo = if signed { -scale } else { 0.0 };
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" {FONT}>{}</text>", bx + 20.0, top + 10.0, tick(scale));
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" {FONT}>{}</text>", bx + 20.0, top + ph, tick(lo));
    s.push_str("</svg>\n");
    s
}

pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

/// Line plot with a legend; `marker` draws a vertical guide at that x.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>], marker: Option<f64>) -> String {
    let (left, top, pw, ph) = (80.0, 35.0, 560.0, 300.0);
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        if x.is_finite() && y.is_finite() {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if !(x0 < x1) {
        x1 = x0 + 1.0;
    }
    if !(y0 < y1) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    header(&mut s, left + pw + 170.0, top + ph + 55.0, title);
    let _ = writeln!(s, "<rect x=\"{left}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>");
    for k in 0..=4 {
        let fx = k as f64 / 4.0;
        let (xv, yv) = (x0 + (x1 - x0) * fx, y0 + (y1 - y0) * fx);
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\" {FONT}>{}</text>", px(xv), top + ph + 16.0, tick(xv));
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{}</text>", left - 4.0, py(yv) + 4.0, tick(yv));
        let _ = writeln!(s, "<line x1=\"{left}\" x2=\"{}\" y1=\"{:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>", left + pw, py(yv), py(yv));
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" {FONT}>{}</text>", left + pw / 2.0, top + ph + 38.0, escape(x_label));
    let _ = writeln!(
        s,
        "<text transform=\"translate(16 {}) rotate(-90)\" text-anchor=\"middle\" {FONT}>{}</text>",
        top + ph / 2.0,
        escape(y_label)
    );
    if let Some(m) = marker {
        if m > x0 && m < x1 {
            let _ = writeln!(s, "<line x1=\"{0:.1}\" x2=\"{0:.1}\" y1=\"{top}\" y2=\"{1}\" stroke=\"#888\" stroke-dasharray=\"2 3\"/>", px(m), top + ph);
        }
    }
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let dash = if ser.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>", pts.join(" "));
        let ly = top + 10.0 + 20.0 * k as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(s, "<line x1=\"{lx}\" x2=\"{}\" y1=\"{ly}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>", lx + 24.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" {FONT}>{}</text>", lx + 30.0, ly + 4.0, escape(ser.name));
    }
    s.push_str("</svg>\n");
    s
}
