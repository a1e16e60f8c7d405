//! Minimal deterministic SVG output: no timestamps, fixed element order, fixed number formatting.

use std::fmt::Write as _;

use opdyn::DensityField;

use crate::output::{bin_edges, SnapshotRecord};

const PANEL: f64 = 320.0;
const MARGIN: f64 = 36.0;

/// Opinion colour: blue at -1, white at 0, red at +1, clamped outside `[-1, 1]`.
pub fn opinion_color(theta: f64) -> (u8, u8, u8) {
    let t = if theta.is_nan() { 0.5 } else { ((theta.clamp(-1.0, 1.0)) + 1.0) / 2.0 };
    if t < 0.5 {
        let c = (255.0 * 2.0 * t).round() as u8;
        (c, c, 255)
    } else {
        let c = (255.0 * (2.0 - 2.0 * t)).round() as u8;
        (255, c, c)
    }
}

/// Sequential ramp for densities: white at zero to dark blue at `max`.
fn density_color(v: f64, max: f64) -> (u8, u8, u8) {
    let t = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    (lerp(255.0, 8.0), lerp(255.0, 29.0), lerp(255.0, 88.0))
}

fn hex((r, g, b): (u8, u8, u8)) -> String {
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Maps data ranges onto one panel's plotting area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn padded(x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |(a, b): (f64, f64)| {
            let w = (b - a).max(1e-9);
            (a - 0.05 * w, b + 0.05 * w)
        };
        Frame { x: pad(x), y: pad(y) }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (PANEL - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        PANEL - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (PANEL - 2.0 * MARGIN)
    }

    fn axes(&self, out: &mut String, xlabel: &str, ylabel: &str) {
        let (l, r, b, t) = (MARGIN, PANEL - MARGIN, PANEL - MARGIN, MARGIN);
        let _ = writeln!(out, r#"<rect x="{l:.1}" y="{t:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, r - l, b - t);
        let _ = writeln!(out, r#"<text x="{l:.1}" y="{:.1}" font-size="10">{:.2}</text>"#, b + 12.0, self.x.0);
        let _ = writeln!(out, r#"<text x="{r:.1}" y="{:.1}" font-size="10" text-anchor="end">{:.2}</text>"#, b + 12.0, self.x.1);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{b:.1}" font-size="10" text-anchor="end">{:.2}</text>"#, l - 3.0, self.y.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{:.2}</text>"#, l - 3.0, t + 8.0, self.y.1);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{xlabel}</text>"#, PANEL / 2.0, b + 24.0);
        let _ = writeln!(
            out,
            r#"<text x="10" y="{:.1}" font-size="11" text-anchor="middle" transform="rotate(-90 10 {:.1})">{ylabel}</text>"#,
            PANEL / 2.0,
            PANEL / 2.0
        );
    }
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
}

/// A titled panel body in local coordinates `[0, PANEL]^2`.
pub struct Panel {
    pub title: String,
    pub body: String,
}

/// Agents coloured by opinion; in one dimension the vertical axis is the opinion itself.
pub fn scatter_panel(rec: &SnapshotRecord, title: &str) -> Panel {
    let d = rec.dim().max(1);
    let xs: Vec<f64> = rec.positions.chunks(d).map(|p| p[0]).collect();
    let ys: Vec<f64> = if d >= 2 { rec.positions.chunks(d).map(|p| p[1]).collect() } else { rec.opinions.clone() };
    let mut frame = Frame::padded(range(xs.iter().copied()), range(ys.iter().copied()));
    if !frame.x.0.is_finite() {
        frame = Frame::padded((-1.0, 1.0), (-1.0, 1.0));
    }
    let mut body = String::new();
    frame.axes(&mut body, "x_0", if d >= 2 { "x_1" } else { "theta" });
    for ((x, y), th) in xs.iter().zip(&ys).zip(&rec.opinions) {
        let _ = writeln!(
            body,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" stroke="black" stroke-width="0.3"/>"#,
            frame.px(*x),
            frame.py(*y),
            hex(opinion_color(*th))
        );
    }
    Panel { title: title.to_string(), body }
}

/// One polyline per agent: opinion against time.
pub fn trajectories_panel(snaps: &[SnapshotRecord], title: &str) -> Panel {
    let t = range(snaps.iter().map(|s| s.t));
    let th = range(snaps.iter().flat_map(|s| s.opinions.iter().copied()));
    let frame = Frame::padded(if t.0.is_finite() { t } else { (0.0, 1.0) }, if th.0.is_finite() { th } else { (-1.0, 1.0) });
    let mut body = String::new();
    frame.axes(&mut body, "t", "theta");
    let n = snaps.first().map_or(0, |s| s.opinions.len());
    for k in 0..n {
        let mut pts = String::new();
        for s in snaps {
            let _ = write!(pts, "{:.2},{:.2} ", frame.px(s.t), frame.py(s.opinions[k]));
        }
        let start = snaps[0].opinions[k];
        let _ = writeln!(
            body,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="0.6"/>"#,
            pts.trim_end(),
            hex(opinion_color(start))
        );
    }
    Panel { title: title.to_string(), body }
}

pub fn histogram_panel(counts: &[usize], title: &str) -> Panel {
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let (lo, _) = bin_edges(0);
    let (_, hi) = bin_edges(counts.len().saturating_sub(1));
    let frame = Frame { x: (lo, hi), y: (0.0, max * 1.05) };
    let mut body = String::new();
    frame.axes(&mut body, "theta", "count");
    for (b, &c) in counts.iter().enumerate() {
        let (a, e) = bin_edges(b);
        let (x0, x1, y0, y1) = (frame.px(a), frame.px(e), frame.py(c as f64), frame.py(0.0));
        let _ = writeln!(
            body,
            r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{}" stroke="black" stroke-width="0.3"/>"#,
            x1 - x0,
            y1 - y0,
            hex(opinion_color((a + e) / 2.0))
        );
    }
    Panel { title: title.to_string(), body }
}

/// Density on the (z, eta) grid; colour scale shared through `vmax`.
pub fn heatmap_panel(f: &DensityField<f64>, vmax: f64, title: &str) -> Panel {
    let g = f.grid;
    let frame = Frame { x: (g.z_min, g.z_max), y: (g.eta_min, g.eta_max) };
    let mut body = String::new();
    for i in 0..g.nz {
        for j in 0..g.neta {
            let (x0, x1) = (frame.px(g.z(i) - g.h / 2.0), frame.px(g.z(i) + g.h / 2.0));
            let (y1, y0) = (frame.py(g.eta(j) - g.h / 2.0), frame.py(g.eta(j) + g.h / 2.0));
            let _ = writeln!(
                body,
                r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                x1 - x0 + 0.05,
                y1 - y0 + 0.05,
                hex(density_color(f.at(i, j), vmax))
            );
        }
    }
    frame.axes(&mut body, "z", "eta");
    Panel { title: title.to_string(), body }
}

/// Lays panels out left to right.
pub fn figure(panels: &[Panel]) -> String {
    let w = PANEL * panels.len().max(1) as f64;
    let h = PANEL + 20.0;
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#);
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, p) in panels.iter().enumerate() {
        let _ = writeln!(out, r#"<g transform="translate({:.0},20)">"#, PANEL * k as f64);
        let _ = writeln!(out, r#"<text x="{:.1}" y="4" font-size="13" text-anchor="middle">{}</text>"#, PANEL / 2.0, escape(&p.title));
        out.push_str(&p.body);
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
