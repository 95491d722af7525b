//! Minimal SVG 1.1 line and scatter charts.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn new(x0: f64, y0: f64, w: f64, h: f64, xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (xmin, xmax) = padded_range(xs);
        let (ymin, ymax) = padded_range(ys);
        Self { x0, y0, w, h, xmin, xmax, ymin, ymax }
    }

    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xmin) / (self.xmax - self.xmin) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.ymin) / (self.ymax - self.ymin) * self.h
    }

    fn axes(&self, out: &mut String, x_label: &str, y_label: &str) {
        let (x0, y0, w, h) = (self.x0, self.y0, self.w, self.h);
        let _ = writeln!(out, r##"<rect x="{x0:.2}" y="{y0:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="#000"/>"##);
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let xv = self.xmin + t * (self.xmax - self.xmin);
            let yv = self.ymin + t * (self.ymax - self.ymin);
            let (px, py) = (self.px(xv), self.py(yv));
            let _ = writeln!(
                out,
                r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#000"/><text x="{px:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"##,
                y0 + h,
                y0 + h + 5.0,
                y0 + h + 18.0,
                tick(xv)
            );
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{py:.2}" x2="{x0:.2}" y2="{py:.2}" stroke="#000"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"##,
                x0 - 5.0,
                x0 - 8.0,
                py + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
            x0 + w / 2.0,
            y0 + h + 40.0,
            escape(x_label)
        );
        let (lx, ly) = (x0 - 50.0, y0 + h / 2.0);
        let _ = writeln!(
            out,
            r#"<text x="{lx:.2}" y="{ly:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 {lx:.2} {ly:.2})">{}</text>"#,
            escape(y_label)
        );
    }
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn header(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, r##"<rect width="{width}" height="{height}" fill="#fff"/>"##);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="24" font-size="15" text-anchor="middle">{}</text>"#,
        width / 2.0,
        escape(title)
    );
}

/// One polyline per series; non-finite points are dropped.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let finite = |s: &Series| -> Vec<(f64, f64)> {
        s.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect()
    };
    let all: Vec<(f64, f64)> = series.iter().flat_map(finite).collect();
    let frame = Frame::new(
        MARGIN_LEFT,
        MARGIN_TOP,
        WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
        HEIGHT - MARGIN_TOP - MARGIN_BOTTOM,
        all.iter().map(|p| p.0),
        all.iter().map(|p| p.1),
    );
    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT, title);
    frame.axes(&mut out, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts = finite(s);
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y))).collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        if let [(x, y)] = pts.as_slice() {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, frame.px(*x), frame.py(*y));
        }
        let ly = MARGIN_TOP + 15.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-size="12">{}</text>"#,
            lx + 20.0,
            lx + 25.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Side-by-side scatter panels; points are colored by their class index.
pub fn scatter_chart(title: &str, panels: &[(String, Vec<(f64, f64, usize)>)]) -> String {
    let panel_w = 360.0;
    let width = 40.0 + panel_w * panels.len().max(1) as f64;
    let height = 420.0;
    let mut out = String::new();
    header(&mut out, width, height, title);
    for (p, (label, pts)) in panels.iter().enumerate() {
        let frame = Frame::new(
            40.0 + 70.0 + panel_w * p as f64 - 40.0,
            MARGIN_TOP + 20.0,
            panel_w - 90.0,
            height - MARGIN_TOP - 20.0 - MARGIN_BOTTOM,
            pts.iter().map(|q| q.0),
            pts.iter().map(|q| q.1),
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
            frame.x0 + frame.w / 2.0,
            frame.y0 - 8.0,
            escape(label)
        );
        frame.axes(&mut out, "y1", "y2");
        for &(x, y, c) in pts.iter().filter(|q| q.0.is_finite() && q.1.is_finite()) {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}"/>"#,
                frame.px(x),
                frame.py(y),
                COLORS[c % COLORS.len()]
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
