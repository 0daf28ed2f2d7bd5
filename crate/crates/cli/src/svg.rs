//! Minimal SVG line and scatter plots. No styling beyond a fixed palette.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> Self {
        let mut f = Frame { x0: f64::INFINITY, x1: f64::NEG_INFINITY, y0: f64::INFINITY, y1: f64::NEG_INFINITY };
        for &(x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            f.x0 = f.x0.min(x);
            f.x1 = f.x1.max(x);
            f.y0 = f.y0.min(y);
            f.y1 = f.y1.max(y);
        }
        if !f.x0.is_finite() {
            return Frame { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };
        }
        if f.x1 == f.x0 {
            f.x0 -= 0.5;
            f.x1 += 0.5;
        }
        if f.y1 == f.y0 {
            f.y0 -= 0.5;
            f.y1 += 0.5;
        }
        f
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let (bx, by) = (H - BOTTOM, W - RIGHT);
    let _ = writeln!(s, r#"<path d="M{LEFT} {TOP} V{bx} H{by}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (x, y) = (f.x0 + t * (f.x1 - f.x0), f.y0 + t * (f.y1 - f.y0));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, f.px(x), bx + 16.0, tick(x));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, LEFT - 6.0, f.py(y) + 4.0, tick(y));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (LEFT + by) / 2.0, H - 10.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        (TOP + bx) / 2.0,
        (TOP + bx) / 2.0,
        escape(ylabel)
    );
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn legend(s: &mut String, labels: impl Iterator<Item = String>) {
    for (i, label) in labels.enumerate().take(24) {
        let y = TOP + 14.0 * i as f64;
        let c = PALETTE[i % PALETTE.len()];
        let x = W - RIGHT + 12.0;
        let _ = writeln!(s, r#"<rect x="{x}" y="{:.1}" width="10" height="3" fill="{c}"/>"#, y - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{y:.1}">{}</text>"#, x + 14.0, escape(&label));
    }
}

pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let f = Frame::fit(series.iter().flat_map(|s| s.points.iter()));
    let mut s = open(title, xlabel, ylabel, &f);
    for (i, ser) in series.iter().enumerate() {
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            pts.join(" "),
            PALETTE[i % PALETTE.len()]
        );
    }
    legend(&mut s, series.iter().map(|x| x.label.clone()));
    s.push_str("</svg>\n");
    s
}

/// Scatter plot; points may carry a text label.
pub fn scatter_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series], labels: &[Vec<String>]) -> String {
    let f = Frame::fit(series.iter().flat_map(|s| s.points.iter()));
    let mut s = open(title, xlabel, ylabel, &f);
    for (i, ser) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        for (j, &(x, y)) in ser.points.iter().enumerate().filter(|(_, (x, y))| x.is_finite() && y.is_finite()) {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{c}" fill-opacity="0.6"/>"#, f.px(x), f.py(y));
            if let Some(text) = labels.get(i).and_then(|l| l.get(j)) {
                let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="9">{}</text>"#, f.px(x) + 4.0, f.py(y) - 3.0, escape(text));
            }
        }
    }
    legend(&mut s, series.iter().map(|x| x.label.clone()));
    s.push_str("</svg>\n");
    s
}
