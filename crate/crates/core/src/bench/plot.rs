//! Static charts. [`SvgBackend`] renders them without external tools.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

/// Grouped bars: one group per entry of `groups`, one bar per series.
#[derive(Debug, Clone, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub groups: Vec<String>,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

pub trait PlotBackend {
    /// File extension of the rendered charts.
    fn extension(&self) -> &'static str;
    fn bar_chart(&self, chart: &BarChart) -> String;
    fn line_chart(&self, chart: &LineChart) -> String;
}

const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];
const W: f64 = 720.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

#[derive(Debug, Clone, Copy, Default)]
pub struct SvgBackend;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn finite_range<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * hi.abs().max(1.0) {
        return (lo - 0.5 * lo.abs().max(1e-3), hi + 0.5 * hi.abs().max(1e-3));
    }
    (lo, hi)
}

struct Frame {
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn y(&self, v: f64) -> f64 {
        TOP + (H - TOP - BOTTOM) * (1.0 - (v - self.y_lo) / (self.y_hi - self.y_lo))
    }
}

fn header(out: &mut String, title: &str, y_label: &str, frame: &Frame) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, (W - RIGHT + LEFT) / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (H - BOTTOM + TOP) / 2.0,
        escape(y_label)
    );
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(out, r#"<path d="M{x0} {y0}V{y1}H{x1}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let v = frame.y_lo + (frame.y_hi - frame.y_lo) * k as f64 / 4.0;
        let y = frame.y(v);
        let _ = writeln!(out, r##"<path d="M{} {y:.2}H{x1}" stroke="#ddd"/>"##, x0);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{:.4}</text>"#, x0 - 4.0, y + 4.0, v);
    }
}

fn legend(out: &mut String, names: &[&str]) {
    for (k, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * k as f64;
        let x = W - RIGHT + 12.0;
        let _ = writeln!(out, r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/>"#, y - 10.0, PALETTE[k % PALETTE.len()]);
        let _ = writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 18.0, escape(name));
    }
}

impl PlotBackend for SvgBackend {
    fn extension(&self) -> &'static str {
        "svg"
    }

    fn bar_chart(&self, chart: &BarChart) -> String {
        let (_, hi) = finite_range(chart.series.iter().flat_map(|s| &s.values));
        let frame = Frame { y_lo: 0.0, y_hi: if hi > 0.0 { hi * 1.1 } else { 1.0 } };
        let mut out = String::new();
        header(&mut out, &chart.title, &chart.y_label, &frame);
        let n_groups = chart.groups.len().max(1) as f64;
        let group_w = (W - RIGHT - LEFT) / n_groups;
        let bar_w = 0.8 * group_w / chart.series.len().max(1) as f64;
        for (g, name) in chart.groups.iter().enumerate() {
            let gx = LEFT + group_w * g as f64;
            for (k, s) in chart.series.iter().enumerate() {
                let Some(&v) = s.values.get(g).filter(|v| v.is_finite()) else { continue };
                let x = gx + 0.1 * group_w + bar_w * k as f64;
                let (y, base) = (frame.y(v.max(0.0)), frame.y(0.0));
                let _ = writeln!(
                    out,
                    r#"<rect x="{x:.2}" y="{y:.2}" width="{bar_w:.2}" height="{:.2}" fill="{}"/>"#,
                    base - y,
                    PALETTE[k % PALETTE.len()]
                );
            }
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
                gx + group_w / 2.0,
                H - BOTTOM + 16.0,
                escape(name)
            );
        }
        let names: Vec<&str> = chart.series.iter().map(|s| s.name.as_str()).collect();
        legend(&mut out, &names);
        out.push_str("</svg>\n");
        out
    }

    fn line_chart(&self, chart: &LineChart) -> String {
        let (lo, hi) = finite_range(chart.series.iter().flat_map(|s| &s.values));
        let pad = 0.05 * (hi - lo);
        let frame = Frame { y_lo: lo - pad, y_hi: hi + pad };
        let mut out = String::new();
        header(&mut out, &chart.title, &chart.y_label, &frame);
        let n = chart.series.iter().map(|s| s.values.len()).max().unwrap_or(0);
        let x = |i: usize| LEFT + (W - RIGHT - LEFT) * i as f64 / (n.max(2) - 1) as f64;
        for (k, s) in chart.series.iter().enumerate() {
            let mut d = String::new();
            let mut pen_down = false;
            for (i, v) in s.values.iter().enumerate() {
                if !v.is_finite() {
                    pen_down = false;
                    continue;
                }
                let _ = write!(d, "{}{:.2} {:.2}", if pen_down { "L" } else { "M" }, x(i), frame.y(*v));
                pen_down = true;
            }
            let _ = writeln!(out, r#"<path d="{d}" fill="none" stroke="{}" stroke-width="1.2"/>"#, PALETTE[k % PALETTE.len()]);
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (W - RIGHT + LEFT) / 2.0,
            H - BOTTOM + 30.0,
            escape(&chart.x_label)
        );
        let names: Vec<&str> = chart.series.iter().map(|s| s.name.as_str()).collect();
        legend(&mut out, &names);
        out.push_str("</svg>\n");
        out
    }
}
