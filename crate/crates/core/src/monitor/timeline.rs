//! Static SVG timeline of a monitoring run: confidences of the active action,
//! the expected phase band, and anomaly markers.

use std::fmt::Write;

use super::run::MonitorLog;
use super::Expected;
use crate::corpus::PhaseLabel;

const WIDTH: f64 = 960.0;
const PLOT_TOP: f64 = 40.0;
const PLOT_H: f64 = 200.0;
const BAND_Y: f64 = 260.0;
const BAND_H: f64 = 18.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const COLORS: [&str; 3] = ["#1f77b4", "#2ca02c", "#d62728"];

fn band_color(e: Option<Expected>) -> &'static str {
    match e {
        Some(Expected::Label(PhaseLabel::Precondition)) => "#c6dbef",
        Some(Expected::Label(PhaseLabel::Effect)) => "#c7e9c0",
        Some(Expected::Label(PhaseLabel::Unsatisfied)) => "#fcbba1",
        Some(Expected::Suspended) => "#d9d9d9",
        None => "#ffffff",
    }
}

pub fn timeline_svg(log: &MonitorLog, title: &str) -> String {
    let n = log.events.len().max(1) as f64;
    let dx = (WIDTH - LEFT - RIGHT) / n;
    let x = |i: usize| LEFT + i as f64 * dx;
    let y = |c: f64| PLOT_TOP + (1.0 - c) * PLOT_H;
    let height = BAND_Y + BAND_H + 60.0;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="{LEFT}" y="20" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(s, r##"<rect x="{LEFT}" y="{PLOT_TOP}" width="{}" height="{PLOT_H}" fill="none" stroke="#888"/>"##, WIDTH - LEFT - RIGHT);
    for (k, label) in ["1.0", "0.5", "0.0"].iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{label}</text>"#, LEFT - 6.0, PLOT_TOP + k as f64 * PLOT_H / 2.0 + 4.0);
    }
    for (c, color) in COLORS.iter().enumerate() {
        let mut pts = Vec::new();
        for (i, e) in log.events.iter().enumerate() {
            match e.confidences {
                Some(conf) => pts.push(format!("{:.1},{:.1}", x(i) + dx / 2.0, y(conf[c]))),
                None if !pts.is_empty() => {
                    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
                    pts.clear();
                }
                None => {}
            }
        }
        if !pts.is_empty() {
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        }
    }
    for (i, e) in log.events.iter().enumerate() {
        let _ = writeln!(s, r#"<rect x="{:.1}" y="{BAND_Y}" width="{:.2}" height="{BAND_H}" fill="{}"/>"#, x(i), dx, band_color(e.expected));
        if e.anomaly {
            let _ = writeln!(s, r##"<line x1="{0:.1}" y1="{PLOT_TOP}" x2="{0:.1}" y2="{1}" stroke="#d62728" stroke-width="2" stroke-dasharray="4 2"/>"##, x(i) + dx / 2.0, BAND_Y + BAND_H);
        }
    }
    let mut last: Option<(&Option<String>, Option<u64>)> = None;
    for (i, e) in log.events.iter().enumerate() {
        let now = (&e.action, e.run);
        if last != Some(now) {
            if let Some(a) = &e.action {
                let _ = writeln!(s, r##"<line x1="{0:.1}" y1="{PLOT_TOP}" x2="{0:.1}" y2="{1}" stroke="#555" stroke-width="0.5"/>"##, x(i), BAND_Y + BAND_H);
                let _ = writeln!(s, r#"<text x="{:.1}" y="{}" transform="rotate(20 {:.1} {})">{}</text>"#, x(i) + 2.0, BAND_Y + BAND_H + 14.0, x(i) + 2.0, BAND_Y + BAND_H + 14.0, escape(a));
            }
        }
        last = Some(now);
    }
    let legend_y = height - 8.0;
    for (c, (color, name)) in COLORS.iter().zip(["precondition", "effect", "unsatisfied"]).enumerate() {
        let lx = LEFT + c as f64 * 130.0;
        let _ = writeln!(s, r#"<rect x="{lx}" y="{}" width="12" height="4" fill="{color}"/><text x="{}" y="{legend_y}">{name}</text>"#, legend_y - 6.0, lx + 16.0);
    }
    let _ = writeln!(s, r##"<text x="{}" y="{legend_y}" fill="#d62728">anomaly</text>"##, LEFT + 400.0);
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
