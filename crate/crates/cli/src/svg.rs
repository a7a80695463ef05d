//! Quick-look plots: stacked panels of line traces sharing an x axis.
//! Output depends only on the data, so equal runs give equal files.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 150.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 36.0;
const GAP: f64 = 34.0;
/// Longer traces are thinned to about this many points.
const MAX_POINTS: usize = 1500;

#[derive(Debug, Clone)]
pub struct Panel {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Panel {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
        }
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        // flat trace: centre it
        let pad = lo.abs().max(1.0) * 0.5;
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `panels` one above the other.
pub fn render(title: &str, x_label: &str, panels: &[Panel]) -> String {
    let height = MARGIN_TOP + panels.len() as f64 * (PANEL_HEIGHT + GAP) + 10.0;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let (x0, x1) = range(panels.iter().flat_map(|p| p.points.iter().map(|q| q.0)));
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height:.0}" viewBox="0 0 {WIDTH} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN_LEFT}" y="20" font-size="14">{}</text>"#,
        escape(title)
    );
    for (i, panel) in panels.iter().enumerate() {
        let top = MARGIN_TOP + i as f64 * (PANEL_HEIGHT + GAP);
        let (y0, y1) = range(panel.points.iter().map(|q| q.1));
        let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
        let sy = |y: f64| top + PANEL_HEIGHT - (y - y0) / (y1 - y0) * PANEL_HEIGHT;
        let _ = writeln!(
            out,
            r##"<rect x="{MARGIN_LEFT}" y="{top:.1}" width="{plot_w:.1}" height="{PANEL_HEIGHT}" fill="none" stroke="#999"/>"##
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            MARGIN_LEFT + 4.0,
            top + 13.0,
            escape(&panel.label)
        );
        for (v, y) in [(y1, top + 10.0), (y0, top + PANEL_HEIGHT)] {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{y:.1}" text-anchor="end">{}</text>"#,
                MARGIN_LEFT - 4.0,
                tick(v)
            );
        }
        if y0 < 0.0 && y1 > 0.0 {
            let z = sy(0.0);
            let _ = writeln!(
                out,
                r##"<line x1="{MARGIN_LEFT}" y1="{z:.1}" x2="{:.1}" y2="{z:.1}" stroke="#ccc" stroke-dasharray="4 3"/>"##,
                MARGIN_LEFT + plot_w
            );
        }
        let stride = panel.points.len().div_ceil(MAX_POINTS).max(1);
        let pts: Vec<String> = panel
            .points
            .iter()
            .step_by(stride)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r##"<polyline fill="none" stroke="#1f5fa8" stroke-width="1.2" points="{}"/>"##,
            pts.join(" ")
        );
        if panel.points.len() <= 30 {
            for p in &pts {
                let (x, y) = p.split_once(',').unwrap_or(("0", "0"));
                let _ = writeln!(out, r##"<circle cx="{x}" cy="{y}" r="3" fill="#1f5fa8"/>"##);
            }
        }
    }
    let bottom = MARGIN_TOP + panels.len() as f64 * (PANEL_HEIGHT + GAP) - GAP + 14.0;
    let _ = writeln!(out, r#"<text x="{MARGIN_LEFT}" y="{bottom:.1}">{}</text>"#, tick(x0));
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{bottom:.1}" text-anchor="end">{}</text>"#,
        MARGIN_LEFT + plot_w,
        tick(x1)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{bottom:.1}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(x_label)
    );
    out.push_str("</svg>\n");
    out
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}
