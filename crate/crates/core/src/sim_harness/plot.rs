//! SVG chart of mean value estimates with one-standard-deviation bands and
//! dotted reference bounds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::trial::Record;
use crate::error::{Error, Result};

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 210.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;
const AGENT_COLORS: [&str; 2] = ["#1f77b4", "#d62728"];
const STATE_DASHES: [&str; 4] = ["", "6,3", "2,2", "8,3,2,3"];

struct Series<'a> {
    agent: u8,
    state: usize,
    rows: Vec<&'a Record>,
}

/// Renders the chart as an SVG document. `labels[i]` names agent `i + 1`.
pub fn render_svg(records: &[Record], labels: &[String; 2], log_x: bool) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Config(
            "nothing to plot: the aggregate is empty".into(),
        ));
    }
    let mut groups: BTreeMap<(u8, usize), Vec<&Record>> = BTreeMap::new();
    for r in records {
        groups.entry((r.agent, r.state)).or_default().push(r);
    }
    let series: Vec<Series> = groups
        .into_iter()
        .map(|((agent, state), rows)| Series { agent, state, rows })
        .collect();

    let log_x = log_x && records.iter().all(|r| r.k > 0);
    let xf = |k: u64| if log_x { (k as f64).log10() } else { k as f64 };
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in records {
        x0 = x0.min(xf(r.k));
        x1 = x1.max(xf(r.k));
        let sd = r.v_est_std.unwrap_or(0.0);
        for y in [
            Some(r.v_est_mean - sd),
            Some(r.v_est_mean + sd),
            r.bound_lo,
            r.bound_hi,
        ]
        .into_iter()
        .flatten()
        {
            if y.is_finite() {
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-9 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |k: u64| MARGIN_LEFT + (xf(k) - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| MARGIN_TOP + (y1 - y) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );

    // Axis ticks.
    for t in 0..=4 {
        let y = y0 + (y1 - y0) * t as f64 / 4.0;
        let yy = py(y);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{y:.3}</text>"#,
            MARGIN_LEFT - 6.0,
            yy + 4.0
        );
    }
    for t in 0..=4 {
        let xv = x0 + (x1 - x0) * t as f64 / 4.0;
        let label = if log_x {
            format!("1e{xv:.1}")
        } else {
            format!("{xv:.0}")
        };
        let xx = MARGIN_LEFT + plot_w * t as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{xx:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#,
            HEIGHT - MARGIN_BOTTOM + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">stage{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 10.0,
        if log_x { " (log scale)" } else { "" }
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">value estimate</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    );

    for s in &series {
        let color = AGENT_COLORS[(s.agent as usize + 1) % 2];
        // Standard-deviation band.
        if s.rows.iter().any(|r| r.v_est_std.is_some_and(|x| x > 0.0)) {
            let upper: Vec<String> = s
                .rows
                .iter()
                .map(|r| {
                    format!(
                        "{:.2},{:.2}",
                        px(r.k),
                        py(r.v_est_mean + r.v_est_std.unwrap_or(0.0))
                    )
                })
                .collect();
            let lower: Vec<String> = s
                .rows
                .iter()
                .rev()
                .map(|r| {
                    format!(
                        "{:.2},{:.2}",
                        px(r.k),
                        py(r.v_est_mean - r.v_est_std.unwrap_or(0.0))
                    )
                })
                .collect();
            let _ = writeln!(
                svg,
                r#"<polygon class="band" points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                upper.join(" "),
                lower.join(" ")
            );
        }
        // Reference bounds as dotted horizontal lines.
        let last = s.rows.last().expect("non-empty series");
        let (xa, xb) = (px(s.rows[0].k), px(last.k));
        for b in [last.bound_lo, last.bound_hi].into_iter().flatten() {
            let _ = writeln!(
                svg,
                r#"<line class="bound" x1="{xa:.2}" y1="{:.2}" x2="{xb:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="1,3" stroke-width="1"/>"#,
                py(b),
                py(b)
            );
        }
    }
    for (n, s) in series.iter().enumerate() {
        let color = AGENT_COLORS[(s.agent as usize + 1) % 2];
        let dash = STATE_DASHES[s.state % STATE_DASHES.len()];
        let points: Vec<String> = s
            .rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", px(r.k), py(r.v_est_mean)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="1.5" stroke-dasharray="{dash}"/>"#,
            points.join(" ")
        );
        let ly = MARGIN_TOP + 10.0 + 18.0 * n as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let label = labels
            .get(s.agent as usize - 1)
            .map(String::as_str)
            .unwrap_or("agent");
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="1.5" stroke-dasharray="{dash}"/>"#,
            lx + 24.0
        );
        let _ = writeln!(
            svg,
            r#"<text class="legend" x="{:.1}" y="{:.1}">{}, s{}</text>"#,
            lx + 30.0,
            ly + 4.0,
            xml_escape(label),
            s.state + 1
        );
    }
    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}

pub fn render_plot(
    records: &[Record],
    labels: &[String; 2],
    path: &Path,
    log_x: bool,
) -> Result<()> {
    let svg = render_svg(records, labels, log_x)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
