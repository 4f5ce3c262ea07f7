//! Minimal self-contained SVG scatter plots.

use std::fmt::Write;

use crate::{CliError, Result};

const PANEL: f64 = 480.0;
const MARGIN: f64 = 40.0;
const LEGEND_ROW: f64 = 16.0;

#[derive(Debug, Clone)]
pub struct Layer {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<[f64; 2]>,
}

/// One set of axes; layers share its bounding box.
#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub layers: Vec<Layer>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Panels side by side, each with a legend entry per layer. Coordinates
/// are printed with two decimals so output is stable.
pub fn render_svg(panels: &[Panel]) -> Result<String> {
    let total: usize = panels.iter().flat_map(|p| &p.layers).map(|l| l.points.len()).sum();
    if panels.is_empty() || total == 0 {
        return Err(CliError::Invalid("nothing to plot: empty layout".into()));
    }
    let max_layers = panels.iter().map(|p| p.layers.len()).max().unwrap_or(0) as f64;
    let width = panels.len() as f64 * (PANEL + 2.0 * MARGIN);
    let height = PANEL + 2.0 * MARGIN + max_layers * LEGEND_ROW + 8.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#).unwrap();
    for (pi, panel) in panels.iter().enumerate() {
        let x0 = pi as f64 * (PANEL + 2.0 * MARGIN) + MARGIN;
        let y0 = MARGIN;
        let pts = panel.layers.iter().flat_map(|l| &l.points);
        let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in pts {
            xmin = xmin.min(p[0]);
            xmax = xmax.max(p[0]);
            ymin = ymin.min(p[1]);
            ymax = ymax.max(p[1]);
        }
        if !xmin.is_finite() {
            (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
        }
        let sx = if xmax > xmin { PANEL / (xmax - xmin) } else { 0.0 };
        let sy = if ymax > ymin { PANEL / (ymax - ymin) } else { 0.0 };
        writeln!(s, r#"<g class="panel">"#).unwrap();
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-weight="bold">{}</text>"#, x0, y0 - 12.0, escape(&panel.title)).unwrap();
        writeln!(s, r##"<rect x="{x0:.2}" y="{y0:.2}" width="{PANEL}" height="{PANEL}" fill="none" stroke="#888"/>"##).unwrap();
        for layer in &panel.layers {
            writeln!(s, r#"<g class="points" fill="{}" fill-opacity="0.6">"#, layer.color).unwrap();
            for p in &layer.points {
                let cx = x0 + if sx > 0.0 { (p[0] - xmin) * sx } else { PANEL / 2.0 };
                let cy = y0 + PANEL - if sy > 0.0 { (p[1] - ymin) * sy } else { PANEL / 2.0 };
                writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="1.5"/>"#).unwrap();
            }
            writeln!(s, "</g>").unwrap();
        }
        for (li, layer) in panel.layers.iter().enumerate() {
            let ly = y0 + PANEL + 18.0 + li as f64 * LEGEND_ROW;
            writeln!(
                s,
                r#"<g class="legend"><rect x="{x0:.2}" y="{:.2}" width="10" height="10" fill="{}"/><text x="{:.2}" y="{:.2}">{} ({})</text></g>"#,
                ly - 9.0,
                layer.color,
                x0 + 16.0,
                ly,
                escape(&layer.label),
                layer.points.len()
            )
            .unwrap();
        }
        writeln!(s, "</g>").unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}
