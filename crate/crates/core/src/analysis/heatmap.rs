use std::fmt::Write;
use std::path::Path;

use super::{io, AnalysisError};
use crate::graph::SquareMatrix;

const CELL: usize = 24;
const MARGIN: usize = 80;

/// Diverging ramp for `t ∈ [0, 1]`: blue through white to red.
pub fn ramp_color(t: f64) -> (u8, u8, u8) {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let c = |x: f64| (255.0 * x).round() as u8;
    if t <= 0.5 {
        let u = t / 0.5;
        (c(u), c(u), 255)
    } else {
        let u = (1.0 - t) / 0.5;
        (255, c(u), c(u))
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG grid of `m` coloured over `[0, max entry]`, with row and column labels.
pub fn heatmap_svg(m: &SquareMatrix, labels: &[String]) -> Result<String, AnalysisError> {
    let n = m.n();
    if labels.len() != n {
        return Err(AnalysisError::Labels {
            expected: n,
            found: labels.len(),
        });
    }
    let max = m.max();
    let side = MARGIN + n * CELL;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{side}" height="{side}" viewBox="0 0 {side} {side}" font-family="sans-serif" font-size="10">"#
    );
    for (i, label) in labels.iter().enumerate() {
        let y = MARGIN + i * CELL + CELL / 2;
        let _ = writeln!(
            s,
            r#"<text class="row-label" x="{}" y="{y}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            MARGIN - 4,
            escape(label)
        );
    }
    for (j, label) in labels.iter().enumerate() {
        let x = MARGIN + j * CELL + CELL / 2;
        let _ = writeln!(
            s,
            r#"<text class="col-label" x="{x}" y="{}" text-anchor="start" transform="rotate(-90 {x} {})">{}</text>"#,
            MARGIN - 4,
            MARGIN - 4,
            escape(label)
        );
    }
    for i in 0..n {
        for j in 0..n {
            let v = m.get(i, j);
            let t = if max > 0.0 { v / max } else { 0.0 };
            let (r, g, b) = ramp_color(t);
            let _ = writeln!(
                s,
                r##"<rect class="cell" x="{}" y="{}" width="{CELL}" height="{CELL}" fill="#{r:02x}{g:02x}{b:02x}"><title>{v:?}</title></rect>"##,
                MARGIN + j * CELL,
                MARGIN + i * CELL
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn heatmap_export(m: &SquareMatrix, labels: &[String], path: &Path) -> Result<(), AnalysisError> {
    let svg = heatmap_svg(m, labels)?;
    std::fs::write(path, svg).map_err(|e| io(path, e))
}
