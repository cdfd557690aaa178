use std::fmt::Write;

use sketchgnn::sketch::{Sketch, CANVAS_SIZE};

/// Stroke colors, cycled by class index.
pub const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#393b79", "#637939",
];

const UNLABELED: &str = "#000000";

pub fn class_color(class: usize) -> &'static str {
    PALETTE[class % PALETTE.len()]
}

/// Most frequent label, lowest class on ties.
fn majority(labels: &[usize]) -> Option<usize> {
    let top = *labels.iter().max()?;
    let mut counts = vec![0usize; top + 1];
    for &l in labels {
        counts[l] += 1;
    }
    (0..counts.len()).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
}

/// One `<polyline>` per stroke on a 256×256 view box, colored by the
/// stroke's majority class. Per-point labels go in `data-labels`.
pub fn render_svg(sketch: &Sketch) -> String {
    let size = CANVAS_SIZE;
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    for (i, stroke) in sketch.strokes.iter().enumerate() {
        let points: Vec<String> = stroke.points.iter().map(|p| format!("{:.3},{:.3}", p.x, p.y)).collect();
        let (color, labels) = match &stroke.labels {
            Some(l) => (
                majority(l).map_or(UNLABELED, class_color),
                format!(r#" data-labels="{}""#, l.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")),
            ),
            None => (UNLABELED, String::new()),
        };
        writeln!(
            out,
            r#"<polyline data-stroke="{i}"{labels} points="{}" fill="none" stroke="{color}" stroke-width="2" stroke-linecap="round" stroke-linejoin="round"/>"#,
            points.join(" ")
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}
