//! Heatmaps of fold-mean metric tables as SVG.

use std::fmt::Write as _;

use crate::metrics::MetricTable;

const CELL: f64 = 36.0;
const LABEL: f64 = 120.0;
const TITLE: f64 = 28.0;

// Sequential ramp, dark (low) to bright (high).
const STOPS: [(f64, [u8; 3]); 5] = [
    (0.00, [68, 1, 84]),
    (0.25, [59, 82, 139]),
    (0.50, [33, 145, 140]),
    (0.75, [94, 201, 98]),
    (1.00, [253, 231, 37]),
];

fn ramp(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    for w in STOPS.windows(2) {
        let (t0, c0) = w[0];
        let (t1, c1) = w[1];
        if t <= t1 {
            let u = (t - t0) / (t1 - t0);
            return std::array::from_fn(|i| (c0[i] as f64 + u * (c1[i] as f64 - c0[i] as f64)).round() as u8);
        }
    }
    STOPS[STOPS.len() - 1].1
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Rows are test domains, columns training domains. Similarity metrics use
/// an inverted scale so that bright always means a larger shift.
pub fn heatmap_svg(table: &MetricTable) -> String {
    let m = table.fold_mean();
    let names = table.domains();
    let d = names.len();
    let finite = m.iter().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let invert = table.kind().is_similarity();
    let width = LABEL + CELL * d as f64 + 10.0;
    let height = TITLE + CELL * d as f64 + LABEL;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let title = if invert {
        format!("{} (inverted scale)", table.kind())
    } else {
        table.kind().to_string()
    };
    let _ = writeln!(out, r#"<text x="{LABEL}" y="18" font-size="14">{}</text>"#, escape(&title));
    for (y, name) in names.iter().enumerate() {
        let cy = TITLE + CELL * (y as f64 + 0.5);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{cy}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            LABEL - 4.0,
            escape(name)
        );
    }
    for (x, name) in names.iter().enumerate() {
        let cx = LABEL + CELL * (x as f64 + 0.5);
        let cy = TITLE + CELL * d as f64 + 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{cx}" y="{cy}" transform="rotate(60 {cx} {cy})">{}</text>"#,
            escape(name)
        );
    }
    for (x, col) in m.iter().enumerate() {
        for (y, &v) in col.iter().enumerate() {
            let mut t = (v - lo) / span;
            if invert {
                t = 1.0 - t;
            }
            let [r, g, b] = ramp(t);
            let _ = writeln!(
                out,
                r##"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="#{r:02x}{g:02x}{b:02x}"><title>{} on {}: {v:.4}</title></rect>"##,
                LABEL + CELL * x as f64,
                TITLE + CELL * y as f64,
                escape(&names[x]),
                escape(&names[y]),
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
