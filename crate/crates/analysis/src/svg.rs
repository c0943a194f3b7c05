//! Plain SVG renderings of cluster fingerprints and 2D projections.

use std::fmt::Write as _;

use behavior_lm_core::Category;

use crate::fingerprint::ClusterFingerprint;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

/// Grouped bar chart: one group per category, one bar per cluster.
pub fn fingerprint_svg(fps: &[ClusterFingerprint]) -> String {
    let (w, h, left, bottom, top) = (960.0, 420.0, 50.0, 90.0, 20.0);
    let plot_h = h - bottom - top;
    let group_w = (w - left - 10.0) / Category::COUNT as f64;
    let bar_w = (group_w * 0.8) / fps.len().max(1) as f64;
    let ymax = fps
        .iter()
        .flat_map(|f| f.histogram.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#).unwrap();
    writeln!(s, r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - bottom, w - 10.0, h - bottom).unwrap();
    writeln!(s, r#"<text x="4" y="{}">{ymax:.2}</text>"#, top + 4.0).unwrap();
    for (ci, c) in Category::ALL.iter().enumerate() {
        let gx = left + ci as f64 * group_w;
        for (k, f) in fps.iter().enumerate() {
            let bh = f.histogram[ci] / ymax * plot_h;
            writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                gx + group_w * 0.1 + k as f64 * bar_w,
                h - bottom - bh,
                bar_w,
                bh,
                color(f.cluster)
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<text transform="translate({:.2},{:.2}) rotate(45)">{c}</text>"#,
            gx + group_w * 0.3,
            h - bottom + 12.0
        )
        .unwrap();
    }
    for (k, f) in fps.iter().enumerate() {
        let y = top + 14.0 * k as f64;
        writeln!(s, r#"<rect x="{}" y="{y}" width="10" height="10" fill="{}"/>"#, w - 130.0, color(f.cluster)).unwrap();
        writeln!(s, r#"<text x="{}" y="{}">cluster {} ({})</text>"#, w - 115.0, y + 9.0, f.cluster, f.players).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Scatter plot of 2D points colored by label.
pub fn scatter_svg(coords: &[f64], labels: &[usize]) -> String {
    let (size, pad) = (600.0, 20.0);
    let xs = coords.iter().step_by(2);
    let ys = coords.iter().skip(1).step_by(2);
    let range = |it: &mut dyn Iterator<Item = &f64>| {
        it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    };
    let (x0, x1) = range(&mut xs.clone());
    let (y0, y1) = range(&mut ys.clone());
    let sx = (size - 2.0 * pad) / (x1 - x0).max(1e-12);
    let sy = (size - 2.0 * pad) / (y1 - y0).max(1e-12);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">"#).unwrap();
    for (p, &l) in coords.chunks(2).zip(labels) {
        writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#,
            pad + (p[0] - x0) * sx,
            size - pad - (p[1] - y0) * sy,
            color(l)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}
