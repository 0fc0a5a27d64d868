//! Plot data as long-format CSV, plus a bare-bones SVG rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use herdkit_core::analysis::{PlotKind, PlotPoint};

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 48.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Line chart per series, or a `d_before` vs `d_after` scatter with the
/// diagonal for the distance-shift kind.
pub fn render_svg(points: &[PlotPoint], kind: PlotKind) -> String {
    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}"><rect width="100%" height="100%" fill="white"/>"#
    );
    let _ = write!(svg, r#"<text x="{PAD}" y="24" font-family="sans-serif" font-size="14">{kind}</text>"#);
    if kind == PlotKind::DistanceShift {
        scatter(&mut svg, points);
    } else {
        lines(&mut svg, points);
    }
    svg.push_str("</svg>\n");
    svg
}

fn frame(svg: &mut String, (x0, x1): (f64, f64), (y0, y1): (f64, f64)) {
    let _ = write!(
        svg,
        r#"<path d="M{PAD},{PAD} V{b} H{r}" fill="none" stroke="black"/><text x="{PAD}" y="{t}" font-family="sans-serif" font-size="10">{x0:.3} .. {x1:.3}</text><text x="4" y="{PAD}" font-family="sans-serif" font-size="10">{y1:.3}</text><text x="4" y="{b}" font-family="sans-serif" font-size="10">{y0:.3}</text>"#,
        b = H - PAD,
        r = W - PAD,
        t = H - PAD + 16.0,
    );
}

fn range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn map(v: f64, (lo, hi): (f64, f64), a: f64, b: f64) -> f64 {
    a + (v - lo) / (hi - lo) * (b - a)
}

fn lines(svg: &mut String, points: &[PlotPoint]) {
    let xr = range(points.iter().map(|p| p.step as f64));
    let yr = range(points.iter().map(|p| p.value));
    frame(svg, xr, yr);
    let mut series: BTreeMap<&str, Vec<&PlotPoint>> = BTreeMap::new();
    for p in points {
        series.entry(&p.series).or_default().push(p);
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let d: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.1},{:.1}", map(p.step as f64, xr, PAD, W - PAD), map(p.value, yr, H - PAD, PAD)))
            .collect();
        let colour = PALETTE[i % PALETTE.len()];
        let _ = write!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{colour}"/><text x="{}" y="{}" font-family="sans-serif" font-size="10" fill="{colour}">{name}</text>"#,
            d.join(" "),
            W - PAD + 4.0,
            PAD + 12.0 * i as f64
        );
    }
}

fn scatter(svg: &mut String, points: &[PlotPoint]) {
    let before: BTreeMap<u64, f64> = points.iter().filter(|p| p.series == "d_before").map(|p| (p.step, p.value)).collect();
    let pairs: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.series == "d_after")
        .filter_map(|p| before.get(&p.step).map(|&b| (b, p.value)))
        .collect();
    let r = range(pairs.iter().flat_map(|&(a, b)| [a, b]));
    frame(svg, r, r);
    let _ = write!(
        svg,
        r##"<line x1="{PAD}" y1="{}" x2="{}" y2="{PAD}" stroke="#999" stroke-dasharray="4"/>"##,
        H - PAD,
        W - PAD
    );
    for (b, a) in pairs {
        let _ = write!(
            svg,
            r##"<circle cx="{:.1}" cy="{:.1}" r="1.5" fill="#1f77b4"/>"##,
            map(b, r, PAD, W - PAD),
            map(a, r, H - PAD, PAD)
        );
    }
}
