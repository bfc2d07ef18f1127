//! Minimal SVG line charts.

use std::fmt::Write;

pub struct Series<'a> {
    pub name: &'a str,
    pub y: &'a [f64],
    /// lower and upper band, drawn as a shaded polygon
    pub band: Option<(&'a [f64], &'a [f64])>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

pub fn line_chart(title: &str, x_label: &str, x: &[f64], series: &[Series], log_x: bool) -> String {
    let tx = |v: f64| if log_x { v.max(1e-300).log10() } else { v };
    let xs: Vec<f64> = x.iter().map(|&v| tx(v)).collect();
    let (x0, x1) = extent(xs.iter().copied().filter(|v| !log_x || *v > -300.0));
    let (y0, y1) = extent(series.iter().flat_map(|s| {
        let band = s.band.map(|(lo, hi)| lo.iter().chain(hi).copied().collect::<Vec<_>>());
        s.y.iter().copied().chain(band.unwrap_or_default())
    }));
    let px = |v: f64| MARGIN + (v - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |v: f64| HEIGHT - MARGIN - (v - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let points = |ys: &[f64]| -> Vec<(f64, f64)> {
        xs.iter()
            .zip(ys)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(&a, &b)| (px(a), py(b)))
            .collect()
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{m} {b} H{r} M{m} {b} V{m}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let label = if log_x { 10f64.powf(fx) } else { fx };
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(fx),
            HEIGHT - MARGIN + 16.0,
            tick(label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN - 6.0,
            py(fy) + 4.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        if let Some((lo, hi)) = s.band {
            let mut poly = points(lo);
            poly.extend(points(hi).into_iter().rev());
            let _ = writeln!(
                svg,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                join(&poly)
            );
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            join(&points(s.y))
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            WIDTH - MARGIN + 4.0 - 120.0,
            MARGIN + 16.0 * k as f64,
            escape(s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn join(points: &[(f64, f64)]) -> String {
    points
        .iter()
        .map(|(a, b)| format!("{a:.2},{b:.2}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
