//! SVG scatter of (path length, RRPI) with KDE iso-contours, centre of mass
//! markers and regression lines.

use std::fmt::Write;

use crate::metrics::{kde_com, regression_slope, Kde, ScatterPoint};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const GRID: usize = 64;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn sx(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn frame(series: &[(&str, &[ScatterPoint])]) -> Frame {
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x1, mut y1) = (1.0f64, 1.0f64);
    for p in pts {
        x1 = x1.max(p.length as f64);
        y1 = y1.max(p.rrpi as f64);
    }
    Frame {
        x0: 0.0,
        x1: x1 * 1.05,
        y0: 0.0,
        y1: y1 * 1.05,
    }
}

// Marching squares over a sampled density; emits one segment per crossed cell.
fn contour_segments(f: &Frame, kde: &Kde, level: f64) -> Vec<[(f64, f64); 2]> {
    let xs: Vec<f64> = (0..=GRID).map(|i| f.x0 + (f.x1 - f.x0) * i as f64 / GRID as f64).collect();
    let ys: Vec<f64> = (0..=GRID).map(|j| f.y0 + (f.y1 - f.y0) * j as f64 / GRID as f64).collect();
    let d: Vec<Vec<f64>> = ys.iter().map(|&y| xs.iter().map(|&x| kde.density(x, y)).collect()).collect();
    let lerp = |a: (f64, f64, f64), b: (f64, f64, f64)| {
        let t = (level - a.2) / (b.2 - a.2);
        (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
    };
    let mut out = Vec::new();
    for j in 0..GRID {
        for i in 0..GRID {
            let corners = [
                (xs[i], ys[j], d[j][i]),
                (xs[i + 1], ys[j], d[j][i + 1]),
                (xs[i + 1], ys[j + 1], d[j + 1][i + 1]),
                (xs[i], ys[j + 1], d[j + 1][i]),
            ];
            let mut hits = Vec::with_capacity(4);
            for k in 0..4 {
                let (a, b) = (corners[k], corners[(k + 1) % 4]);
                if (a.2 >= level) != (b.2 >= level) {
                    hits.push(lerp(a, b));
                }
            }
            for pair in hits.chunks_exact(2) {
                out.push([pair[0], pair[1]]);
            }
        }
    }
    out
}

/// Renders each named series as dots, two KDE iso-contours, its centre of
/// mass and its least-squares line.
pub fn scatter_svg(series: &[(&str, &[ScatterPoint])]) -> String {
    let f = frame(series);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let (ax0, ay0, ax1, ay1) = (f.sx(f.x0), f.sy(f.y0), f.sx(f.x1), f.sy(f.y1));
    writeln!(
        s,
        r#"<path d="M{ax0:.1},{ay1:.1} L{ax0:.1},{ay0:.1} L{ax1:.1},{ay0:.1}" stroke="black" fill="none"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">path length (pixels)</text>"#,
        (ax0 + ax1) / 2.0,
        HEIGHT - 12.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">RRPI</text>"#,
        (ay0 + ay1) / 2.0,
        (ay0 + ay1) / 2.0
    )
    .unwrap();

    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        writeln!(s, r#"<g stroke="{color}" fill="{color}">"#).unwrap();
        if let Ok(kde) = Kde::fit(pts) {
            let peak = pts.iter().map(|p| kde.density(p.length as f64, p.rrpi as f64)).fold(0.0, f64::max);
            for frac in [0.25, 0.6] {
                let mut d = String::new();
                for [a, b] in contour_segments(&f, &kde, peak * frac) {
                    write!(d, "M{:.1},{:.1}L{:.1},{:.1}", f.sx(a.0), f.sy(a.1), f.sx(b.0), f.sy(b.1)).unwrap();
                }
                if !d.is_empty() {
                    writeln!(s, r#"<path d="{d}" fill="none" stroke-opacity="0.5"/>"#).unwrap();
                }
            }
        }
        for p in pts.iter() {
            writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill-opacity="0.6" stroke="none"/>"#,
                f.sx(p.length as f64),
                f.sy(p.rrpi as f64)
            )
            .unwrap();
        }
        if let Ok((cx, cy)) = kde_com(pts) {
            writeln!(
                s,
                r#"<path d="M{:.1},{:.1}l-6,-6m6,6l6,6m-6,-6l6,-6m-6,6l-6,6" stroke-width="2.5"/>"#,
                f.sx(cx),
                f.sy(cy)
            )
            .unwrap();
            if let Ok(m) = regression_slope(pts) {
                let b = cy - m * cx;
                writeln!(
                    s,
                    r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke-width="1.5"/>"#,
                    f.sx(f.x0),
                    f.sy(b),
                    f.sx(f.x1),
                    f.sy(b + m * f.x1)
                )
                .unwrap();
            }
        }
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" stroke="none">{}</text>"#,
            ax1 - 150.0,
            MARGIN + 16.0 * k as f64,
            escape(name)
        )
        .unwrap();
        writeln!(s, "</g>").unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
