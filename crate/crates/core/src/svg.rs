//! Minimal SVG writers for scatter/boundary plots and correlation heatmaps.

use std::fmt::Write as _;

const SIZE: f64 = 360.0;
const PAD: f64 = 30.0;
const CLASS_COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub class: usize,
    pub hollow: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScatterPlot {
    pub title: String,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub points: Vec<Point>,
    /// Linear boundary through the origin, `w . x = 0`.
    pub boundary: Option<[f64; 2]>,
}

impl ScatterPlot {
    pub fn new(title: &str, x_range: [f64; 2], y_range: [f64; 2]) -> Self {
        Self {
            title: title.to_string(),
            x_range,
            y_range,
            points: Vec::new(),
            boundary: None,
        }
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let [x0, x1] = self.x_range;
        let [y0, y1] = self.y_range;
        (
            PAD + (x - x0) / (x1 - x0) * SIZE,
            PAD + (y1 - y) / (y1 - y0) * SIZE,
        )
    }

    pub fn render(&self) -> String {
        let total = SIZE + 2.0 * PAD;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
        );
        let _ = writeln!(s, r##"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="#444"/>"##);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="18" font-size="13" text-anchor="middle" font-family="sans-serif">{}</text>"#,
            total / 2.0,
            escape(&self.title)
        );
        let (ox, oy) = self.px(0.0, 0.0);
        let _ = writeln!(
            s,
            r##"<line x1="{PAD}" y1="{oy:.2}" x2="{:.2}" y2="{oy:.2}" stroke="#bbb"/><line x1="{ox:.2}" y1="{PAD}" x2="{ox:.2}" y2="{:.2}" stroke="#bbb"/>"##,
            PAD + SIZE,
            PAD + SIZE
        );
        for p in &self.points {
            let (cx, cy) = self.px(p.x, p.y);
            let c = CLASS_COLORS[p.class % CLASS_COLORS.len()];
            if p.hollow {
                let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2.2" fill="none" stroke="{c}"/>"#);
            } else {
                let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2.2" fill="{c}"/>"#);
            }
        }
        if let Some([a, b]) = self.boundary {
            // Direction orthogonal to (a, b), clipped generously.
            let len = 10.0 * (self.x_range[1] - self.x_range[0]).abs().max((self.y_range[1] - self.y_range[0]).abs());
            let n = (a * a + b * b).sqrt().max(1e-300);
            let (dx, dy) = (-b / n * len, a / n * len);
            let (x1, y1) = self.px(dx, dy);
            let (x2, y2) = self.px(-dx, -dy);
            let _ = writeln!(s, r#"<clipPath id="plot"><rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}"/></clipPath>"#);
            let _ = writeln!(
                s,
                r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="black" stroke-width="1.5" clip-path="url(#plot)"/>"#
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Square heatmap of values in `[-1, 1]`, blue for negative, red for positive.
pub fn heatmap(title: &str, n: usize, values: &[f64]) -> String {
    let cell = (SIZE / n.max(1) as f64).max(1.0);
    let side = cell * n as f64;
    let total = side + 2.0 * PAD;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" font-size="13" text-anchor="middle" font-family="sans-serif">{}</text>"#,
        total / 2.0,
        escape(title)
    );
    for i in 0..n {
        for j in 0..n {
            let v = values[i * n + j].clamp(-1.0, 1.0);
            let t = (255.0 * (1.0 - v.abs())).round() as u8;
            let color = if v >= 0.0 { format!("rgb(255,{t},{t})") } else { format!("rgb({t},{t},255)") };
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{color}"/>"#,
                PAD + j as f64 * cell,
                PAD + i as f64 * cell
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scatter_contains_points_and_boundary() {
        let mut p = ScatterPlot::new("t<1>", [-1.0, 1.0], [-1.0, 1.0]);
        p.points.push(Point { x: 0.5, y: 0.5, class: 1, hollow: false });
        p.boundary = Some([1.0, 1.0]);
        let svg = p.render();
        assert!(svg.contains("<circle") && svg.contains("clip-path") && svg.contains("t&lt;1&gt;"));
    }

    #[test]
    fn heatmap_has_n_squared_cells() {
        let svg = heatmap("c", 3, &[1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 1.0]);
        assert_eq!(svg.matches("<rect").count(), 9);
        assert!(svg.contains("rgb(255,0,0)") && svg.contains("rgb(0,0,255)"));
    }
}
