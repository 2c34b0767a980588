//! Deterministic SVG rendering of vector maps.
//!
//! The output is assembled by hand with fixed two-decimal coordinate
//! formatting and a fixed element order (frame, instances in map order,
//! legend), so the same map always yields byte-identical SVG — renders can be
//! diffed and hashed in tests. The drawing has no external dependencies:
//! plain shapes, web-safe named fonts, no CSS classes.
//!
//! The vertical axis is flipped (maps are y-up, SVG is y-down) and the plot
//! aspect follows the BEV extent, so a map covering ±15 m by ±30 m renders
//! twice as tall as wide.

use crate::geometry::{Category, Point2, VectorMap};
use crate::scalar::Scalar;

const MARGIN: f64 = 20.0;
const PLOT_WIDTH: f64 = 400.0;
const LEGEND_ROW: f64 = 18.0;
const POINT_RADIUS: f64 = 2.5;

/// Stroke color of a category.
pub fn category_color(category: Category) -> &'static str {
    match category {
        Category::Divider => "#e09b2d",
        Category::PedCrossing => "#3f6fd1",
        Category::Boundary => "#c94034",
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Renders a map as a standalone SVG document.
pub fn render_svg<T: Scalar>(map: &VectorMap<T>) -> String {
    let extent = map.bev_extent();
    let aspect = (extent.y_half_m / extent.x_half_m).to_f64().unwrap_or(1.0);
    let plot_h = PLOT_WIDTH * aspect;
    let width = 2.0 * MARGIN + PLOT_WIDTH;
    let height = 2.0 * MARGIN + plot_h + LEGEND_ROW * (Category::ALL.len() as f64 + 0.5);

    let px = |p: Point2<T>| -> (f64, f64) {
        let x = p.x.to_f64().unwrap_or(0.0);
        let y = p.y.to_f64().unwrap_or(0.0);
        (MARGIN + x * PLOT_WIDTH, MARGIN + (1.0 - y) * plot_h)
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
         viewBox=\"0 0 {} {}\">\n",
        fmt(width),
        fmt(height),
        fmt(width),
        fmt(height)
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>\n",
        fmt(width),
        fmt(height)
    ));
    // Frame of the BEV extent.
    svg.push_str(&format!(
        "  <rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" \
         stroke=\"#999999\" stroke-width=\"1\"/>\n",
        fmt(MARGIN),
        fmt(MARGIN),
        fmt(PLOT_WIDTH),
        fmt(plot_h)
    ));

    for inst in map.instances() {
        let color = category_color(inst.category);
        let mut d = String::new();
        for (k, &p) in inst.polyline.points().iter().enumerate() {
            let (x, y) = px(p);
            if k == 0 {
                d.push_str(&format!("M {} {}", fmt(x), fmt(y)));
            } else {
                d.push_str(&format!(" L {} {}", fmt(x), fmt(y)));
            }
        }
        if inst.polyline.closed() {
            d.push_str(" Z");
        }
        svg.push_str(&format!(
            "  <path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n"
        ));
        for &p in inst.polyline.points() {
            let (x, y) = px(p);
            svg.push_str(&format!(
                "  <circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{color}\"/>\n",
                fmt(x),
                fmt(y),
                fmt(POINT_RADIUS)
            ));
        }
    }

    // Legend below the plot, one row per category.
    let legend_top = MARGIN + plot_h + LEGEND_ROW;
    for (row, &cat) in Category::ALL.iter().enumerate() {
        let y = legend_top + LEGEND_ROW * row as f64;
        svg.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            fmt(MARGIN),
            fmt(y),
            fmt(MARGIN + 24.0),
            fmt(y),
            category_color(cat)
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" \
             fill=\"#333333\">{}</text>\n",
            fmt(MARGIN + 32.0),
            fmt(y + 4.0),
            cat.name()
        ));
    }

    svg.push_str("</svg>\n");
    svg
}
