//! Minimal SVG heat-map rendering for violation maps: blue where the
//! constraint holds, red where it fails, white where the plotted value is
//! within 1e-3 (normalized) of zero.

use std::io::Write;
use std::path::Path;

use crate::constraints::ViolationMap;
use crate::dataset::Normalization;
use crate::error::{Error, Result};

/// Which layer of the map to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapLayer {
    MeanDerivative,
    Confidence95,
}

const NEAR_ZERO_BAND: f64 = 1e-3;
const CELL: f64 = 26.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_BOTTOM: f64 = 46.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_RIGHT: f64 = 14.0;

pub fn render_violation_map_svg(
    map: &ViolationMap,
    layer: MapLayer,
    norm: &Normalization,
) -> String {
    let ns = map.eps_s_axis.len();
    let nv = map.eps_v_axis.len();
    let width = MARGIN_LEFT + CELL * ns as f64 + MARGIN_RIGHT;
    let height = MARGIN_TOP + CELL * nv as f64 + MARGIN_BOTTOM;
    let title = match layer {
        MapLayer::MeanDerivative => "mean pressure-derivative sign",
        MapLayer::Confidence95 => "95% confidence constraint satisfaction",
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">{title}</text>\n",
        MARGIN_LEFT
    ));
    for (iv, _) in map.eps_v_axis.iter().enumerate() {
        for (is, _) in map.eps_s_axis.iter().enumerate() {
            let value = match layer {
                MapLayer::MeanDerivative => map.mean_value[iv][is],
                MapLayer::Confidence95 => map.conf_value[iv][is],
            };
            let color = if value.abs() < NEAR_ZERO_BAND {
                "#ffffff"
            } else if value >= 0.0 {
                "#4575b4"
            } else {
                "#d73027"
            };
            // y axis points up: largest eps_v on top
            let x = MARGIN_LEFT + CELL * is as f64;
            let y = MARGIN_TOP + CELL * (nv - 1 - iv) as f64;
            svg.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{CELL:.1}\" height=\"{CELL:.1}\" \
                 fill=\"{color}\" stroke=\"#cccccc\" stroke-width=\"0.5\"/>\n"
            ));
        }
    }
    // axis labels in raw units at the corners
    let lo = norm.denormalize_x([map.eps_v_axis[0], map.eps_s_axis[0], 0.0]);
    let hi = norm.denormalize_x([map.eps_v_axis[nv - 1], map.eps_s_axis[ns - 1], 0.0]);
    let y_axis = MARGIN_TOP + CELL * nv as f64;
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">eps_s: {:.4} .. {:.4}</text>\n",
        MARGIN_LEFT,
        y_axis + 18.0,
        lo[1],
        hi[1]
    ));
    svg.push_str(&format!(
        "<text x=\"4\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
         transform=\"rotate(-90 14 {:.1})\">eps_v: {:.4} .. {:.4}</text>\n",
        MARGIN_TOP + CELL * nv as f64 / 2.0,
        MARGIN_TOP + CELL * nv as f64 / 2.0,
        lo[0],
        hi[0]
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#555555\">{}</text>\n",
        MARGIN_LEFT,
        y_axis + 34.0,
        map.p_policy
    ));
    svg.push_str("</svg>\n");
    svg
}

pub fn write_violation_map_svg(
    map: &ViolationMap,
    layer: MapLayer,
    norm: &Normalization,
    path: &Path,
) -> Result<()> {
    let svg = render_violation_map_svg(map, layer, norm);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(svg.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_contains_grid_and_colors() {
        let map = ViolationMap {
            eps_s_axis: vec![0.0, 1.0],
            eps_v_axis: vec![0.0, 1.0],
            mean_ok: vec![vec![true, false], vec![true, true]],
            conf95_ok: vec![vec![false, false], vec![true, false]],
            mean_value: vec![vec![0.5, -0.4], vec![0.3, 1e-5]],
            conf_value: vec![vec![-0.2, -0.9], vec![0.2, -0.1]],
            p_policy: "worst case over 2 pressures".to_string(),
        };
        let norm = Normalization::identity();
        let svg = render_violation_map_svg(&map, MapLayer::MeanDerivative, &norm);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<rect").count(), 4);
        assert!(svg.contains("#4575b4"));
        assert!(svg.contains("#d73027"));
        assert!(svg.contains("#ffffff")); // near-zero band
        let svg2 = render_violation_map_svg(&map, MapLayer::Confidence95, &norm);
        assert_ne!(svg, svg2);
    }
}
