//! Static SVG of a drive: hillshaded terrain, rejected candidates, the
//! driven path and the goal.

use std::fmt::Write;

use mlnav_core::sim::TrialTrace;
use mlnav_core::Heightmap;

const PIXELS_PER_CELL: usize = 4;
const SHADE_LEVELS: f64 = 32.0;

/// Shade in [0, 1] for light from the north-west at 45° elevation.
fn hillshade(map: &Heightmap, col: usize, row: usize) -> f64 {
    let (w, h) = (map.width_cells(), map.height_cells());
    let at = |c: usize, r: usize| map.cell(c.min(w - 1), r.min(h - 1));
    let res = map.resolution();
    let dzdx = (at(col + 1, row) - at(col.saturating_sub(1), row)) / (2.0 * res);
    let dzdy = (at(col, row + 1) - at(col, row.saturating_sub(1))) / (2.0 * res);
    let (az, alt) = (315f64.to_radians(), 45f64.to_radians());
    let light = [alt.cos() * az.sin(), alt.cos() * az.cos(), alt.sin()];
    let n = [-dzdx, -dzdy, 1.0];
    let norm = (n[0] * n[0] + n[1] * n[1] + 1.0).sqrt();
    ((n[0] * light[0] + n[1] * light[1] + n[2] * light[2]) / norm).clamp(0.0, 1.0)
}

fn gray(shade: f64) -> u8 {
    let q = (shade * (SHADE_LEVELS - 1.0)).round() / (SHADE_LEVELS - 1.0);
    (30.0 + 210.0 * q).round() as u8
}

fn points(map: &Heightmap, pts: &[[f64; 2]]) -> String {
    let (gx0, gy0) = map.origin();
    let res = map.resolution();
    let rows = map.height_cells() as f64;
    let mut s = String::new();
    for (i, p) in pts.iter().enumerate() {
        let x = (p[0] - gx0) / res + 0.5;
        let y = rows - ((p[1] - gy0) / res + 0.5);
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x:.2},{y:.2}");
    }
    s
}

pub fn render_svg(map: &Heightmap, trace: &TrialTrace) -> String {
    let (w, h) = (map.width_cells(), map.height_cells());
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {w} {h}">"#,
        w * PIXELS_PER_CELL,
        h * PIXELS_PER_CELL
    );
    let _ = writeln!(svg, "<title>drive over {w}x{h} cells at {} m</title>", map.resolution());
    svg.push_str("<g class=\"terrain\" shape-rendering=\"crispEdges\">\n");
    for row in (0..h).rev() {
        let y = h - 1 - row;
        let mut col = 0;
        while col < w {
            let g = gray(hillshade(map, col, row));
            let start = col;
            while col < w && gray(hillshade(map, col, row)) == g {
                col += 1;
            }
            let _ = writeln!(
                svg,
                r##"<rect x="{start}" y="{y}" width="{}" height="1" fill="#{g:02x}{g:02x}{g:02x}"/>"##,
                col - start
            );
        }
    }
    svg.push_str("</g>\n");

    svg.push_str(
        "<g class=\"rejected\" fill=\"none\" stroke=\"#d03ca0\" stroke-width=\"0.6\" stroke-dasharray=\"2 2\" opacity=\"0.4\">\n",
    );
    for cycle in &trace.cycles {
        for path in cycle.rejected.iter().filter(|p| p.len() > 1) {
            let _ = writeln!(svg, r#"<polyline points="{}"/>"#, points(map, path));
        }
    }
    svg.push_str("</g>\n");

    let driven: Vec<[f64; 2]> = trace.cycles.iter().flat_map(|c| c.executed.iter().copied()).collect();
    if driven.len() > 1 {
        let _ = writeln!(
            svg,
            r##"<polyline class="driven" fill="none" stroke="#1f5fd6" stroke-width="2" stroke-linejoin="round" points="{}"/>"##,
            points(map, &driven)
        );
    }
    let res = map.resolution();
    let start = points(map, &[[trace.start.x, trace.start.y]]);
    let (sx, sy) = start.split_once(',').expect("one point");
    let _ = writeln!(svg, r##"<circle class="start" cx="{sx}" cy="{sy}" r="3" fill="#2ca02c"/>"##);
    let goal = points(map, &[trace.goal]);
    let (gx, gy) = goal.split_once(',').expect("one point");
    let _ = writeln!(
        svg,
        r##"<circle class="goal" cx="{gx}" cy="{gy}" r="{:.2}" fill="none" stroke="#e03020" stroke-width="1.5"/>"##,
        trace.goal_tolerance / res
    );
    let _ = writeln!(svg, r##"<circle class="goal-center" cx="{gx}" cy="{gy}" r="1.5" fill="#e03020"/>"##);
    svg.push_str("</svg>\n");
    svg
}
