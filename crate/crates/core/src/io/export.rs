//! Mesh (OBJ) and star-plot (SVG) exporters.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::container::{check_topology, Triangle};
use crate::model::Shape;

/// Wavefront OBJ text: `v` lines with 17 significant digits, 1-based faces.
pub fn mesh_to_obj(shape: &Shape, topology: &[Triangle]) -> Result<String> {
    if shape.d() != 3 {
        return Err(Error::Unsupported(format!("OBJ export needs 3-D points, got d={}", shape.d())));
    }
    check_topology(topology, shape.n())?;
    let mut out = String::with_capacity(shape.n() * 72 + topology.len() * 24);
    for p in shape.points() {
        writeln!(out, "v {:.16e} {:.16e} {:.16e}", p[0], p[1], p[2]).expect("string write");
    }
    for t in topology {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("string write");
    }
    Ok(out)
}

pub fn export_mesh(shape: &Shape, topology: &[Triangle], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = mesh_to_obj(shape, topology)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Angular range `[lo_deg, hi_deg]` (absolute degrees) for one star point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularBound {
    pub point: usize,
    pub lo_deg: f64,
    pub hi_deg: f64,
}

pub const HISTOGRAM_BINS: usize = 36;
const MAX_OUTLINES: usize = 100;

/// Counts of the angle of `point` over `bins` equal sectors of `[0°, 360°)`.
pub fn angle_histogram(shapes: &[Shape], point: usize, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for s in shapes {
        let p = s.point(point);
        let deg = p[1].atan2(p[0]).to_degrees().rem_euclid(360.0);
        let bin = ((deg / 360.0 * bins as f64) as usize).min(bins - 1);
        counts[bin] += 1;
    }
    counts
}

fn wedge(cx: f64, cy: f64, radius: f64, lo_deg: f64, hi_deg: f64) -> String {
    let (lo, hi) = (lo_deg.to_radians(), hi_deg.to_radians());
    let large = if (hi_deg - lo_deg).rem_euclid(360.0) > 180.0 { 1 } else { 0 };
    format!(
        "M {cx:.3} {cy:.3} L {:.3} {:.3} A {radius:.3} {radius:.3} 0 {large} 0 {:.3} {:.3} Z",
        cx + radius * lo.cos(),
        cy - radius * lo.sin(),
        cx + radius * hi.cos(),
        cy - radius * hi.sin()
    )
}

/// Self-contained SVG: a subsample of star outlines with shaded angular
/// bounds on the left, and a polar histogram of point-0 angles on the right.
pub fn star_plot_svg(shapes: &[Shape], bounds: &[AngularBound]) -> Result<String> {
    if let Some((i, s)) = shapes.iter().enumerate().find(|(_, s)| s.d() != 2 || s.n() != 5) {
        return Err(Error::Input(format!(
            "star plots need 2-D shapes with 5 points; shape {i} is {}×{}",
            s.d(),
            s.n()
        )));
    }
    if let Some(b) = bounds.iter().find(|b| b.point >= 5) {
        return Err(Error::Input(format!("bound refers to point {} of 5", b.point)));
    }
    let (w, h, half) = (800.0, 400.0, 170.0);
    let (lx, rx, cy) = (200.0, 600.0, 200.0);
    let max_r = shapes
        .iter()
        .flat_map(|s| s.points().map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt()))
        .fold(0.0f64, f64::max);
    let scale = if max_r > 0.0 { half / max_r } else { half };

    let mut svg = String::new();
    writeln!(svg, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">").expect("string write");
    writeln!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>").expect("string write");
    writeln!(svg, "<g id=\"bounds\" fill=\"red\" fill-opacity=\"0.15\" stroke=\"red\" stroke-width=\"1\">").expect("string write");
    for b in bounds {
        for cx in [lx, rx] {
            writeln!(svg, "<path d=\"{}\"/>", wedge(cx, cy, half * 1.05, b.lo_deg, b.hi_deg)).expect("string write");
        }
    }
    writeln!(svg, "</g>").expect("string write");

    writeln!(svg, "<g id=\"stars\" fill=\"none\" stroke=\"black\" stroke-opacity=\"0.3\" stroke-width=\"0.8\">").expect("string write");
    let stride = shapes.len().div_ceil(MAX_OUTLINES).max(1);
    for s in shapes.iter().step_by(stride) {
        let pts: Vec<String> = s
            .points()
            .map(|p| format!("{:.3},{:.3}", lx + scale * p[0], cy - scale * p[1]))
            .collect();
        writeln!(svg, "<polygon points=\"{}\"/>", pts.join(" ")).expect("string write");
    }
    writeln!(svg, "</g>").expect("string write");

    let counts = angle_histogram(shapes, 0, HISTOGRAM_BINS);
    let peak = counts.iter().copied().max().unwrap_or(0);
    writeln!(svg, "<g id=\"histogram\" fill=\"steelblue\" stroke=\"none\">").expect("string write");
    writeln!(svg, "<circle cx=\"{rx}\" cy=\"{cy}\" r=\"{half}\" fill=\"none\" stroke=\"gray\" stroke-width=\"0.5\"/>").expect("string write");
    let width = 360.0 / HISTOGRAM_BINS as f64;
    for (k, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let radius = half * c as f64 / peak as f64;
        let lo = k as f64 * width;
        writeln!(svg, "<path data-count=\"{c}\" d=\"{}\"/>", wedge(rx, cy, radius, lo, lo + width)).expect("string write");
    }
    writeln!(svg, "</g>").expect("string write");
    writeln!(svg, "</svg>").expect("string write");
    Ok(svg)
}

pub fn export_star_plot(shapes: &[Shape], bounds: &[AngularBound], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let svg = star_plot_svg(shapes, bounds)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
