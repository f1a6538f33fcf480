//! CSV and SVG output for fields.

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::error::{invalid, Result};
use crate::geometry::Grid;
use crate::solver::{FluxField, GridField};

/// First line of every CSV file written by this crate.
pub const SCHEMA_LINE: &str = "# schema=1";

fn index_header(dim: usize, prefix: &str) -> String {
    (0..dim).map(|k| format!("{prefix}{k}")).collect::<Vec<_>>().join(",")
}

/// Node indices and values, one node per line.
pub fn write_grid_field_csv<W: Write>(field: &GridField, mut out: W) -> io::Result<()> {
    let grid = field.grid();
    writeln!(out, "{SCHEMA_LINE}")?;
    writeln!(out, "{},value", index_header(grid.dim(), "i"))?;
    let mut line = String::new();
    for (flat, v) in field.values().iter().enumerate() {
        line.clear();
        for i in grid.multi_index(flat) {
            let _ = write!(line, "{i},");
        }
        let _ = write!(line, "{v:.15e}");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Cell indices, simplex number within the cell, and flux components, one
/// simplex per line.
pub fn write_flux_field_csv<W: Write>(flux: &FluxField, mut out: W) -> io::Result<()> {
    let grid = flux.grid();
    let dim = grid.dim();
    let spc = flux.simplices_per_cell();
    writeln!(out, "{SCHEMA_LINE}")?;
    writeln!(out, "{},simplex,{}", index_header(dim, "c"), index_header(dim, "sigma"))?;
    let cells = Grid::with_spacing(grid.origin().to_vec(), grid.h(), grid.nodes_per_side() - 1)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    let mut line = String::new();
    for k in 0..flux.len() {
        line.clear();
        for i in cells.multi_index(k / spc) {
            let _ = write!(line, "{i},");
        }
        let _ = write!(line, "{}", k % spc);
        for s in flux.vector(k) {
            let _ = write!(line, ",{s:.15e}");
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Largest number of pixels per side in a heatmap; larger grids are averaged
/// down.
const MAX_PIXELS: usize = 256;

/// Piecewise-linear blue-white-red colormap on `[0, 1]`.
fn color(t: f64) -> (u8, u8, u8) {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64, s: f64| (a + (b - a) * s).round() as u8;
    if t < 0.5 {
        let s = 2.0 * t;
        (lerp(49.0, 247.0, s), lerp(54.0, 247.0, s), lerp(149.0, 247.0, s))
    } else {
        let s = 2.0 * t - 1.0;
        (lerp(247.0, 165.0, s), lerp(247.0, 0.0, s), lerp(247.0, 38.0, s))
    }
}

/// Renders a row-major `width x height` array (row 0 at the bottom) as an
/// SVG heatmap.
pub fn heatmap_svg(values: &[f64], width: usize, height: usize, title: &str) -> Result<String> {
    if values.len() != width * height || width == 0 || height == 0 {
        return Err(invalid("heatmap dimensions do not match the data"));
    }
    let bw = width.div_ceil(MAX_PIXELS);
    let bh = height.div_ceil(MAX_PIXELS);
    let pw = width.div_ceil(bw);
    let ph = height.div_ceil(bh);
    let mut pixels = vec![0.0; pw * ph];
    let mut counts = vec![0usize; pw * ph];
    for y in 0..height {
        for x in 0..width {
            let k = (y / bh) * pw + x / bw;
            pixels[k] += values[y * width + x];
            counts[k] += 1;
        }
    }
    for (v, c) in pixels.iter_mut().zip(&counts) {
        *v /= *c as f64;
    }
    let lo = pixels.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = pixels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let scale = (512 / pw.max(ph)).max(1);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" shape-rendering="crispEdges">"#,
        pw * scale,
        ph * scale + 20
    );
    let _ = writeln!(
        svg,
        r#"<text x="2" y="14" font-family="monospace" font-size="12">{} [{lo:.3e}, {hi:.3e}]</text>"#,
        escape(title)
    );
    for py in 0..ph {
        for px in 0..pw {
            let (r, g, b) = color((pixels[py * pw + px] - lo) / span);
            let _ = writeln!(
                svg,
                r##"<rect x="{}" y="{}" width="{scale}" height="{scale}" fill="#{r:02x}{g:02x}{b:02x}"/>"##,
                px * scale,
                20 + (ph - 1 - py) * scale
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Heatmap of a two-dimensional node field.
pub fn grid_field_svg(field: &GridField, title: &str) -> Result<String> {
    let grid = field.grid();
    if grid.dim() != 2 {
        return Err(invalid("heatmaps are only drawn for two-dimensional grids"));
    }
    let m = grid.nodes_per_side();
    heatmap_svg(field.values(), m, m, title)
}

/// Heatmap of the cell-averaged flux magnitude of a two-dimensional field.
pub fn flux_magnitude_svg(flux: &FluxField, title: &str) -> Result<String> {
    let grid = flux.grid();
    if grid.dim() != 2 {
        return Err(invalid("heatmaps are only drawn for two-dimensional grids"));
    }
    let c = grid.nodes_per_side() - 1;
    heatmap_svg(&flux.cell_magnitudes(), c, c, title)
}
