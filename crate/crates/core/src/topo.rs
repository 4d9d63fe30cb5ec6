//! Topology and visualization diagnostics.
//!
//! The flat-torus degree of the encoder map is the determinant of the 2x2
//! integer matrix of winding numbers accumulated along the dataset's shift
//! grid; |degree| = 1 certifies a surjective latent map. Sphere coverage
//! counts occupied equal-area cells. Exports are plain CSV and binary PPM,
//! deterministic byte for byte.

use std::f64::consts::{PI, TAU};


use crate::error::{Error, Result};
use crate::la::wrap_angle;
use crate::manifold::{
    embedded_torus_point, flat_torus_angles, flat_torus_point, Manifold, ManifoldPoint,
};
use crate::model::DvaeModel;

/// Per-step wrapped differences above this leave the winding unresolved
/// (the grid is too coarse to track the phase).
const STEP_GUARD: f64 = PI / 2.0;

/// Per-loop windings deviating from their rounded mean by more than this
/// leave the matrix unresolved.
const LOOP_GUARD: f64 = 0.25;

/// Latent angles of every record of a shift grid, plus diffusion times.
#[derive(Debug, Clone)]
pub struct LatentGrid {
    pub grid: usize,
    /// (u, v) latent angles, row-major by (i, j): index = grid * i + j.
    pub angles: Vec<(f64, f64)>,
    pub times: Vec<f64>,
}

impl LatentGrid {
    pub fn new(grid: usize, angles: Vec<(f64, f64)>, times: Vec<f64>) -> Result<Self> {
        if angles.len() != grid * grid {
            return Err(Error::ShapeMismatch(format!(
                "{} records for a {grid}x{grid} grid",
                angles.len()
            )));
        }
        Ok(LatentGrid {
            grid,
            angles,
            times,
        })
    }

    fn at(&self, i: usize, j: usize) -> (f64, f64) {
        self.angles[self.grid * (i % self.grid) + (j % self.grid)]
    }
}

/// The winding-number matrix of a latent grid and its determinant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindingMatrix {
    /// [[a, b], [c, d]]: windings of u (top) and v (bottom) along
    /// horizontal (left) and vertical (right) loops.
    pub entries: [[i64; 2]; 2],
    pub degree: i64,
    /// False when any loop's winding strays from the rounded average or a
    /// step exceeds the phase-unwrapping guard; the integers are then not
    /// trustworthy.
    pub resolved: bool,
}

/// Accumulate the winding of one cyclic loop of angles; returns the winding
/// in turns and whether every step stayed under the guard.
fn loop_winding(values: impl Iterator<Item = f64> + Clone) -> (f64, bool) {
    let first = values.clone().next().expect("loops are non-empty");
    let mut prev = first;
    let mut total = 0.0;
    let mut ok = true;
    for v in values.skip(1).chain(std::iter::once(first)) {
        let step = wrap_angle(v - prev);
        if step.abs() > STEP_GUARD {
            ok = false;
        }
        total += step;
        prev = v;
    }
    (total / TAU, ok)
}

/// Winding matrix of the encoder map on the flat torus: per-loop windings
/// of each latent angle along each grid direction, averaged and rounded.
pub fn torus_degree(grid: &LatentGrid) -> WindingMatrix {
    let g = grid.grid;
    let mut entries = [[0i64; 2]; 2];
    let mut resolved = true;
    // component 0 = u, 1 = v; direction 0 = horizontal (vary i), 1 = vertical
    for comp in 0..2 {
        for dir in 0..2 {
            let mut windings = Vec::with_capacity(g);
            for fixed in 0..g {
                let values = (0..g).map(|step| {
                    let (i, j) = if dir == 0 { (step, fixed) } else { (fixed, step) };
                    let (u, v) = grid.at(i, j);
                    if comp == 0 {
                        u
                    } else {
                        v
                    }
                });
                let (w, ok) = loop_winding(values);
                resolved &= ok;
                windings.push(w);
            }
            let mean = windings.iter().sum::<f64>() / g as f64;
            let rounded = mean.round();
            for w in &windings {
                if (w - rounded).abs() > LOOP_GUARD {
                    resolved = false;
                }
            }
            entries[comp][dir] = rounded as i64;
        }
    }
    let degree = entries[0][0] * entries[1][1] - entries[0][1] * entries[1][0];
    WindingMatrix {
        entries,
        degree,
        resolved,
    }
}

/// Fraction of equal-area sphere cells containing at least one point.
///
/// Cells are latitude bands of equal height in z (equal area by the
/// cylinder projection), each split uniformly in longitude; `cells` is
/// factored as rings x columns with rings closest to sqrt(cells/2), so the
/// partition has exactly `cells` members whenever that factorization.
/// exists.
pub fn sphere_coverage(points: &[ManifoldPoint], cells: usize) -> Result<f64> {
    if cells == 0 {
        return Err(Error::InvalidConfig("need at least one cell".into()));
    }
    if points.is_empty() {
        return Ok(0.0);
    }
    let sphere = Manifold::sphere(2).unwrap();
    let rings = best_ring_split(cells);
    let cols = cells / rings;
    let mut hit = vec![false; rings * cols];
    for p in points {
        if !sphere.contains(p.coords(), 1e-6) {
            return Err(Error::DomainError(format!(
                "coverage point {:?} is off the unit sphere",
                p.coords()
            )));
        }
        let c = p.coords();
        let band = (((1.0 - c[2]) / 2.0 * rings as f64) as usize).min(rings - 1);
        let lon = c[1].atan2(c[0]);
        let col = (((lon + PI) / TAU * cols as f64) as usize).min(cols - 1);
        hit[band * cols + col] = true;
    }
    Ok(hit.iter().filter(|h| **h).count() as f64 / (rings * cols) as f64)
}

/// Largest divisor of `cells` not exceeding sqrt(cells/2), or 1.
fn best_ring_split(cells: usize) -> usize {
    let target = ((cells as f64) / 2.0).sqrt();
    let mut best = 1;
    for r in 1..=cells {
        if cells % r == 0 && r as f64 <= target.max(1.0) {
            best = r;
        }
    }
    best
}

/// Palette constants for the latent export: hue tracks the horizontal
/// shift, brightness ramps with the vertical shift inside stripes, and an
/// 8x8 checkerboard modulates saturation. Periodic in both shifts.
const PALETTE: &str = "hue=i/G*360 sat=0.95|0.55@checker8 val=0.45+0.55*tri(j/G)";

fn tri(x: f64) -> f64 {
    // triangle wave with period 1 on [0,1] -> [0,1]
    let f = x - x.floor();
    1.0 - (2.0 * f - 1.0).abs()
}

/// HSV -> RGB, h in degrees.
fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

/// Color for shift (i, j) on a G-grid.
pub fn shift_color(i: u32, j: u32, grid: u32) -> [u8; 3] {
    let iw = i % grid;
    let jw = j % grid;
    let hue = iw as f64 / grid as f64 * 360.0;
    let checker = (iw / 8 + jw / 8) % 2 == 0;
    let sat = if checker { 0.95 } else { 0.55 };
    let val = 0.45 + 0.55 * tri(jw as f64 / grid as f64);
    hsv_to_rgb(hue, sat, val)
}

/// One latent-export row per datapoint: index, shift pair, ambient latent
/// coordinates, diffusion time and the shift color. The palette constants
/// are recorded in the header.
pub fn export_latents(
    model: &DvaeModel,
    data: &crate::data::TranslationDataset,
) -> Result<String> {
    let n_amb = model.manifold.ambient_dim();
    let mut out = String::new();
    out.push_str(&format!("# palette {PALETTE}\n"));
    out.push_str("index,shift_i,shift_j");
    for k in 0..n_amb {
        out.push_str(&format!(",z{k}"));
    }
    out.push_str(",t,color\n");
    let grid = data.grid as u32;
    let stride = 64 / data.grid.max(1) as u32;
    for (idx, (i, j)) in data.shifts.iter().enumerate() {
        let params = model.encode(data.pixels.row(idx))?;
        let c = params.center.coords();
        let rgb = shift_color(i / stride.max(1), j / stride.max(1), grid);
        out.push_str(&format!("{idx},{i},{j}"));
        for v in c {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(
            ",{},#{:02x}{:02x}{:02x}\n",
            params.time, rgb[0], rgb[1], rgb[2]
        ));
    }
    Ok(out)
}

/// Latent grid of a trained flat-torus model over a translation dataset.
pub fn encode_latent_grid(
    model: &DvaeModel,
    data: &crate::data::TranslationDataset,
) -> Result<LatentGrid> {
    if !matches!(model.manifold, Manifold::FlatTorus2) {
        return Err(Error::UnsupportedManifold(format!(
            "latent grids are defined for the flat torus, not {}",
            model.manifold.name()
        )));
    }
    let mut angles = Vec::with_capacity(data.len());
    let mut times = Vec::with_capacity(data.len());
    for idx in 0..data.len() {
        let params = model.encode(data.pixels.row(idx))?;
        angles.push(flat_torus_angles(params.center.coords()));
        times.push(params.time);
    }
    LatentGrid::new(data.grid, angles, times)
}

/// Decode a uniform latent grid and tile the decoded pictures into one
/// grayscale image (binary PPM). Supports the 2-d manifolds; for d >= 3
/// latents a 2-d equatorial slice is decoded instead.
pub fn reconstruction_grid(model: &DvaeModel, resolution: usize) -> Result<Vec<u8>> {
    if resolution == 0 {
        return Err(Error::InvalidConfig("grid resolution must be positive".into()));
    }
    let d_data = model.data_dim();
    let side = (d_data as f64).sqrt().round() as usize;
    if side * side != d_data {
        return Err(Error::ShapeMismatch(format!(
            "decoder output {d_data} is not a square picture"
        )));
    }
    let g = resolution;
    let mut tiles: Vec<Vec<f64>> = Vec::with_capacity(g * g);
    for a in 0..g {
        for b in 0..g {
            // latitude-like coordinate first, longitude second
            let fa = (a as f64 + 0.5) / g as f64;
            let fb = (b as f64 + 0.5) / g as f64;
            let point = latent_grid_point(&model.manifold, fa, fb)?;
            tiles.push(model.decode(&point)?);
        }
    }
    let (w, h) = (g * side, g * side);
    let mut ppm = format!("P6\n{w} {h}\n255\n").into_bytes();
    for row in 0..h {
        let (tile_row, pix_row) = (row / side, row % side);
        for col in 0..w {
            let (tile_col, pix_col) = (col / side, col % side);
            let v = tiles[tile_row * g + tile_col][pix_row * side + pix_col];
            let byte = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            ppm.extend([byte, byte, byte]);
        }
    }
    Ok(ppm)
}

/// Map unit-square coordinates to a latent point for the reconstruction
/// grid: angles for tori, equirectangular (colatitude, longitude) for the
/// sphere, an equatorial slice for d >= 3, a [-2, 2] square for the
/// Euclidean baseline.
fn latent_grid_point(m: &Manifold, fa: f64, fb: f64) -> Result<ManifoldPoint> {
    let coords = match m {
        Manifold::FlatTorus2 => flat_torus_point(-PI + TAU * fa, -PI + TAU * fb),
        Manifold::EmbeddedTorus { major, minor } => {
            embedded_torus_point(*major, *minor, -PI + TAU * fa, -PI + TAU * fb)
        }
        Manifold::Sphere { dim: 2 } | Manifold::ProjectiveSphere { dim: 2 } => {
            let (theta, phi) = (PI * fa, -PI + TAU * fb);
            vec![
                theta.sin() * phi.cos(),
                theta.sin() * phi.sin(),
                theta.cos(),
            ]
        }
        Manifold::Sphere { dim: 1 } => {
            let theta = -PI + TAU * fa;
            vec![theta.cos(), theta.sin()]
        }
        // 2-d equatorial slice of the higher-dimensional latents
        Manifold::Sphere { dim: 3 } | Manifold::ProjectiveSphere { dim: 3 } => {
            let (theta, phi) = (PI * fa, -PI + TAU * fb);
            vec![
                theta.sin() * phi.cos(),
                theta.sin() * phi.sin(),
                theta.cos(),
                0.0,
            ]
        }
        Manifold::Euclidean { dim } => {
            let mut v = vec![0.0; *dim];
            v[0] = -2.0 + 4.0 * fa;
            if *dim > 1 {
                v[1] = -2.0 + 4.0 * fb;
            }
            v
        }
        Manifold::Sphere { .. } | Manifold::ProjectiveSphere { .. } => {
            return Err(Error::UnsupportedManifold(m.name()))
        }
    };
    ManifoldPoint::new(m, coords)
}
