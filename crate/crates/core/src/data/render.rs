//! Deterministic rasterizer for factor specs.
//!
//! Shapes are drawn from exact signed-distance fields evaluated at pixel
//! centers, composited over a fixed background, and quantized to 8-bit RGB.
//! Because position bins shift the distance field by whole pixels, moving a
//! shape by one bin translates the rendered pixels exactly (in hard-edge
//! mode this holds bit-for-bit). A small background-colored marker dot,
//! offset from the center along the orientation angle, keeps orientation
//! visible even for rotationally symmetric bodies.

use crate::data::factors::{hue_color, FactorSpec, Placement, BACKGROUND};
use crate::error::{CoreError, Result};
use soda_numerics::{Array, Scalar};

/// Edge treatment for rasterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeMode {
    /// One-pixel linear coverage ramp across the shape boundary.
    AntiAliased,
    /// Hard threshold at the boundary; translation-exact.
    Nearest,
}

/// An 8-bit RGB image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8Image {
    pub size: usize,
    /// `size * size * 3` bytes, pixel-major.
    pub data: Vec<u8>,
}

impl Rgb8Image {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            data: vec![0; size * size * 3],
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let base = (row * self.size + col) * 3;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let base = (row * self.size + col) * 3;
        self.data[base..base + 3].copy_from_slice(&rgb);
    }

    /// Channel-major float tensor of shape `(3, size, size)` scaled to `[0, 1]`.
    pub fn to_unit<T: Scalar>(&self) -> Array<T> {
        let s = self.size;
        let mut out = Array::zeros(&[3, s, s]);
        for row in 0..s {
            for col in 0..s {
                let px = self.pixel(row, col);
                for c in 0..3 {
                    *out.at_mut(&[c, row, col]) = T::of(px[c] as f64 / 255.0);
                }
            }
        }
        out
    }

    /// Inverse of [`Rgb8Image::to_unit`]; values are clamped to `[0, 1]`
    /// before quantization.
    pub fn from_unit<T: Scalar>(unit: &Array<T>) -> Result<Self> {
        let shape = unit.shape();
        if shape.len() != 3 || shape[0] != 3 || shape[1] != shape[2] {
            return Err(CoreError::InvalidInput {
                context: "image from unit tensor",
                msg: format!("expected shape (3, S, S), got {shape:?}"),
            });
        }
        let s = shape[1];
        let mut img = Self::new(s);
        for row in 0..s {
            for col in 0..s {
                let mut px = [0u8; 3];
                for c in 0..3 {
                    let v = unit.at(&[c, row, col]).to_f64_exact().clamp(0.0, 1.0);
                    px[c] = (v * 255.0).round() as u8;
                }
                img.set_pixel(row, col, px);
            }
        }
        Ok(img)
    }
}

/// Signed distance from `p` to the shape boundary (negative inside).
fn body_sdf(spec: &FactorSpec, place: &Placement, px: f64, py: f64) -> f64 {
    use crate::data::factors::ShapeKind::*;
    let dx = px - place.center_x;
    let dy = py - place.center_y;
    match spec.shape {
        Circle => (dx * dx + dy * dy).sqrt() - place.radius,
        Square => {
            // Rotate into the box frame, then half-side = circumradius / sqrt(2).
            let (sin, cos) = place.angle.sin_cos();
            let qx = (cos * dx + sin * dy).abs();
            let qy = (-sin * dx + cos * dy).abs();
            let h = place.radius / std::f64::consts::SQRT_2;
            let ex = qx - h;
            let ey = qy - h;
            let outside = (ex.max(0.0).powi(2) + ey.max(0.0).powi(2)).sqrt();
            outside + ex.max(ey).min(0.0)
        }
        Triangle => {
            // Equilateral triangle with circumradius `radius`, one vertex
            // pointing along the orientation angle.
            let mut verts = [[0.0f64; 2]; 3];
            for (k, v) in verts.iter_mut().enumerate() {
                let a = place.angle + k as f64 * std::f64::consts::TAU / 3.0;
                v[0] = place.radius * a.cos();
                v[1] = place.radius * a.sin();
            }
            polygon_sdf(&verts, dx, dy)
        }
    }
}

/// Exact signed distance to a simple polygon (negative inside).
fn polygon_sdf(verts: &[[f64; 2]], px: f64, py: f64) -> f64 {
    let n = verts.len();
    let mut dist_sq = f64::INFINITY;
    let mut sign = 1.0f64;
    let mut j = n - 1;
    for i in 0..n {
        let (vi, vj) = (verts[i], verts[j]);
        let ex = vj[0] - vi[0];
        let ey = vj[1] - vi[1];
        let wx = px - vi[0];
        let wy = py - vi[1];
        let t = ((wx * ex + wy * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
        let bx = wx - ex * t;
        let by = wy - ey * t;
        dist_sq = dist_sq.min(bx * bx + by * by);
        // Even-odd crossing rule for the interior sign.
        let cond1 = py >= vi[1];
        let cond2 = py < vj[1];
        let cross = ex * wy - ey * wx;
        if (cond1 && cond2 && cross > 0.0) || (!cond1 && !cond2 && cross < 0.0) {
            sign = -sign;
        }
        j = i;
    }
    sign * dist_sq.sqrt()
}

/// Marker dot center offset, as a fraction of the circumradius. Chosen so
/// the dot stays strictly inside every body (the triangle inradius is half
/// the circumradius).
const MARKER_OFFSET: f64 = 0.28;
/// Marker dot radius as a fraction of the circumradius.
const MARKER_RADIUS: f64 = 0.18;

fn marker_sdf(place: &Placement, px: f64, py: f64) -> f64 {
    let (sin, cos) = place.angle.sin_cos();
    let cx = place.center_x + MARKER_OFFSET * place.radius * cos;
    let cy = place.center_y + MARKER_OFFSET * place.radius * sin;
    let dx = px - cx;
    let dy = py - cy;
    (dx * dx + dy * dy).sqrt() - MARKER_RADIUS * place.radius
}

fn coverage(sdf: f64, mode: EdgeMode) -> f64 {
    match mode {
        EdgeMode::AntiAliased => (0.5 - sdf).clamp(0.0, 1.0),
        EdgeMode::Nearest => {
            if sdf <= 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Rasterize `spec` on a `canvas x canvas` RGB image.
pub fn render(spec: &FactorSpec, canvas: usize, mode: EdgeMode) -> Result<Rgb8Image> {
    spec.validate()?;
    if canvas < 16 {
        return Err(CoreError::InvalidInput {
            context: "render",
            msg: format!("canvas {canvas} too small"),
        });
    }
    let place = Placement::of(spec, canvas);
    let fill = hue_color(spec.hue);
    let mut img = Rgb8Image::new(canvas);
    for row in 0..canvas {
        for col in 0..canvas {
            // Pixel centers; positions shift fields by whole pixels.
            let px = col as f64 + 0.5;
            let py = row as f64 + 0.5;
            let body = coverage(body_sdf(spec, &place, px, py), mode);
            let dot = coverage(marker_sdf(&place, px, py), mode);
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                // Fill over background, then the background-colored dot on top.
                let mut v = BACKGROUND[c] * (1.0 - body) + fill[c] * body;
                v = v * (1.0 - dot) + BACKGROUND[c] * dot;
                rgb[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
            img.set_pixel(row, col, rgb);
        }
    }
    Ok(img)
}
