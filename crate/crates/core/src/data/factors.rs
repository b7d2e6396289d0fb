//! Discrete generative factors of the procedural dataset.
//!
//! Every sample is fully described by six factors: shape class, a hue-wheel
//! color bin, a size bin, two position bins, and an orientation bin. Factor
//! combinations enumerate the whole dataset, so each index maps to exactly
//! one labeled image.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Shape classes, drawn as signed-distance fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Square,
    Circle,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Square, ShapeKind::Circle, ShapeKind::Triangle];

    pub fn index(&self) -> usize {
        match self {
            ShapeKind::Square => 0,
            ShapeKind::Circle => 1,
            ShapeKind::Triangle => 2,
        }
    }
}

/// Number of bins per factor, in canonical order.
pub const FACTOR_BINS: [usize; 6] = [3, 8, 6, 8, 8, 8];

/// Canonical factor order used everywhere (CSV columns, probe reports).
pub const FACTOR_NAMES: [&str; 6] = ["shape", "hue", "scale", "pos_x", "pos_y", "orientation"];

/// Total number of factor combinations.
pub const COMBINATIONS: usize = 3 * 8 * 6 * 8 * 8 * 8;

/// One fully specified sample: all six factor bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactorSpec {
    pub shape: ShapeKind,
    pub hue: usize,
    pub scale: usize,
    pub pos_x: usize,
    pub pos_y: usize,
    pub orientation: usize,
}

impl FactorSpec {
    pub fn validate(&self) -> Result<()> {
        let bins = self.bins();
        for (i, (&bin, &count)) in bins.iter().zip(&FACTOR_BINS).enumerate() {
            if bin >= count {
                return Err(CoreError::InvalidInput {
                    context: "factor spec",
                    msg: format!("{} bin {} outside 0..{}", FACTOR_NAMES[i], bin, count),
                });
            }
        }
        Ok(())
    }

    /// Bin values in canonical factor order.
    pub fn bins(&self) -> [usize; 6] {
        [
            self.shape.index(),
            self.hue,
            self.scale,
            self.pos_x,
            self.pos_y,
            self.orientation,
        ]
    }

    /// Mixed-radix dataset index; inverse of [`FactorSpec::from_index`].
    pub fn to_index(&self) -> usize {
        self.bins()
            .iter()
            .zip(&FACTOR_BINS)
            .fold(0, |acc, (&bin, &count)| acc * count + bin)
    }

    /// Decode a dataset index in `0..COMBINATIONS`.
    pub fn from_index(index: usize) -> Result<Self> {
        if index >= COMBINATIONS {
            return Err(CoreError::InvalidInput {
                context: "factor spec",
                msg: format!("index {index} outside 0..{COMBINATIONS}"),
            });
        }
        let mut rest = index;
        let mut bins = [0usize; 6];
        for i in (0..6).rev() {
            bins[i] = rest % FACTOR_BINS[i];
            rest /= FACTOR_BINS[i];
        }
        Ok(Self {
            shape: ShapeKind::ALL[bins[0]],
            hue: bins[1],
            scale: bins[2],
            pos_x: bins[3],
            pos_y: bins[4],
            orientation: bins[5],
        })
    }

    /// Bin of the factor at canonical position `i`.
    pub fn bin(&self, i: usize) -> usize {
        self.bins()[i]
    }
}

/// Geometry of a factor spec on a square canvas, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub center_x: f64,
    pub center_y: f64,
    /// Circumradius of the shape.
    pub radius: f64,
    /// Body/marker rotation in radians.
    pub angle: f64,
}

/// Reference canvas size the bin geometry is designed for.
pub const CANVAS: usize = 64;
/// Pixel stride between adjacent position bins.
pub const POS_STRIDE: f64 = 4.0;
/// Center of position bin 0.
pub const POS_BASE: f64 = 18.0;
/// Radius of scale bin 0.
pub const RADIUS_BASE: f64 = 6.0;
/// Radius increment per scale bin.
pub const RADIUS_STRIDE: f64 = 2.0;

impl Placement {
    /// Pixel geometry of `spec` on a canvas of side `canvas` (the reference
    /// design is 64; other sizes scale proportionally).
    pub fn of(spec: &FactorSpec, canvas: usize) -> Self {
        let s = canvas as f64 / CANVAS as f64;
        Self {
            center_x: s * (POS_BASE + POS_STRIDE * spec.pos_x as f64),
            center_y: s * (POS_BASE + POS_STRIDE * spec.pos_y as f64),
            radius: s * (RADIUS_BASE + RADIUS_STRIDE * spec.scale as f64),
            angle: spec.orientation as f64 * std::f64::consts::TAU / 8.0,
        }
    }
}

/// Shape fill color for a hue bin: evenly spaced hue wheel at fixed
/// saturation and value, converted to RGB in `[0, 1]`.
pub fn hue_color(bin: usize) -> [f64; 3] {
    hsv_to_rgb(bin as f64 * 360.0 / 8.0, 0.9, 0.9)
}

/// Fixed background gray.
pub const BACKGROUND: [f64; 3] = [0.12, 0.12, 0.12];

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = (h / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r, g, b) = match hp as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}
