//! Deterministic output writers: PNG image grids, CSV tables, JSON
//! documents, and a minimal line-plot rasterizer.
//!
//! Every writer here is a pure function of its arguments; no timestamps,
//! hostnames, or float formatting that varies between runs, so re-running a
//! command with the same inputs rewrites every artifact byte-for-byte.

use std::io::Write;
use std::path::Path;

use soda_numerics::Array;

use crate::error::{CliError, Result};

/// Map a `(3, h, w)` image from `[-1, 1]` to 8-bit RGB rows.
pub fn to_rgb8(image: &Array<f32>) -> Result<(usize, usize, Vec<u8>)> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(CliError::Runtime(format!(
            "expected a (3, h, w) image, got shape {shape:?}"
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    let data = image.data();
    let mut out = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = data[(c * h + y) * w + x] as f64;
                let byte = (255.0 * (v + 1.0) / 2.0).round().clamp(0.0, 255.0) as u8;
                out[(y * w + x) * 3 + c] = byte;
            }
        }
    }
    Ok((h, w, out))
}

fn save_rgb(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    let buffer = image::RgbImage::from_raw(width as u32, height as u32, pixels)
        .ok_or_else(|| CliError::Runtime("pixel buffer does not match dimensions".into()))?;
    buffer
        .save(path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Gap in pixels between grid cells (and around the border).
const GRID_GAP: usize = 2;
const GRID_BG: u8 = 255;

/// Tile images left-to-right, top-to-bottom into a grid PNG with `cols`
/// columns.  All images must share one shape.
pub fn save_image_grid(path: &Path, images: &[Array<f32>], cols: usize) -> Result<()> {
    if images.is_empty() || cols == 0 {
        return Err(CliError::Runtime("image grid needs images and at least one column".into()));
    }
    let mut tiles = Vec::with_capacity(images.len());
    let (h, w, first) = to_rgb8(&images[0])?;
    tiles.push(first);
    for img in &images[1..] {
        let (hh, ww, tile) = to_rgb8(img)?;
        if (hh, ww) != (h, w) {
            return Err(CliError::Runtime(format!(
                "grid tiles disagree in size: {h}x{w} vs {hh}x{ww}"
            )));
        }
        tiles.push(tile);
    }
    let rows = tiles.len().div_ceil(cols);
    let width = cols * w + (cols + 1) * GRID_GAP;
    let height = rows * h + (rows + 1) * GRID_GAP;
    let mut canvas = vec![GRID_BG; width * height * 3];
    for (idx, tile) in tiles.iter().enumerate() {
        let (row, col) = (idx / cols, idx % cols);
        let y0 = GRID_GAP + row * (h + GRID_GAP);
        let x0 = GRID_GAP + col * (w + GRID_GAP);
        for y in 0..h {
            let src = y * w * 3;
            let dst = ((y0 + y) * width + x0) * 3;
            canvas[dst..dst + w * 3].copy_from_slice(&tile[src..src + w * 3]);
        }
    }
    save_rgb(path, width, height, canvas)
}

/// Write a CSV file: a header row and stringified records.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e: std::io::Error| CliError::Runtime(format!("write {}: {e}", path.display()));
    writeln!(w, "{header}").map_err(io)?;
    for row in rows {
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Per-step training record for the loss CSV and plot.
pub fn write_loss_csv(path: &Path, rows: &[(u64, f64, f64)]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|(step, loss, lr)| vec![step.to_string(), loss.to_string(), lr.to_string()])
        .collect();
    write_csv(path, "step,loss,lr", &rows)
}

/// Serialize a document as pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, doc: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc)
        .map_err(|e| CliError::Runtime(format!("cannot serialize json: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// One polyline of a plot.
pub struct Series<'a> {
    pub points: &'a [(f64, f64)],
    pub color: [u8; 3],
}

/// Fixed palette for multi-series plots.
pub const PALETTE: [[u8; 3]; 4] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [148, 103, 189],
];

const PLOT_MARGIN: usize = 8;

/// Render polylines into a PNG: white background, black frame, data scaled
/// to the bounding box of all finite points.  Numeric axes belong to the
/// CSV next to the plot; this is a quick visual only.
pub fn plot_lines(path: &Path, series: &[Series<'_>], width: usize, height: usize) -> Result<()> {
    if width < 2 * PLOT_MARGIN + 10 || height < 2 * PLOT_MARGIN + 10 {
        return Err(CliError::Runtime("plot dimensions too small".into()));
    }
    let finite = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (x, y) in finite {
        x_min = x_min.min(*x);
        x_max = x_max.max(*x);
        y_min = y_min.min(*y);
        y_max = y_max.max(*y);
    }
    if !x_min.is_finite() {
        return Err(CliError::Runtime("plot has no finite points".into()));
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }
    let mut canvas = vec![255u8; width * height * 3];
    let mut put = |x: usize, y: usize, color: [u8; 3]| {
        if x < width && y < height {
            let at = (y * width + x) * 3;
            canvas[at..at + 3].copy_from_slice(&color);
        }
    };
    // Frame.
    for x in PLOT_MARGIN..width - PLOT_MARGIN {
        put(x, PLOT_MARGIN, [0, 0, 0]);
        put(x, height - PLOT_MARGIN - 1, [0, 0, 0]);
    }
    for y in PLOT_MARGIN..height - PLOT_MARGIN {
        put(PLOT_MARGIN, y, [0, 0, 0]);
        put(width - PLOT_MARGIN - 1, y, [0, 0, 0]);
    }
    let inner_w = (width - 2 * PLOT_MARGIN - 1) as f64;
    let inner_h = (height - 2 * PLOT_MARGIN - 1) as f64;
    let to_px = |x: f64, y: f64| -> (i64, i64) {
        let px = PLOT_MARGIN as f64 + (x - x_min) / (x_max - x_min) * inner_w;
        let py = (height - PLOT_MARGIN - 1) as f64 - (y - y_min) / (y_max - y_min) * inner_h;
        (px.round() as i64, py.round() as i64)
    };
    for s in series {
        let pts: Vec<(i64, i64)> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| to_px(x, y))
            .collect();
        for pair in pts.windows(2) {
            let (mut x0, mut y0) = pair[0];
            let (x1, y1) = pair[1];
            // Bresenham segment.
            let dx = (x1 - x0).abs();
            let dy = -(y1 - y0).abs();
            let sx = if x0 < x1 { 1 } else { -1 };
            let sy = if y0 < y1 { 1 } else { -1 };
            let mut err = dx + dy;
            loop {
                put(x0 as usize, y0 as usize, s.color);
                if x0 == x1 && y0 == y1 {
                    break;
                }
                let e2 = 2 * err;
                if e2 >= dy {
                    err += dy;
                    x0 += sx;
                }
                if e2 <= dx {
                    err += dx;
                    y0 += sy;
                }
            }
        }
        if pts.len() == 1 {
            put(pts[0].0 as usize, pts[0].1 as usize, s.color);
        }
    }
    save_rgb(path, width, height, canvas)
}

/// Loss-curve plot: one series over steps.
pub fn plot_loss(path: &Path, rows: &[(u64, f64, f64)]) -> Result<()> {
    let points: Vec<(f64, f64)> = rows.iter().map(|(s, l, _)| (*s as f64, *l)).collect();
    plot_lines(
        path,
        &[Series {
            points: &points,
            color: PALETTE[0],
        }],
        640,
        360,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(side: usize) -> Array<f32> {
        let mut img = Array::<f32>::zeros(&[3, side, side]);
        for y in 0..side {
            for x in 0..side {
                let v = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
                for c in 0..3 {
                    *img.at_mut(&[c, y, x]) = v;
                }
            }
        }
        img
    }

    #[test]
    fn rgb_mapping_hits_the_endpoints_and_midpoint() {
        let mut img = Array::<f32>::zeros(&[3, 1, 3]);
        *img.at_mut(&[0, 0, 0]) = -1.0;
        *img.at_mut(&[0, 0, 1]) = 0.0;
        *img.at_mut(&[0, 0, 2]) = 1.0;
        let (_, _, bytes) = to_rgb8(&img).unwrap();
        assert_eq!(bytes[0], 0);
        assert_eq!(bytes[3], 128); // round(255 * 0.5)
        assert_eq!(bytes[6], 255);
    }

    #[test]
    fn out_of_range_values_clamp() {
        let mut img = Array::<f32>::zeros(&[3, 1, 1]);
        *img.at_mut(&[0, 0, 0]) = 7.0;
        *img.at_mut(&[1, 0, 0]) = -7.0;
        let (_, _, bytes) = to_rgb8(&img).unwrap();
        assert_eq!(bytes[0], 255);
        assert_eq!(bytes[1], 0);
    }

    #[test]
    fn grid_dimensions_account_for_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.png");
        let images = vec![checker(8), checker(8), checker(8)];
        save_image_grid(&path, &images, 2).unwrap();
        let img = image::open(&path).unwrap().into_rgb8();
        assert_eq!(img.width() as usize, 2 * 8 + 3 * GRID_GAP);
        assert_eq!(img.height() as usize, 2 * 8 + 3 * GRID_GAP);
    }

    #[test]
    fn grid_rejects_mismatched_tiles() {
        let dir = tempfile::tempdir().unwrap();
        let images = vec![checker(8), checker(4)];
        assert!(save_image_grid(&dir.path().join("g.png"), &images, 2).is_err());
    }

    #[test]
    fn writers_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![(1u64, 0.5f64, 1e-4f64), (2, 0.25, 2e-4)];
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_loss_csv(&a, &rows).unwrap();
        write_loss_csv(&b, &rows).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let text = std::fs::read_to_string(&a).unwrap();
        assert!(text.starts_with("step,loss,lr\n"));
        assert!(text.contains("1,0.5,0.0001"));

        let pa = dir.path().join("a.png");
        let pb = dir.path().join("b.png");
        plot_loss(&pa, &rows).unwrap();
        plot_loss(&pb, &rows).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    }

    #[test]
    fn plot_draws_within_the_frame() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.png");
        let points: Vec<(f64, f64)> = (0..50).map(|i| (i as f64, (i as f64 * 0.3).sin())).collect();
        plot_lines(
            &path,
            &[Series {
                points: &points,
                color: [255, 0, 0],
            }],
            200,
            100,
        )
        .unwrap();
        let img = image::open(&path).unwrap().into_rgb8();
        assert_eq!(img.dimensions(), (200, 100));
        let red = img.pixels().filter(|p| p.0 == [255, 0, 0]).count();
        assert!(red >= 50, "polyline missing: {red} red pixels");
        for (x, y, p) in img.enumerate_pixels() {
            if p.0 == [255, 0, 0] {
                assert!(x as usize >= PLOT_MARGIN && y as usize >= PLOT_MARGIN);
            }
        }
    }

    #[test]
    fn empty_plot_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = plot_lines(&dir.path().join("e.png"), &[], 100, 100).unwrap_err();
        assert!(err.to_string().contains("finite"));
    }
}
