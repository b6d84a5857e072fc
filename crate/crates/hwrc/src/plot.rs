//! Minimal static plotting: a loss/CER curve rendered straight into a PNG.

use std::path::Path;

use anyhow::{bail, Context, Result};

const W: u32 = 640;
const H: u32 = 400;
const MARGIN: u32 = 40;

fn draw_line(img: &mut image::RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, color: [u8; 3]) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = (x0 + t * (x1 - x0)).round() as i64;
        let y = (y0 + t * (y1 - y0)).round() as i64;
        if x >= 0 && y >= 0 && (x as u32) < W && (y as u32) < H {
            img.put_pixel(x as u32, y as u32, image::Rgb(color));
        }
    }
}

fn draw_series(img: &mut image::RgbImage, values: &[f64], color: [u8; 3]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if (hi - lo).abs() < 1e-12 { 1.0 } else { hi - lo };
    let px = |i: usize| {
        MARGIN as f64
            + (W - 2 * MARGIN) as f64 * i as f64 / (values.len().max(2) - 1) as f64
    };
    let py = |v: f64| (H - MARGIN) as f64 - (H - 2 * MARGIN) as f64 * (v - lo) / span;
    for i in 1..values.len() {
        draw_line(img, px(i - 1), py(values[i - 1]), px(i), py(values[i]), color);
    }
}

/// Writes a PNG with the loss curve (dark blue) and, when present, the
/// CER curve (dark red), each independently scaled to the plot area.
pub fn save_curve(path: &Path, losses: &[f64], cers: Option<&[f64]>) -> Result<()> {
    if losses.is_empty() {
        bail!("nothing to plot: no loss values");
    }
    let mut img = image::RgbImage::from_pixel(W, H, image::Rgb([255, 255, 255]));
    // Axes.
    let axis = [120u8, 120, 120];
    draw_line(&mut img, MARGIN as f64, MARGIN as f64, MARGIN as f64, (H - MARGIN) as f64, axis);
    draw_line(
        &mut img,
        MARGIN as f64,
        (H - MARGIN) as f64,
        (W - MARGIN) as f64,
        (H - MARGIN) as f64,
        axis,
    );
    draw_series(&mut img, losses, [30, 60, 180]);
    if let Some(cers) = cers {
        if !cers.is_empty() {
            draw_series(&mut img, cers, [180, 40, 40]);
        }
    }
    img.save(path).with_context(|| format!("writing plot {}", path.display()))
}
