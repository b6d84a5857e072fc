//! PNG <-> GrayImage conversion. Color images collapse to luma via the
//! ITU-R BT.601 weights (0.299 R + 0.587 G + 0.114 B).

use std::path::Path;

use anyhow::{Context, Result};
use hwrc_core::preprocess::GrayImage;
use image::ImageReader;

pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round() as u8
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = ImageReader::open(path)
        .with_context(|| format!("cannot open image {}", path.display()))?
        .decode()
        .with_context(|| format!("cannot decode image {}", path.display()))?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut pixels = Vec::with_capacity(w * h);
    for p in rgb.pixels() {
        pixels.push(luma(p.0[0], p.0[1], p.0[2]));
    }
    GrayImage::new(w, h, pixels).map_err(|e| anyhow::anyhow!("{e}: {}", path.display()))
}

pub fn save_gray(path: &Path, img: &GrayImage) -> Result<()> {
    let buf = image::GrayImage::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.pixels().to_vec(),
    )
    .expect("pixel count matches dimensions");
    buf.save(path)
        .with_context(|| format!("cannot write image {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_preserves_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let pixels: Vec<u8> = (0..12 * 5).map(|i| (i * 7 % 256) as u8).collect();
        let img = GrayImage::new(12, 5, pixels).unwrap();
        save_gray(&path, &img).unwrap();
        let back = load_gray(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn luma_weights() {
        assert_eq!(luma(255, 255, 255), 255);
        assert_eq!(luma(0, 0, 0), 0);
        assert_eq!(luma(255, 0, 0), 76); // 0.299 * 255 rounded
    }

    #[test]
    fn missing_file_error_names_path() {
        let err = load_gray(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(format!("{err}").contains("/nonexistent/x.png"));
    }
}
