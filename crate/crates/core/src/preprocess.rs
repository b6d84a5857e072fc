//! Raw grayscale word image to the fixed 128x32, contrast-stretched,
//! transposed raster the model consumes.
//!
//! Chain: contrast stretch -> aspect-preserving resize onto a white 128x32
//! canvas (top-left aligned) -> normalize to [0,1] and transpose so the
//! writing axis leads and each of the 32 time steps is a contiguous slice.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::tensor::{lit, Scalar, Tensor};

/// Canvas width (writing axis) of the model input.
pub const PLANE_W: usize = 128;
/// Canvas height of the model input.
pub const PLANE_H: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub enum PreprocessError {
    EmptyImage,
    WrongShape { expected: (usize, usize), got: (usize, usize) },
}

impl fmt::Display for PreprocessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PreprocessError::EmptyImage => write!(f, "image has no pixels"),
            PreprocessError::WrongShape { expected, got } => write!(
                f,
                "expected {}x{} image, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
        }
    }
}

impl core::error::Error for PreprocessError {}

/// 2-D grayscale raster, pixels row-major in [0, 255].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, PreprocessError> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(PreprocessError::EmptyImage);
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage { width, height, pixels: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }
}

/// Normalized, transposed 128x32 plane in [0,1]; axis 0 is the writing axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput<T> {
    plane: Tensor<T>,
}

impl<T: Scalar> ModelInput<T> {
    pub fn plane(&self) -> &Tensor<T> {
        &self.plane
    }

    pub fn into_plane(self) -> Tensor<T> {
        self.plane
    }

    pub fn from_plane(plane: Tensor<T>) -> Result<Self, PreprocessError> {
        if plane.shape() != [PLANE_W, PLANE_H] {
            let got = if plane.rank() == 2 {
                (plane.shape()[0], plane.shape()[1])
            } else {
                (0, 0)
            };
            return Err(PreprocessError::WrongShape { expected: (PLANE_W, PLANE_H), got });
        }
        Ok(ModelInput { plane })
    }
}

/// Stretches the intensity range to the full [0, 255]:
/// `g'(x,y) = INT(255 / (GLmax - GLmin) * (g(x,y) - GLmin))`, INT truncating
/// toward zero. A constant image (GLmax == GLmin) is returned unchanged.
pub fn contrast_stretch(img: &GrayImage) -> GrayImage {
    let mut min = u8::MAX;
    let mut max = u8::MIN;
    for &p in img.pixels() {
        min = min.min(p);
        max = max.max(p);
    }
    if min == max {
        return img.clone();
    }
    // Exact integer arithmetic so the truncation never loses the top value
    // to floating-point round-off (255/span * span must be exactly 255).
    let span = (max - min) as u32;
    let mut out = img.clone();
    for p in out.pixels_mut() {
        *p = ((*p - min) as u32 * 255 / span) as u8;
    }
    out
}

/// Scales the image by the largest aspect-preserving factor that fits
/// 128x32 (bilinear), then places it at the top-left of an all-white canvas.
pub fn resize_pad(img: &GrayImage) -> GrayImage {
    resize_pad_to(img, PLANE_W, PLANE_H)
}

pub fn resize_pad_to(img: &GrayImage, target_w: usize, target_h: usize) -> GrayImage {
    let fw = target_w as f64 / img.width() as f64;
    let fh = target_h as f64 / img.height() as f64;
    let f = fw.min(fh);
    let new_w = ((img.width() as f64 * f).round() as usize).clamp(1, target_w);
    let new_h = ((img.height() as f64 * f).round() as usize).clamp(1, target_h);
    let scaled = bilinear_resize(img, new_w, new_h);
    let mut canvas = GrayImage::filled(target_w, target_h, 255);
    for y in 0..new_h {
        for x in 0..new_w {
            canvas.set(x, y, scaled.get(x, y));
        }
    }
    canvas
}

/// Bilinear resample with pixel-center alignment; the identity when the
/// size is unchanged.
fn bilinear_resize(img: &GrayImage, new_w: usize, new_h: usize) -> GrayImage {
    if new_w == img.width() && new_h == img.height() {
        return img.clone();
    }
    let sx = img.width() as f64 / new_w as f64;
    let sy = img.height() as f64 / new_h as f64;
    let mut out = GrayImage::filled(new_w, new_h, 0);
    for y in 0..new_h {
        let src_y = ((y as f64 + 0.5) * sy - 0.5).max(0.0);
        let y0 = (src_y as usize).min(img.height() - 1);
        let y1 = (y0 + 1).min(img.height() - 1);
        let dy = src_y - y0 as f64;
        for x in 0..new_w {
            let src_x = ((x as f64 + 0.5) * sx - 0.5).max(0.0);
            let x0 = (src_x as usize).min(img.width() - 1);
            let x1 = (x0 + 1).min(img.width() - 1);
            let dx = src_x - x0 as f64;
            let top = img.get(x0, y0) as f64 * (1.0 - dx) + img.get(x1, y0) as f64 * dx;
            let bot = img.get(x0, y1) as f64 * (1.0 - dx) + img.get(x1, y1) as f64 * dx;
            let v = top * (1.0 - dy) + bot * dy;
            out.set(x, y, libm::round(v).clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Divides by 255 and swaps axes so the width (writing) axis leads.
pub fn normalize_transpose<T: Scalar>(img: &GrayImage) -> Result<ModelInput<T>, PreprocessError> {
    if img.width() != PLANE_W || img.height() != PLANE_H {
        return Err(PreprocessError::WrongShape {
            expected: (PLANE_W, PLANE_H),
            got: (img.width(), img.height()),
        });
    }
    let mut data = vec![T::zero(); PLANE_W * PLANE_H];
    let inv = lit::<T>(1.0 / 255.0);
    for y in 0..PLANE_H {
        for x in 0..PLANE_W {
            data[x * PLANE_H + y] = lit::<T>(img.get(x, y) as f64) * inv;
        }
    }
    let plane = Tensor::new(vec![PLANE_W, PLANE_H], data).expect("plane shape");
    Ok(ModelInput { plane })
}

/// Full preprocessing chain: contrast stretch, resize/pad, normalize/transpose.
pub fn preprocess<T: Scalar>(img: &GrayImage) -> ModelInput<T> {
    let stretched = contrast_stretch(img);
    let padded = resize_pad(&stretched);
    normalize_transpose(&padded).expect("resize_pad emits 128x32")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stretch_full_range_is_identity() {
        let pixels: Vec<u8> = (0..=255).collect();
        let img = GrayImage::new(16, 16, pixels.clone()).unwrap();
        assert_eq!(contrast_stretch(&img).pixels(), &pixels[..]);
    }

    #[test]
    fn stretch_two_values() {
        let img = GrayImage::new(2, 1, vec![100, 150]).unwrap();
        let out = contrast_stretch(&img);
        assert_eq!(out.pixels(), &[0, 255]);
    }

    #[test]
    fn stretch_constant_image_unchanged() {
        let img = GrayImage::new(2, 1, vec![77, 77]).unwrap();
        assert_eq!(contrast_stretch(&img).pixels(), &[77, 77]);
    }

    #[test]
    fn stretch_hits_full_range_and_is_idempotent() {
        let img = GrayImage::new(3, 2, vec![50, 60, 70, 80, 90, 100]).unwrap();
        let once = contrast_stretch(&img);
        assert_eq!(*once.pixels().iter().min().unwrap(), 0);
        assert_eq!(*once.pixels().iter().max().unwrap(), 255);
        let twice = contrast_stretch(&once);
        assert_eq!(once.pixels(), twice.pixels());
    }

    #[test]
    fn stretch_preserves_ordering() {
        let img = GrayImage::new(4, 1, vec![30, 10, 20, 30]).unwrap();
        let out = contrast_stretch(&img);
        assert!(out.pixels()[1] <= out.pixels()[2]);
        assert!(out.pixels()[2] <= out.pixels()[0]);
        assert_eq!(out.pixels()[0], out.pixels()[3]);
    }

    #[test]
    fn resize_pad_identity_on_target_size() {
        let pixels: Vec<u8> = (0..PLANE_W * PLANE_H).map(|i| (i % 251) as u8).collect();
        let img = GrayImage::new(PLANE_W, PLANE_H, pixels.clone()).unwrap();
        assert_eq!(resize_pad(&img).pixels(), &pixels[..]);
    }

    #[test]
    fn resize_pad_doubles_64x16() {
        let img = GrayImage::filled(64, 16, 10);
        let out = resize_pad(&img);
        assert_eq!(out.width(), PLANE_W);
        assert_eq!(out.height(), PLANE_H);
        // exact fit: no white border
        assert!(out.pixels().iter().all(|&p| p != 255 || p == 10));
        assert_eq!(out.get(127, 31), 10);
    }

    #[test]
    fn resize_pad_width_limited() {
        // 1000x10: f = min(0.128, 3.2) = 0.128 -> 128x1, white rows below
        let img = GrayImage::filled(1000, 10, 0);
        let out = resize_pad(&img);
        assert_eq!(out.get(0, 0), 0);
        for y in 2..PLANE_H {
            for x in 0..PLANE_W {
                assert_eq!(out.get(x, y), 255, "padded pixel ({x},{y}) must be white");
            }
        }
    }

    #[test]
    fn resize_pad_always_128x32_with_white_padding() {
        let img = GrayImage::filled(7, 3, 0);
        let out = resize_pad(&img);
        assert_eq!((out.width(), out.height()), (PLANE_W, PLANE_H));
        // right of the scaled content everything is white
        assert_eq!(out.get(127, 0), 255);
    }

    #[test]
    fn normalize_transpose_examples() {
        let img = GrayImage::filled(PLANE_W, PLANE_H, 255);
        let mi = normalize_transpose::<f64>(&img).unwrap();
        assert!(mi.plane().data().iter().all(|&v| v == 1.0));

        let mut img = GrayImage::filled(PLANE_W, PLANE_H, 0);
        img.set(5, 2, 51); // column 5, row 2
        let mi = normalize_transpose::<f64>(&img).unwrap();
        assert!((mi.plane().at2(5, 2) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn normalize_transpose_rejects_wrong_shape() {
        let img = GrayImage::filled(10, 10, 0);
        assert!(normalize_transpose::<f32>(&img).is_err());
    }

    #[test]
    fn transpose_is_involutive() {
        let pixels: Vec<u8> = (0..PLANE_W * PLANE_H).map(|i| (i % 256) as u8).collect();
        let img = GrayImage::new(PLANE_W, PLANE_H, pixels).unwrap();
        let mi = normalize_transpose::<f64>(&img).unwrap();
        // undo: value * 255 back at swapped index reproduces the image
        for y in 0..PLANE_H {
            for x in 0..PLANE_W {
                let v = mi.plane().at2(x, y) * 255.0;
                assert!((v - img.get(x, y) as f64).abs() < 1e-9);
            }
        }
    }
}
