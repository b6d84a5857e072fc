//! Block-wise forward/inverse DCT (8x8 and 4x4) with optional JPEG-style
//! quantization, producing the compressed-domain plane the network trains on.
//!
//! The forward transform is
//! `DCT(i,j) = 1/sqrt(2N) * C(i) * C(j) * sum_{x,y} p(x,y) cos((2x+1)i pi/2N) cos((2y+1)j pi/2N)`
//! with `C(0) = 1/sqrt(2)` and `C(k) = 1` otherwise. Written as `A X A^T`,
//! the basis satisfies `A A^T = sqrt(N/8) * I`, so the map is orthogonal up
//! to a scalar (exactly orthonormal at N = 8) and the inverse is the
//! rescaled transpose.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::preprocess::{ModelInput, PLANE_H, PLANE_W};
use crate::tensor::{lit, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum DctError {
    UnsupportedBlockSize(usize),
    QualityOutOfRange(u8),
    BadBlockShape { expected: usize, got: Vec<usize> },
    IndivisiblePlane { extent: usize, block: usize },
    QuantTableMismatch { table: usize, block: usize },
}

impl fmt::Display for DctError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DctError::UnsupportedBlockSize(n) => write!(f, "unsupported block size {n}, must be 4 or 8"),
            DctError::QualityOutOfRange(q) => write!(f, "quality {q} out of range 1..=100"),
            DctError::BadBlockShape { expected, got } => {
                write!(f, "expected {expected}x{expected} block, got {got:?}")
            }
            DctError::IndivisiblePlane { extent, block } => {
                write!(f, "plane extent {extent} not divisible by block size {block}")
            }
            DctError::QuantTableMismatch { table, block } => {
                write!(f, "quant table is {table}x{table} but block size is {block}")
            }
        }
    }
}

impl core::error::Error for DctError {}

/// Block side length, 4 or 8.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockSize {
    N4,
    N8,
}

impl BlockSize {
    pub fn n(self) -> usize {
        match self {
            BlockSize::N4 => 4,
            BlockSize::N8 => 8,
        }
    }

    pub fn from_usize(n: usize) -> Result<Self, DctError> {
        match n {
            4 => Ok(BlockSize::N4),
            8 => Ok(BlockSize::N8),
            _ => Err(DctError::UnsupportedBlockSize(n)),
        }
    }
}

/// Scalar `lambda` with `A A^T == lambda * I` for the block basis `A`.
/// Equals `sqrt(N/8)`: 1 at N = 8, `1/sqrt(2)` at N = 4.
pub fn basis_gram_scale(block: BlockSize) -> f64 {
    let n = block.n() as f64;
    libm::sqrt(n / 8.0)
}

/// Rows of the (scaled) cosine basis: `A[i][x] = (2N)^(-1/4) C(i) cos((2x+1)i pi / 2N)`.
fn basis<T: Scalar>(n: usize) -> Vec<T> {
    let nf = n as f64;
    let g = libm::pow(2.0 * nf, -0.25);
    let mut a = vec![T::zero(); n * n];
    for i in 0..n {
        let c = if i == 0 { 1.0 / libm::sqrt(2.0) } else { 1.0 };
        for x in 0..n {
            let angle = (2.0 * x as f64 + 1.0) * i as f64 * core::f64::consts::PI / (2.0 * nf);
            a[i * n + x] = lit(g * c * libm::cos(angle));
        }
    }
    a
}

fn check_block<T: Scalar>(block: &Tensor<T>, n: usize) -> Result<(), DctError> {
    if block.shape() != [n, n] {
        return Err(DctError::BadBlockShape { expected: n, got: block.shape().to_vec() });
    }
    Ok(())
}

/// `A X A^T` for an N x N block.
pub fn forward_block_dct<T: Scalar>(
    block: &Tensor<T>,
    size: BlockSize,
) -> Result<Tensor<T>, DctError> {
    let n = size.n();
    check_block(block, n)?;
    let a = basis::<T>(n);
    Ok(apply_basis(block.data(), &a, n, false))
}

/// `(1/lambda^2) A^T Y A`, the exact inverse of [`forward_block_dct`].
pub fn inverse_block_dct<T: Scalar>(
    coeffs: &Tensor<T>,
    size: BlockSize,
) -> Result<Tensor<T>, DctError> {
    let n = size.n();
    check_block(coeffs, n)?;
    let a = basis::<T>(n);
    let mut out = apply_basis(coeffs.data(), &a, n, true);
    let lambda = basis_gram_scale(size);
    out.scale_in_place(lit(1.0 / (lambda * lambda)));
    Ok(out)
}

/// Computes `A X A^T` (forward) or `A^T X A` (transposed = inverse up to scale).
fn apply_basis<T: Scalar>(x: &[T], a: &[T], n: usize, transposed: bool) -> Tensor<T> {
    let at = |i: usize, j: usize| if transposed { a[j * n + i] } else { a[i * n + j] };
    // tmp = A X
    let mut tmp = vec![T::zero(); n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = at(i, k);
            for j in 0..n {
                tmp[i * n + j] = tmp[i * n + j] + aik * x[k * n + j];
            }
        }
    }
    // out = tmp A^T
    let mut out = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = T::zero();
            for k in 0..n {
                acc = acc + tmp[i * n + k] * at(j, k);
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::new(vec![n, n], out).expect("block shape")
}

/// JPEG luminance base quantization table (quality 50), row-major 8x8.
const JPEG_LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Quantizer step table for one block size; steps are >= 1. Carries the
/// quality it was derived from, when any, so the compressed image can
/// record it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTable {
    block: BlockSize,
    steps: Vec<u16>,
    quality: Option<u8>,
}

impl QuantTable {
    pub fn new(block: BlockSize, steps: Vec<u16>) -> Result<Self, DctError> {
        let n = block.n();
        if steps.len() != n * n || steps.iter().any(|&s| s == 0) {
            return Err(DctError::QuantTableMismatch { table: steps.len(), block: n });
        }
        Ok(QuantTable { block, steps, quality: None })
    }

    pub fn block_size(&self) -> BlockSize {
        self.block
    }

    pub fn steps(&self) -> &[u16] {
        &self.steps
    }

    pub fn quality(&self) -> Option<u8> {
        self.quality
    }
}

/// Scales the JPEG luminance base table by the standard quality formula.
/// The 4x4 table is the top-left corner of the 8x8 base.
pub fn jpeg_quant_table(block: BlockSize, quality: u8) -> Result<QuantTable, DctError> {
    if quality < 1 || quality > 100 {
        return Err(DctError::QualityOutOfRange(quality));
    }
    let scale = if quality < 50 {
        5000.0 / quality as f64
    } else {
        200.0 - 2.0 * quality as f64
    };
    let n = block.n();
    let mut steps = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let base = JPEG_LUMA_BASE[i * 8 + j] as f64;
            let s = libm::round(base * scale / 100.0);
            steps.push(if s < 1.0 { 1 } else { s as u16 });
        }
    }
    Ok(QuantTable { block, steps, quality: Some(quality) })
}

/// Block-DCT coefficient plane in the model-input orientation
/// (`PLANE_W x PLANE_H` = 128x32), laid out in place block by block.
#[derive(Debug, Clone, PartialEq)]
pub struct DctImage<T> {
    coeffs: Tensor<T>,
    block: BlockSize,
    quantized: bool,
    quality: Option<u8>,
}

impl<T: Scalar> DctImage<T> {
    pub fn coeffs(&self) -> &Tensor<T> {
        &self.coeffs
    }

    pub fn block_size(&self) -> BlockSize {
        self.block
    }

    pub fn quantized(&self) -> bool {
        self.quantized
    }

    pub fn quality(&self) -> Option<u8> {
        self.quality
    }

    /// Reassembles a `DctImage` from parts (deserialization path). The
    /// plane must be `128 x 32`.
    pub fn from_parts(
        coeffs: Tensor<T>,
        block: BlockSize,
        quantized: bool,
        quality: Option<u8>,
    ) -> Result<Self, DctError> {
        if coeffs.shape() != [PLANE_W, PLANE_H] {
            return Err(DctError::BadBlockShape {
                expected: PLANE_W,
                got: coeffs.shape().to_vec(),
            });
        }
        Ok(DctImage { coeffs, block, quantized, quality })
    }
}

/// Transforms a preprocessed `[0,1]` plane into the DCT coefficient plane the
/// network consumes. Values are level-shifted to `[-0.5, 0.5]`, each block is
/// transformed independently, optionally quantize-dequantized against the
/// given table (steps interpreted in the 255-valued pixel domain), and the
/// whole plane is rescaled by `1/block_size` so coefficients land near
/// `[-1, 1]`.
pub fn compress_image<T: Scalar>(
    input: &ModelInput<T>,
    block: BlockSize,
    quant: Option<&QuantTable>,
) -> Result<DctImage<T>, DctError> {
    let plane = input.plane();
    compress_plane(plane, block, quant)
}

/// Same as [`compress_image`] but on a bare plane; shape must be divisible
/// by the block size in both extents.
pub fn compress_plane<T: Scalar>(
    plane: &Tensor<T>,
    block: BlockSize,
    quant: Option<&QuantTable>,
) -> Result<DctImage<T>, DctError> {
    let n = block.n();
    let (h, w) = (plane.shape()[0], plane.shape()[1]);
    if h % n != 0 {
        return Err(DctError::IndivisiblePlane { extent: h, block: n });
    }
    if w % n != 0 {
        return Err(DctError::IndivisiblePlane { extent: w, block: n });
    }
    if let Some(q) = quant {
        if q.block.n() != n {
            return Err(DctError::QuantTableMismatch { table: q.block.n(), block: n });
        }
    }
    let half = lit::<T>(0.5);
    let mut out = Tensor::<T>::zeros(plane.shape());
    let mut blk = Tensor::<T>::zeros(&[n, n]);
    for b0 in (0..h).step_by(n) {
        for b1 in (0..w).step_by(n) {
            for i in 0..n {
                for j in 0..n {
                    blk.data_mut()[i * n + j] = plane.at2(b0 + i, b1 + j) - half;
                }
            }
            let mut coeffs = forward_block_dct(&blk, block)?;
            if let Some(q) = quant {
                let full = lit::<T>(255.0);
                for (c, &step) in coeffs.data_mut().iter_mut().zip(q.steps.iter()) {
                    let s = lit::<T>(step as f64);
                    *c = (*c * full / s).round() * s / full;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let idx = (b0 + i) * w + (b1 + j);
                    out.data_mut()[idx] = coeffs.data()[i * n + j];
                }
            }
        }
    }
    let rescale = lit::<T>(1.0 / n as f64);
    out.scale_in_place(rescale);
    DctImage::from_parts(out, block, quant.is_some(), quant.and_then(|q| q.quality))
}

/// [`compress_plane`] with a standard JPEG-style table at the given quality.
pub fn compress_plane_quality<T: Scalar>(
    plane: &Tensor<T>,
    block: BlockSize,
    quality: Option<u8>,
) -> Result<DctImage<T>, DctError> {
    let table = match quality {
        Some(q) => Some(jpeg_quant_table(block, q)?),
        None => None,
    };
    compress_plane(plane, block, table.as_ref())
}
