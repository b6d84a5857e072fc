//! CDCT stream: the on-disk form of a DCT coefficient plane.
//!
//! Layout (little-endian): magic `CDCT`, version byte (1), block_size byte
//! (4 or 8), quantized flag (0/1), quality byte (0 when unquantized or
//! quality unrecorded), then 128*32 f32 coefficients row-major.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use hwrc_core::dct::{BlockSize, DctImage};
use hwrc_core::preprocess::{PLANE_H, PLANE_W};
use hwrc_core::Tensor;

const MAGIC: &[u8; 4] = b"CDCT";
const VERSION: u8 = 1;

pub fn encode(img: &DctImage<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + PLANE_W * PLANE_H * 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(img.block_size().n() as u8);
    out.push(img.quantized() as u8);
    out.push(img.quality().unwrap_or(0));
    for &c in img.coeffs().data() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<DctImage<f32>> {
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        bail!("not a CDCT stream (bad magic)");
    }
    if bytes[4] != VERSION {
        bail!("unsupported CDCT version {}", bytes[4]);
    }
    let block = BlockSize::from_usize(bytes[5] as usize).map_err(|e| anyhow::anyhow!("{e}"))?;
    let quantized = match bytes[6] {
        0 => false,
        1 => true,
        v => bail!("bad quantized flag {v}"),
    };
    let quality = if quantized && bytes[7] >= 1 { Some(bytes[7]) } else { None };
    let body = &bytes[8..];
    let expect = PLANE_W * PLANE_H * 4;
    if body.len() != expect {
        bail!("CDCT body is {} bytes, expected {expect}", body.len());
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let coeffs = Tensor::new(vec![PLANE_W, PLANE_H], data)?;
    DctImage::from_parts(coeffs, block, quantized, quality).map_err(|e| anyhow::anyhow!("{e}"))
}

pub fn write_file(path: &Path, img: &DctImage<f32>) -> Result<()> {
    fs::write(path, encode(img)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_file(path: &Path) -> Result<DctImage<f32>> {
    let bytes =
        fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode(&bytes)
}
