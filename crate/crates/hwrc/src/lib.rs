//! Std-side companion to `hwrc-core`: image and dataset IO, file formats,
//! the training loop, and plotting. The CLI binary lives in `main.rs`.

use std::fmt;
use std::str::FromStr;

use hwrc_core::dct::BlockSize;
use serde::{Deserialize, Serialize};

/// What the network consumes: raw normalized pixels or a block-DCT
/// coefficient plane. Checkpoints record the mode; evaluation rejects a
/// mode mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Normal,
    Dct8,
    Dct4,
}

impl InputMode {
    pub fn block_size(self) -> Option<BlockSize> {
        match self {
            InputMode::Normal => None,
            InputMode::Dct8 => Some(BlockSize::N8),
            InputMode::Dct4 => Some(BlockSize::N4),
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputMode::Normal => "normal",
            InputMode::Dct8 => "dct8",
            InputMode::Dct4 => "dct4",
        })
    }
}

impl FromStr for InputMode {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(InputMode::Normal),
            "dct8" => Ok(InputMode::Dct8),
            "dct4" => Ok(InputMode::Dct4),
            other => anyhow::bail!("unknown input mode {other:?} (normal|dct8|dct4)"),
        }
    }
}

pub mod cdct;
pub mod checkpoint;
pub mod data;
pub mod font;
pub mod image_io;
pub mod plot;
pub mod selftest;
pub mod toy;
pub mod train;
