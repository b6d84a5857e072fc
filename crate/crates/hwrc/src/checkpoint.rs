//! Checkpoint file: magic `HWRC`, version byte, little-endian u32 header
//! length, a UTF-8 JSON header (model config, vocabulary, input mode,
//! training step, block directory), then the parameter blocks as
//! little-endian f32 in directory order. Running batch-norm statistics and
//! optional Adam moments travel as ordinary named blocks.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use hwrc_core::adam::AdamState;
use hwrc_core::network::{HwrcnetConfig, ModelParams};
use hwrc_core::vocab::CharVocab;
use hwrc_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::InputMode;

const MAGIC: &[u8; 4] = b"HWRC";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct ConfigJson {
    input_w: usize,
    input_h: usize,
    maps: Vec<usize>,
    kernels: Vec<usize>,
    pools: Vec<(usize, usize)>,
    bn_stage: usize,
    hidden: usize,
    num_classes: usize,
}

impl From<&HwrcnetConfig> for ConfigJson {
    fn from(c: &HwrcnetConfig) -> Self {
        ConfigJson {
            input_w: c.input_w,
            input_h: c.input_h,
            maps: c.maps.clone(),
            kernels: c.kernels.clone(),
            pools: c.pools.clone(),
            bn_stage: c.bn_stage,
            hidden: c.hidden,
            num_classes: c.num_classes,
        }
    }
}

impl From<ConfigJson> for HwrcnetConfig {
    fn from(c: ConfigJson) -> Self {
        HwrcnetConfig {
            input_w: c.input_w,
            input_h: c.input_h,
            maps: c.maps,
            kernels: c.kernels,
            pools: c.pools,
            bn_stage: c.bn_stage,
            hidden: c.hidden,
            num_classes: c.num_classes,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ConfigJson,
    vocab: String,
    input_mode: InputMode,
    step: u64,
    has_optimizer: bool,
    blocks: Vec<BlockMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockMeta {
    name: String,
    shape: Vec<usize>,
}

/// Everything needed to resume or evaluate a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub vocab: CharVocab,
    pub input_mode: InputMode,
    pub step: u64,
    pub adam: Option<AdamState<f32>>,
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    if ckpt.vocab.num_classes() != ckpt.params.config.num_classes {
        bail!(
            "vocabulary has {} classes but the model expects {}",
            ckpt.vocab.num_classes(),
            ckpt.params.config.num_classes
        );
    }
    let mut blocks: Vec<(String, &Tensor<f32>)> = Vec::new();
    for (name, t) in ckpt.params.names().iter().zip(ckpt.params.tensors()) {
        blocks.push((name.clone(), t));
    }
    blocks.push(("bn.running_mean".into(), &ckpt.params.running_mean));
    blocks.push(("bn.running_var".into(), &ckpt.params.running_var));
    if let Some(adam) = &ckpt.adam {
        for (name, t) in ckpt.params.names().iter().zip(&adam.m) {
            blocks.push((format!("adam.m.{name}"), t));
        }
        for (name, t) in ckpt.params.names().iter().zip(&adam.v) {
            blocks.push((format!("adam.v.{name}"), t));
        }
    }

    let header = Header {
        config: (&ckpt.params.config).into(),
        vocab: ckpt.vocab.as_string(),
        input_mode: ckpt.input_mode,
        step: if let Some(a) = &ckpt.adam { a.step } else { ckpt.step },
        has_optimizer: ckpt.adam.is_some(),
        blocks: blocks
            .iter()
            .map(|(name, t)| BlockMeta { name: name.clone(), shape: t.shape().to_vec() })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for (_, t) in &blocks {
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 9 || &bytes[0..4] != MAGIC {
        bail!("not a checkpoint (bad magic)");
    }
    if bytes[4] != VERSION {
        bail!("unsupported checkpoint version {}", bytes[4]);
    }
    let header_len = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
    let header_end = 9 + header_len;
    if bytes.len() < header_end {
        bail!("truncated checkpoint header");
    }
    let header: Header = serde_json::from_slice(&bytes[9..header_end])
        .context("parsing checkpoint header")?;

    let mut offset = header_end;
    let mut named: Vec<(String, Tensor<f32>)> = Vec::with_capacity(header.blocks.len());
    for meta in &header.blocks {
        let numel: usize = meta.shape.iter().product();
        let end = offset + 4 * numel;
        if bytes.len() < end {
            bail!("truncated block {}", meta.name);
        }
        let data: Vec<f32> = bytes[offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        named.push((meta.name.clone(), Tensor::new(meta.shape.clone(), data)?));
        offset = end;
    }
    if offset != bytes.len() {
        bail!("{} trailing bytes after the last block", bytes.len() - offset);
    }

    let take = |name: &str| -> Result<Tensor<f32>> {
        named
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .with_context(|| format!("checkpoint is missing block {name}"))
    };

    let config: HwrcnetConfig = header.config.into();
    let params = ModelParams::from_named(
        config,
        |name| named.iter().find(|(n, _)| n == name).map(|(_, t)| t.clone()),
        take("bn.running_mean")?,
        take("bn.running_var")?,
    )
    .map_err(|e| anyhow::anyhow!("{e}"))?;

    let adam = if header.has_optimizer {
        let m: Result<Vec<_>> = params.names().iter().map(|n| take(&format!("adam.m.{n}"))).collect();
        let v: Result<Vec<_>> = params.names().iter().map(|n| take(&format!("adam.v.{n}"))).collect();
        Some(AdamState { m: m?, v: v?, step: header.step })
    } else {
        None
    };

    let vocab = CharVocab::from_chars(&header.vocab).map_err(|e| anyhow::anyhow!("{e}"))?;
    if vocab.num_classes() != params.config.num_classes {
        bail!("checkpoint vocabulary does not match the model class count");
    }

    Ok(Checkpoint { params, vocab, input_mode: header.input_mode, step: header.step, adam })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode(ckpt)?).with_context(|| format!("writing {}", path.display()))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path).with_context(|| format!("reading {}", path.display()))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hwrc_core::network::infer;

    fn sample_checkpoint(with_adam: bool) -> Checkpoint {
        let vocab = CharVocab::build(["abc"]).unwrap();
        let config = HwrcnetConfig {
            input_w: 16,
            input_h: 8,
            maps: vec![4, 8, 8, 8, 16],
            kernels: vec![5, 5, 3, 3, 3],
            pools: vec![(2, 2), (2, 2), (1, 2), (1, 1), (1, 1)],
            bn_stage: 2,
            hidden: 4,
            num_classes: vocab.num_classes(),
        };
        let params = ModelParams::<f32>::init(config, 11).unwrap();
        let adam = with_adam.then(|| {
            let mut st = AdamState::new(params.tensors());
            st.step = 42;
            st.m[0].data_mut()[0] = 0.25;
            st
        });
        Checkpoint { params, vocab, input_mode: InputMode::Dct4, step: 42, adam }
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        for with_adam in [false, true] {
            let ckpt = sample_checkpoint(with_adam);
            let back = decode(&encode(&ckpt).unwrap()).unwrap();
            assert_eq!(ckpt, back);
            // Forward outputs agree bit for bit.
            let input = Tensor::full(&[16, 8], 0.3f32);
            let a = infer(&ckpt.params, &input).unwrap();
            let b = infer(&back.params, &input).unwrap();
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        let bytes = encode(&sample_checkpoint(false)).unwrap();
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[2] = b'X';
        assert!(decode(&bad).is_err());
    }

    #[test]
    fn vocab_class_mismatch_rejected() {
        let mut ckpt = sample_checkpoint(false);
        ckpt.vocab = CharVocab::build(["abcd"]).unwrap(); // 5 classes vs 4
        assert!(encode(&ckpt).is_err());
    }

    #[test]
    fn file_roundtrip_preserves_mode_and_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ckpt = sample_checkpoint(true);
        save(&path, &ckpt).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.input_mode, InputMode::Dct4);
        assert_eq!(back.step, 42);
        assert_eq!(back.adam.as_ref().unwrap().step, 42);
    }
}
