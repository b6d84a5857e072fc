//! Training and evaluation loops.
//!
//! Batches are processed one sample per tape (batch norm therefore
//! normalizes over the spatial axes of each sample); per-sample gradients
//! are averaged in fixed sample order, so runs are bit-deterministic for a
//! given seed regardless of worker-thread count. Running batch-norm
//! statistics are folded in sequentially, also in sample order.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use hwrc_core::adam::{adam_step, AdamConfig, AdamState};
use hwrc_core::ctc::{ctc_loss_node, decode_beam, decode_best_path, min_frames};
use hwrc_core::dct::compress_plane;
use hwrc_core::metrics::EvalReport;
use hwrc_core::network::{infer, model_forward, HwrcnetConfig, Mode, ModelParams};
use hwrc_core::preprocess::{preprocess, GrayImage};
use hwrc_core::tape::Tape;
use hwrc_core::vocab::CharVocab;
use hwrc_core::Tensor;

use crate::checkpoint::Checkpoint;
use crate::InputMode;

const BN_MOMENTUM: f32 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Checkpoints and the epoch log land here when set.
    pub out_dir: Option<PathBuf>,
    /// Print one JSON log line per epoch to stdout.
    pub verbose: bool,
    /// Stop once the epoch evaluation reaches these thresholds.
    pub stop: Option<StopRule>,
}

/// Early-stop thresholds checked against the per-epoch evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub wa_at_least: f64,
    pub cer_at_most: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 50,
            adam: AdamConfig::default(),
            seed: 42,
            out_dir: None,
            verbose: false,
            stop: None,
        }
    }
}

/// An in-memory labeled word image, the unit both corpora reduce to.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub id: String,
    pub image: GrayImage,
    pub transcription: String,
}

/// A sample after preprocessing: the model input plane plus the encoded
/// label.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub plane: Tensor<f32>,
    pub label: Vec<usize>,
    pub transcription: String,
}

/// Preprocess chain plus optional DCT compression, fixed by the input mode.
pub fn prepare_plane(image: &GrayImage, mode: InputMode) -> Result<Tensor<f32>> {
    let plane = preprocess::<f32>(image).into_plane();
    match mode.block_size() {
        None => Ok(plane),
        Some(block) => {
            let dct = compress_plane(&plane, block, None).map_err(|e| anyhow::anyhow!("{e}"))?;
            Ok(dct.coeffs().clone())
        }
    }
}

/// Encodes and preprocesses samples; rejects labels that cannot be emitted
/// in the model's frame budget, naming the sample.
pub fn prepare(
    samples: &[TrainSample],
    mode: InputMode,
    vocab: &CharVocab,
    time_steps: usize,
) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| {
            let label = vocab
                .encode(&s.transcription)
                .map_err(|e| anyhow::anyhow!("sample {}: {e}", s.id))?;
            if min_frames(&label) > time_steps {
                bail!(
                    "sample {}: transcription {:?} cannot be emitted in {time_steps} frames",
                    s.id,
                    s.transcription
                );
            }
            Ok(Prepared {
                id: s.id.clone(),
                plane: prepare_plane(&s.image, mode)?,
                label,
                transcription: s.transcription.clone(),
            })
        })
        .collect()
}

/// A freshly initialized model wrapped as a checkpoint.
pub fn init_checkpoint(
    config: HwrcnetConfig,
    vocab: CharVocab,
    input_mode: InputMode,
    seed: u64,
) -> Result<Checkpoint> {
    if config.num_classes != vocab.num_classes() {
        bail!(
            "config expects {} classes but the vocabulary yields {}",
            config.num_classes,
            vocab.num_classes()
        );
    }
    let params = ModelParams::<f32>::init(config, seed).map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(Checkpoint { params, vocab, input_mode, step: 0, adam: None })
}

struct SampleGrads {
    loss: f32,
    grads: Vec<Tensor<f32>>,
    bn_stats: Option<(Tensor<f32>, Tensor<f32>)>,
}

fn sample_pass(params: &ModelParams<f32>, sample: &Prepared) -> Result<SampleGrads> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let x = tape.leaf(sample.plane.clone());
    let out = model_forward(&mut tape, params, &bound, x, Mode::Train)
        .map_err(|e| anyhow::anyhow!("sample {}: {e}", sample.id))?;
    let loss = ctc_loss_node(&mut tape, out.log_probs, &sample.label)
        .map_err(|e| anyhow::anyhow!("sample {}: {e}", sample.id))?;
    let loss_val = tape.value(loss).item();
    let grads = tape.backward(loss).map_err(|e| anyhow::anyhow!("sample {}: {e}", sample.id))?;
    Ok(SampleGrads {
        loss: loss_val,
        grads: bound.vars().iter().map(|&v| grads.get(v).clone()).collect(),
        bn_stats: out.bn_stats,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub cer: f64,
    pub wer: f64,
    pub wa: f64,
    pub waf: f64,
    pub wall_secs: f64,
}

pub struct TrainOutcome {
    pub latest: Checkpoint,
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
    /// Mean loss of every optimization step, in order (determinism probe).
    pub batch_losses: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    BestPath,
    Beam(usize),
}

fn decode_one(log_probs: &Tensor<f32>, vocab: &CharVocab, decode: DecodeMode) -> String {
    match decode {
        DecodeMode::BestPath => decode_best_path(log_probs, vocab),
        DecodeMode::Beam(width) => decode_beam(log_probs, vocab, width),
    }
}

/// Runs the model over prepared samples and scores the decoded words.
pub fn evaluate_prepared(
    params: &ModelParams<f32>,
    vocab: &CharVocab,
    samples: &[Prepared],
    decode: DecodeMode,
) -> Result<EvalReport> {
    if samples.is_empty() {
        bail!("cannot evaluate on an empty sample list");
    }
    let pairs: Result<Vec<(String, String)>> = samples
        .par_iter()
        .map(|s| {
            let lp = infer(params, &s.plane).map_err(|e| anyhow::anyhow!("sample {}: {e}", s.id))?;
            Ok((s.transcription.clone(), decode_one(&lp, vocab, decode)))
        })
        .collect();
    EvalReport::from_pairs(&pairs?).map_err(|e| anyhow::anyhow!("{e}"))
}

/// Evaluates a checkpoint on raw samples; the requested input mode must
/// match the mode the model was trained with.
pub fn evaluate(
    ckpt: &Checkpoint,
    samples: &[TrainSample],
    mode: InputMode,
    decode: DecodeMode,
) -> Result<EvalReport> {
    if mode != ckpt.input_mode {
        bail!(
            "input mode mismatch: checkpoint was trained on {}, requested {}",
            ckpt.input_mode,
            mode
        );
    }
    let prepared = prepare(
        samples,
        mode,
        &ckpt.vocab,
        ckpt.params.config.time_steps(),
    )?;
    evaluate_prepared(&ckpt.params, &ckpt.vocab, &prepared, decode)
}

/// Trains `initial` on `train`, scoring `test` each epoch. Returns the
/// final and best-by-CER checkpoints plus the per-epoch log. With an
/// output directory set, writes `latest.ckpt`, `best.ckpt`, and
/// `train_log.jsonl` as it goes.
pub fn train_loop(
    initial: Checkpoint,
    train: &[Prepared],
    test: &[Prepared],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        bail!("cannot train on an empty sample list");
    }
    if cfg.batch_size == 0 {
        bail!("batch size must be positive");
    }
    cfg.adam.validate().map_err(|e| anyhow::anyhow!("{e}"))?;

    let mut ckpt = initial;
    let mut adam = ckpt
        .adam
        .take()
        .unwrap_or_else(|| AdamState::new(ckpt.params.tensors()));
    let names_owned: Vec<String> = ckpt.params.names().to_vec();
    let names: Vec<&str> = names_owned.iter().map(String::as_str).collect();
    let mut log: Vec<EpochLog> = Vec::new();
    let mut batch_losses: Vec<f32> = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &train[i]).collect();
            let passes: Result<Vec<SampleGrads>> =
                batch.par_iter().map(|s| sample_pass(&ckpt.params, s)).collect();
            let passes = passes?;

            // Fixed-order reduction: mean loss and mean gradient.
            let inv = 1.0f32 / passes.len() as f32;
            let mut grads: Vec<Tensor<f32>> =
                ckpt.params.tensors().iter().map(Tensor::zeros_like).collect();
            let mut batch_loss = 0.0f32;
            for p in &passes {
                batch_loss += p.loss;
                for (acc, g) in grads.iter_mut().zip(&p.grads) {
                    acc.add_assign(g);
                }
            }
            batch_loss *= inv;
            for g in grads.iter_mut() {
                g.scale_in_place(inv);
            }

            // Running statistics, folded per sample in batch order.
            for p in &passes {
                if let Some((mean, var)) = &p.bn_stats {
                    for (r, &m) in ckpt.params.running_mean.data_mut().iter_mut().zip(mean.data()) {
                        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
                    }
                    for (r, &v) in ckpt.params.running_var.data_mut().iter_mut().zip(var.data()) {
                        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
                    }
                }
            }

            adam_step(ckpt.params.tensors_mut(), &grads, &names, &mut adam, &cfg.adam)
                .map_err(|e| anyhow::anyhow!("{e}"))?;

            loss_sum += batch_loss as f64 * passes.len() as f64;
            batch_losses.push(batch_loss);
        }
        ckpt.step = adam.step;

        let report = if test.is_empty() {
            None
        } else {
            Some(evaluate_prepared(&ckpt.params, &ckpt.vocab, test, DecodeMode::BestPath)?)
        };
        let entry = EpochLog {
            epoch,
            mean_loss: loss_sum / train.len() as f64,
            cer: report.as_ref().map_or(f64::NAN, |r| r.cer),
            wer: report.as_ref().map_or(f64::NAN, |r| r.wer),
            wa: report.as_ref().map_or(f64::NAN, |r| r.wa),
            waf: report.as_ref().map_or(f64::NAN, |r| r.waf),
            wall_secs: started.elapsed().as_secs_f64(),
        };
        if cfg.verbose {
            println!("{}", serde_json::to_string(&entry)?);
        }
        if let Some(r) = &report {
            if best.as_ref().map_or(true, |(c, _)| r.cer < *c) {
                let mut b = ckpt.clone();
                b.adam = Some(adam.clone());
                best = Some((r.cer, b));
            }
        }
        log.push(entry);

        if let Some(dir) = &cfg.out_dir {
            persist(dir, &ckpt, &adam, best.as_ref().map(|(_, b)| b), &log)?;
        }
        if let (Some(stop), Some(r)) = (&cfg.stop, &report) {
            if r.wa >= stop.wa_at_least && r.cer <= stop.cer_at_most {
                break;
            }
        }
    }

    ckpt.adam = Some(adam);
    let best = best.map(|(_, b)| b).unwrap_or_else(|| ckpt.clone());
    Ok(TrainOutcome { latest: ckpt, best, log, batch_losses })
}

fn persist(
    dir: &Path,
    latest: &Checkpoint,
    adam: &AdamState<f32>,
    best: Option<&Checkpoint>,
    log: &[EpochLog],
) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut with_adam = latest.clone();
    with_adam.adam = Some(adam.clone());
    crate::checkpoint::save(&dir.join("latest.ckpt"), &with_adam)?;
    if let Some(best) = best {
        crate::checkpoint::save(&dir.join("best.ckpt"), best)?;
    }
    let lines: Vec<String> =
        log.iter().map(|e| serde_json::to_string(e).unwrap_or_default()).collect();
    std::fs::write(dir.join("train_log.jsonl"), lines.join("\n") + "\n")
        .with_context(|| format!("writing log under {}", dir.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{gen_toy, ToyParams};

    fn narrow_config(num_classes: usize) -> HwrcnetConfig {
        HwrcnetConfig {
            maps: vec![2, 2, 4, 4, 8],
            hidden: 8,
            ..HwrcnetConfig::full(num_classes)
        }
    }

    fn toy_train_samples(words: &[&str], per_word: usize) -> Vec<TrainSample> {
        gen_toy(words, per_word, 5, &ToyParams::default())
            .unwrap()
            .into_iter()
            .map(|s| TrainSample { id: s.id, image: s.image, transcription: s.word })
            .collect()
    }

    fn setup(mode: InputMode) -> (Checkpoint, Vec<Prepared>) {
        let samples = toy_train_samples(&["ab", "ba"], 2);
        let vocab = CharVocab::build(["ab"]).unwrap();
        let ckpt =
            init_checkpoint(narrow_config(vocab.num_classes()), vocab.clone(), mode, 3).unwrap();
        let prepared = prepare(&samples, mode, &vocab, 32).unwrap();
        (ckpt, prepared)
    }

    #[test]
    fn zero_epochs_returns_initial_checkpoint() {
        let (ckpt, prepared) = setup(InputMode::Normal);
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let out = train_loop(ckpt.clone(), &prepared, &[], &cfg).unwrap();
        assert_eq!(out.latest.params, ckpt.params);
        assert_eq!(out.latest.step, 0);
        assert!(out.log.is_empty());
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (ckpt, prepared) = setup(InputMode::Dct4);
        let cfg = TrainConfig { epochs: 2, batch_size: 2, ..TrainConfig::default() };
        let a = train_loop(ckpt.clone(), &prepared, &prepared, &cfg).unwrap();
        let b = train_loop(ckpt, &prepared, &prepared, &cfg).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.batch_losses), bits(&b.batch_losses));
        assert_eq!(a.latest.params, b.latest.params);
    }

    #[test]
    fn loss_moves_under_training() {
        let (ckpt, prepared) = setup(InputMode::Normal);
        let cfg = TrainConfig { epochs: 2, batch_size: 4, ..TrainConfig::default() };
        let out = train_loop(ckpt.clone(), &prepared, &[], &cfg).unwrap();
        assert_ne!(out.latest.params, ckpt.params);
        assert_eq!(out.latest.step, 2);
        assert!(out.batch_losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn evaluate_rejects_mode_mismatch_and_empty_lists() {
        let (ckpt, _) = setup(InputMode::Dct4);
        let samples = toy_train_samples(&["ab"], 1);
        let err = evaluate(&ckpt, &samples, InputMode::Dct8, DecodeMode::BestPath).unwrap_err();
        assert!(format!("{err}").contains("mode mismatch"));
        assert!(evaluate(&ckpt, &[], InputMode::Dct4, DecodeMode::BestPath).is_err());
        assert!(evaluate(&ckpt, &samples, InputMode::Dct4, DecodeMode::BestPath).is_ok());
    }

    #[test]
    fn prepare_names_infeasible_samples() {
        let vocab = CharVocab::build(["ab"]).unwrap();
        let sample = TrainSample {
            id: "bad-000-00-00".into(),
            image: GrayImage::filled(40, 12, 255),
            transcription: "aaaaaaaaaaaaaaaaa".into(), // 17 a's need 33 frames
        };
        let err = prepare(&[sample], InputMode::Normal, &vocab, 32).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("bad-000-00-00") && msg.contains("32"), "{msg}");
    }

    #[test]
    fn checkpoints_and_log_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let (ckpt, prepared) = setup(InputMode::Normal);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            out_dir: Some(dir.path().to_path_buf()),
            ..TrainConfig::default()
        };
        let out = train_loop(ckpt, &prepared, &prepared, &cfg).unwrap();
        let latest = crate::checkpoint::load(&dir.path().join("latest.ckpt")).unwrap();
        assert_eq!(latest.params, out.latest.params);
        assert!(dir.path().join("best.ckpt").exists());
        let log = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 1);
        assert!(log.contains("\"mean_loss\""));
    }
}
