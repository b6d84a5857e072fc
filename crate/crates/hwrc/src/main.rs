//! Batch command-line front end: compress | preprocess | gen-toy | train |
//! eval | predict | selftest. Exit codes: 0 success, 1 runtime fault, 2
//! usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use hwrc::checkpoint::{self, Checkpoint};
use hwrc::data::{self, LoadOptions};
use hwrc::image_io::{load_gray, save_gray};
use hwrc::toy::{gen_toy, write_toy_dataset, ToyParams};
use hwrc::train::{
    self, evaluate, init_checkpoint, prepare, prepare_plane, DecodeMode, TrainConfig, TrainSample,
};
use hwrc::{cdct, plot, selftest, InputMode};
use hwrc_core::adam::AdamConfig;
use hwrc_core::ctc::{decode_beam, decode_best_path, lexicon_correct};
use hwrc_core::dct::{compress_plane_quality, BlockSize};
use hwrc_core::metrics::EvalReport;
use hwrc_core::network::{infer, HwrcnetConfig};
use hwrc_core::preprocess::{contrast_stretch, preprocess, resize_pad};

/// Built-in word list for the synthetic corpus (a-z glyphs only).
const TOY_WORDS: &[&str] = &[
    "the", "and", "for", "are", "but", "not", "you", "all", "can", "her", "was", "one", "our",
    "out", "day", "get", "has", "him", "his", "how", "man", "new", "now", "old", "see", "two",
    "way", "who", "boy", "did", "its", "let", "put", "say", "she", "too", "use", "dog", "cat",
    "run",
];

#[derive(Parser)]
#[command(name = "hwrc", version, about = "Handwritten word recognition in the block-DCT domain")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Normal,
    Dct8,
    Dct4,
}

impl From<ModeArg> for InputMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Normal => InputMode::Normal,
            ModeArg::Dct8 => InputMode::Dct8,
            ModeArg::Dct4 => InputMode::Dct4,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WidthArg {
    /// Production geometry: maps 32/64/128/128/256, 256 hidden units.
    Full,
    /// Same topology, narrower maps; for fast desk-scale runs.
    Reduced,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DecodeArg {
    Best,
    Beam,
}

#[derive(Subcommand)]
enum Cmd {
    /// Preprocess a word image and write its DCT coefficient plane (CDCT).
    Compress {
        #[arg(long)]
        input: PathBuf,
        /// Block size.
        #[arg(long, default_value = "8", value_parser = ["4", "8"])]
        block: String,
        /// JPEG-style quantization quality; omit for raw coefficients.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=100))]
        quality: Option<u8>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Contrast-stretch and resize a word image to the 128x32 canvas.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Render a synthetic word corpus in the standard index layout.
    GenToy {
        #[arg(long)]
        out: PathBuf,
        /// Number of distinct words (from the built-in list).
        #[arg(long, default_value_t = 30)]
        words: usize,
        /// Renders per word.
        #[arg(long, default_value_t = 10)]
        renders: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train a model on a corpus directory (words.txt + images).
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        width: Option<WidthArg>,
        /// Output directory for checkpoints, log, and loss curve.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Optional TOML file; command-line flags win over its values.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Score the training set each epoch instead of a held-out 5% split.
        #[arg(long)]
        eval_on_train: bool,
        /// Keep samples whose segmentation is flagged err.
        #[arg(long)]
        include_err: bool,
    },
    /// Evaluate a checkpoint on a corpus directory; prints a JSON report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = DecodeArg::Best)]
        decode: DecodeArg,
        #[arg(long, default_value_t = 25)]
        beam_width: usize,
        #[arg(long)]
        include_err: bool,
    },
    /// Predict words for images (PNG or CDCT), optionally lexicon-corrected.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Input image files; .cdct files are fed as coefficients directly.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = DecodeArg::Best)]
        decode: DecodeArg,
        #[arg(long, default_value_t = 25)]
        beam_width: usize,
        /// Word list (one per line) for nearest-word correction.
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Run the built-in oracle suite; exit 0 iff every group passes.
    Selftest,
}

/// Optional TOML config for `train`; flags take precedence over file values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    epochs: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
    mode: Option<InputMode>,
    width: Option<String>,
}

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("CDHWR_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: CDHWR_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Compress { input, block, quality, output } => {
            cmd_compress(&input, &block, quality, &output)
        }
        Cmd::Preprocess { input, output } => cmd_preprocess(&input, &output),
        Cmd::GenToy { out, words, renders, seed } => cmd_gen_toy(&out, words, renders, seed),
        Cmd::Train {
            data,
            mode,
            epochs,
            batch,
            lr,
            seed,
            width,
            out,
            config,
            eval_on_train,
            include_err,
        } => cmd_train(
            &data, mode, epochs, batch, lr, seed, width, &out, config.as_deref(), eval_on_train,
            include_err,
        ),
        Cmd::Eval { model, data, decode, beam_width, include_err } => {
            cmd_eval(&model, &data, decode_mode(decode, beam_width), include_err)
        }
        Cmd::Predict { model, input, decode, beam_width, lexicon } => {
            cmd_predict(&model, &input, decode_mode(decode, beam_width), lexicon.as_deref())
        }
        Cmd::Selftest => selftest::run_all(),
    }
}

fn decode_mode(decode: DecodeArg, beam_width: usize) -> DecodeMode {
    match decode {
        DecodeArg::Best => DecodeMode::BestPath,
        DecodeArg::Beam => DecodeMode::Beam(beam_width),
    }
}

fn cmd_compress(input: &Path, block: &str, quality: Option<u8>, output: &Path) -> Result<()> {
    let block = match block {
        "4" => BlockSize::N4,
        _ => BlockSize::N8,
    };
    let img = load_gray(input)?;
    let plane = preprocess::<f32>(&img).into_plane();
    let dct = compress_plane_quality(&plane, block, quality).map_err(|e| anyhow::anyhow!("{e}"))?;
    cdct::write_file(output, &dct)?;

    let coeffs = dct.coeffs().data();
    let (mut min, mut max, mut sum_abs) = (f32::INFINITY, f32::NEG_INFINITY, 0.0f64);
    for &c in coeffs {
        min = min.min(c);
        max = max.max(c);
        sum_abs += c.abs() as f64;
    }
    println!(
        "wrote {}: block {}x{}, quantized {}, {} coefficients, min {:.4}, max {:.4}, mean |c| {:.4}",
        output.display(),
        block.n(),
        block.n(),
        dct.quantized(),
        coeffs.len(),
        min,
        max,
        sum_abs / coeffs.len() as f64
    );
    Ok(())
}

fn cmd_preprocess(input: &Path, output: &Path) -> Result<()> {
    let img = load_gray(input)?;
    let out = resize_pad(&contrast_stretch(&img));
    save_gray(output, &out)?;
    println!("wrote {} ({}x{})", output.display(), out.width(), out.height());
    Ok(())
}

fn cmd_gen_toy(out: &Path, words: usize, renders: usize, seed: u64) -> Result<()> {
    if words == 0 || words > TOY_WORDS.len() {
        bail!("--words must be between 1 and {}", TOY_WORDS.len());
    }
    if renders == 0 {
        bail!("--renders must be positive");
    }
    let samples = gen_toy(&TOY_WORDS[..words], renders, seed, &ToyParams::default())?;
    write_toy_dataset(out, &samples)?;
    println!("wrote {} samples ({} words x {} renders) under {}", samples.len(), words, renders, out.display());
    Ok(())
}

fn load_train_samples(dir: &Path, include_err: bool) -> Result<Vec<TrainSample>> {
    let index = dir.join("words.txt");
    let opts = LoadOptions { include_err, ..LoadOptions::default() };
    let (samples, stats) = data::load_corpus(&index, dir, &opts)?;
    eprintln!(
        "loaded {} samples ({} err skipped, {} infeasible, {} missing images)",
        stats.accepted, stats.skipped_err, stats.skipped_infeasible, stats.skipped_missing_image
    );
    if samples.is_empty() {
        bail!("no usable samples under {}", dir.display());
    }
    samples
        .into_iter()
        .map(|s| {
            Ok(TrainSample {
                image: load_gray(&s.path).with_context(|| format!("sample {}", s.id))?,
                id: s.id,
                transcription: s.transcription,
            })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data: &Path,
    mode: Option<ModeArg>,
    epochs: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
    width: Option<WidthArg>,
    out: &Path,
    config: Option<&Path>,
    eval_on_train: bool,
    include_err: bool,
) -> Result<()> {
    let file: FileConfig = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => FileConfig::default(),
    };
    let mode: InputMode = mode.map(InputMode::from).or(file.mode).unwrap_or(InputMode::Normal);
    let width = match width {
        Some(WidthArg::Full) => "full",
        Some(WidthArg::Reduced) => "reduced",
        None => file.width.as_deref().unwrap_or("full"),
    };
    let cfg = TrainConfig {
        epochs: epochs.or(file.epochs).unwrap_or(50),
        batch_size: batch.or(file.batch).unwrap_or(50),
        adam: AdamConfig {
            lr: lr.or(file.lr).unwrap_or(0.001),
            ..AdamConfig::default()
        },
        seed: seed.or(file.seed).unwrap_or(42),
        out_dir: Some(out.to_path_buf()),
        verbose: true,
        stop: None,
    };

    let samples = load_train_samples(data, include_err)?;
    let vocab = hwrc_core::vocab::CharVocab::build(
        samples.iter().map(|s| s.transcription.as_str()),
    )
    .map_err(|e| anyhow::anyhow!("{e}"))?;
    let net = match width {
        "reduced" => HwrcnetConfig::reduced(vocab.num_classes()),
        "full" => HwrcnetConfig::full(vocab.num_classes()),
        other => bail!("unknown model width {other:?} (full|reduced)"),
    };
    let time_steps = net.time_steps();

    let (train_samples, test_samples) = if eval_on_train {
        (samples.clone(), samples)
    } else {
        // Same seeded 95:5 protocol as data::split_95_5, over loaded samples.
        let mut idx: Vec<usize> = (0..samples.len()).collect();
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
        idx.shuffle(&mut rng);
        if samples.len() < 20 {
            bail!(
                "need at least 20 samples for a 95:5 split, got {} (use --eval-on-train for tiny sets)",
                samples.len()
            );
        }
        let n_test = (samples.len() / 20).max(1);
        let test: Vec<TrainSample> =
            idx[idx.len() - n_test..].iter().map(|&i| samples[i].clone()).collect();
        let train: Vec<TrainSample> =
            idx[..idx.len() - n_test].iter().map(|&i| samples[i].clone()).collect();
        (train, test)
    };
    eprintln!("training on {} samples, scoring {}", train_samples.len(), test_samples.len());

    let prepared_train = prepare(&train_samples, mode, &vocab, time_steps)?;
    let prepared_test = prepare(&test_samples, mode, &vocab, time_steps)?;

    let ckpt = init_checkpoint(net, vocab, mode, cfg.seed)?;
    let outcome = train::train_loop(ckpt, &prepared_train, &prepared_test, &cfg)?;

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    if outcome.log.is_empty() {
        // Zero epochs: still leave a usable checkpoint behind.
        checkpoint::save(&out.join("latest.ckpt"), &outcome.latest)?;
    } else {
        let losses: Vec<f64> = outcome.log.iter().map(|e| e.mean_loss).collect();
        let cers: Vec<f64> = outcome.log.iter().map(|e| e.cer).collect();
        plot::save_curve(&out.join("curve.png"), &losses, Some(&cers))?;
    }
    if let Some(last) = outcome.log.last() {
        println!(
            "done: {} epochs, final loss {:.4}, CER {:.2}, WA {:.2}, WAF {:.2}",
            outcome.log.len(),
            last.mean_loss,
            last.cer,
            last.wa,
            last.waf
        );
    } else {
        println!("done: wrote initial checkpoint to {}", out.join("latest.ckpt").display());
    }
    Ok(())
}

fn cmd_eval(model: &Path, data: &Path, decode: DecodeMode, include_err: bool) -> Result<()> {
    let ckpt = checkpoint::load(model)?;
    let samples = load_train_samples(data, include_err)?;
    let report = evaluate(&ckpt, &samples, ckpt.input_mode, decode)?;
    print_report(&report);
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!(
        "{}",
        serde_json::json!({
            "cer": r.cer,
            "wer": r.wer,
            "wa": r.wa,
            "waf": r.waf,
            "samples": r.samples,
            "gt_chars": r.gt_chars,
            "exact_matches": r.exact_matches,
            "within_two": r.within_two,
        })
    );
}

fn input_plane(path: &Path, ckpt: &Checkpoint) -> Result<hwrc_core::Tensor<f32>> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("cdct")) {
        let dct = cdct::read_file(path)?;
        match ckpt.input_mode.block_size() {
            Some(b) if b == dct.block_size() => Ok(dct.coeffs().clone()),
            _ => bail!(
                "{}: coefficient block size {} does not match model input mode {}",
                path.display(),
                dct.block_size().n(),
                ckpt.input_mode
            ),
        }
    } else {
        prepare_plane(&load_gray(path)?, ckpt.input_mode)
    }
}

fn cmd_predict(
    model: &Path,
    inputs: &[PathBuf],
    decode: DecodeMode,
    lexicon: Option<&Path>,
) -> Result<()> {
    let ckpt = checkpoint::load(model)?;
    let lexicon: Option<Vec<String>> = match lexicon {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading lexicon {}", path.display()))?;
            Some(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
        }
        None => None,
    };
    for path in inputs {
        let plane = input_plane(path, &ckpt)?;
        let lp = infer(&ckpt.params, &plane).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let raw = match decode {
            DecodeMode::BestPath => decode_best_path(&lp, &ckpt.vocab),
            DecodeMode::Beam(width) => decode_beam(&lp, &ckpt.vocab, width),
        };
        match &lexicon {
            Some(words) => {
                let corrected = lexicon_correct(&raw, words).unwrap_or(&raw);
                println!("{}\t{}\t{}", path.display(), raw, corrected);
            }
            None => println!("{}\t{}", path.display(), raw),
        }
    }
    Ok(())
}
