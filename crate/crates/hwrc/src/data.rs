//! Word-corpus ingestion. The index is the standard IAM `words.txt`
//! layout: space-separated fields per line --
//!
//! ```text
//! id seg graylevel x y w h tag transcription
//! ```
//!
//! where `id` is the hierarchical form-line-word identifier (for example
//! `a01-000u-00-00`), `seg` is `ok` or `err`, the four integers are the
//! bounding box, `tag` is the part-of-speech tag, and the transcription is
//! the final field. Images live at `root/<form prefix>/<form>/<id>.png`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hwrc_core::vocab::CharVocab;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Frames the model emits; transcriptions must be CTC-feasible at this
/// length.
pub const TIME_STEPS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub path: PathBuf,
    pub transcription: String,
    pub seg_ok: bool,
}

/// Conservative feasibility bound used for corpus filtering: the full
/// blank-interleaved lattice (2 len + 1 states, plus one frame per
/// adjacent repeat) must fit in the frame budget.
pub fn ctc_feasible(transcription: &str) -> bool {
    let chars: Vec<char> = transcription.chars().collect();
    let repeats = chars.windows(2).filter(|w| w[0] == w[1]).count();
    !chars.is_empty() && 2 * chars.len() + repeats + 1 <= TIME_STEPS
}

/// Derives `root/a01/a01-000u/a01-000u-00-00.png` from the sample id.
pub fn image_path(root: &Path, id: &str) -> Result<PathBuf> {
    let parts: Vec<&str> = id.split('-').collect();
    if parts.len() < 3 {
        bail!("sample id {id:?} is not of the form form-line-word");
    }
    let form = format!("{}-{}", parts[0], parts[1]);
    Ok(root.join(parts[0]).join(form).join(format!("{id}.png")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Keep samples whose segmentation is flagged `err`.
    pub include_err: bool,
    /// Drop transcriptions that cannot be emitted in 32 frames.
    pub enforce_feasible: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { include_err: false, enforce_feasible: true }
    }
}

#[derive(Debug, Default)]
pub struct LoadStats {
    pub accepted: usize,
    pub skipped_err: usize,
    pub skipped_infeasible: usize,
    pub skipped_missing_image: usize,
}

/// Parses one index line into (id, seg_ok, transcription).
fn parse_line(line: &str, lineno: usize) -> Result<(String, bool, String)> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 9 {
        bail!("line {lineno}: expected at least 9 fields, got {}", fields.len());
    }
    let seg_ok = match fields[1] {
        "ok" => true,
        "err" => false,
        other => bail!("line {lineno}: segmentation flag must be ok/err, got {other:?}"),
    };
    for (i, f) in fields[2..7].iter().enumerate() {
        if f.parse::<i64>().is_err() {
            bail!("line {lineno}: field {} ({f:?}) is not an integer", i + 3);
        }
    }
    let transcription = fields[8..].join(" ");
    if transcription.is_empty() {
        bail!("line {lineno}: empty transcription");
    }
    Ok((fields[0].to_string(), seg_ok, transcription))
}

/// Loads the corpus index; sample order follows the index file. Samples
/// whose image file is missing are skipped with a warning on stderr;
/// malformed lines are hard errors.
pub fn load_corpus(
    index_path: &Path,
    images_root: &Path,
    opts: &LoadOptions,
) -> Result<(Vec<Sample>, LoadStats)> {
    let text = fs::read_to_string(index_path)
        .with_context(|| format!("cannot read index {}", index_path.display()))?;
    let mut samples = Vec::new();
    let mut stats = LoadStats::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, seg_ok, transcription) = parse_line(line, i + 1)?;
        if !seg_ok && !opts.include_err {
            stats.skipped_err += 1;
            continue;
        }
        if opts.enforce_feasible && !ctc_feasible(&transcription) {
            stats.skipped_infeasible += 1;
            continue;
        }
        let path = image_path(images_root, &id)?;
        if !path.exists() {
            eprintln!("warning: skipping {id}: missing image {}", path.display());
            stats.skipped_missing_image += 1;
            continue;
        }
        samples.push(Sample { id, path, transcription, seg_ok });
        stats.accepted += 1;
    }
    Ok((samples, stats))
}

/// Builds the character vocabulary from the sample transcriptions.
pub fn build_vocab(samples: &[Sample]) -> Result<CharVocab> {
    CharVocab::build(samples.iter().map(|s| s.transcription.as_str()))
        .map_err(|e| anyhow::anyhow!("{e}"))
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub seed: u64,
}

/// Deterministic seeded shuffle, then 95:5; the test side gets at least
/// one sample (floor, minimum 1).
pub fn split_95_5(samples: &[Sample], seed: u64) -> Result<Split> {
    if samples.len() < 20 {
        bail!("need at least 20 samples to split 95:5, got {}", samples.len());
    }
    let mut shuffled = samples.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n_test = (samples.len() / 20).max(1);
    let test = shuffled.split_off(shuffled.len() - n_test);
    Ok(Split { train: shuffled, test, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs::File;

    #[test]
    fn parses_documented_example_line() {
        let (id, ok, tr) = parse_line("a01-000u-00-00 ok 154 408 768 27 51 AT A", 1).unwrap();
        assert_eq!(id, "a01-000u-00-00");
        assert!(ok);
        assert_eq!(tr, "A");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_line("a01-000u-00-00 ok 154", 17).unwrap_err();
        assert!(format!("{err}").contains("line 17"));
    }

    #[test]
    fn feasibility_rule() {
        assert!(ctc_feasible("a"));
        assert!(ctc_feasible("abcdefghijklmno")); // 15 chars, 31 <= 32
        assert!(!ctc_feasible("abcdefghijklmnop")); // 16 chars, 33 > 32
        assert!(ctc_feasible("aabbccddeegg")); // 12 chars + 6 repeats = 31
        assert!(!ctc_feasible("aabbccddeeggh")); // 13 + 6 -> 33
        assert!(!ctc_feasible(""));
    }

    #[test]
    fn image_path_follows_hierarchy() {
        let p = image_path(Path::new("/data"), "a01-000u-00-00").unwrap();
        assert_eq!(p, Path::new("/data/a01/a01-000u/a01-000u-00-00.png"));
        assert!(image_path(Path::new("/data"), "bad").is_err());
    }

    fn write_corpus(dir: &Path, lines: &[&str], ids_with_images: &[&str]) -> PathBuf {
        let index = dir.join("words.txt");
        fs::write(&index, lines.join("\n")).unwrap();
        for id in ids_with_images {
            let p = image_path(dir, id).unwrap();
            fs::create_dir_all(p.parent().unwrap()).unwrap();
            File::create(p).unwrap();
        }
        index
    }

    #[test]
    fn loader_filters_and_orders() {
        let dir = tempfile::tempdir().unwrap();
        let index = write_corpus(
            dir.path(),
            &[
                "# comment",
                "a01-000u-00-00 ok 154 408 768 27 51 AT the",
                "a01-000u-00-01 err 154 408 768 27 51 AT cat",
                "a01-000u-00-02 ok 154 408 768 27 51 AT abcdefghijklmnop",
                "a01-000u-00-03 ok 154 408 768 27 51 AT gone",
                "a01-000u-00-04 ok 154 408 768 27 51 AT lost",
            ],
            &["a01-000u-00-00", "a01-000u-00-01", "a01-000u-00-02", "a01-000u-00-03"],
        );
        let (samples, stats) =
            load_corpus(&index, dir.path(), &LoadOptions::default()).unwrap();
        let ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["a01-000u-00-00", "a01-000u-00-03"]);
        assert_eq!(stats.skipped_err, 1);
        assert_eq!(stats.skipped_infeasible, 1);
        assert_eq!(stats.skipped_missing_image, 1);

        // err samples come back with include_err.
        let opts = LoadOptions { include_err: true, ..LoadOptions::default() };
        let (samples, _) = load_corpus(&index, dir.path(), &opts).unwrap();
        assert_eq!(samples.len(), 3);
    }

    #[test]
    fn loader_rejects_malformed_line() {
        let dir = tempfile::tempdir().unwrap();
        let index = write_corpus(dir.path(), &["a01-000u-00-00 maybe 1 2 3 4 5 AT x"], &[]);
        let err = load_corpus(&index, dir.path(), &LoadOptions::default()).unwrap_err();
        assert!(format!("{err}").contains("line 1"));
    }

    fn fake_samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                id: format!("x{i:02}-000-00-00"),
                path: PathBuf::from("/dev/null"),
                transcription: format!("w{i}"),
                seg_ok: true,
            })
            .collect()
    }

    #[test]
    fn split_ratios_and_determinism() {
        let s = fake_samples(100);
        let a = split_95_5(&s, 3).unwrap();
        assert_eq!((a.train.len(), a.test.len()), (95, 5));
        let b = split_95_5(&s, 3).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let c = split_95_5(&s, 4).unwrap();
        assert_ne!(a.train, c.train);

        let tiny = split_95_5(&fake_samples(20), 1).unwrap();
        assert_eq!((tiny.train.len(), tiny.test.len()), (19, 1));
        assert!(split_95_5(&fake_samples(19), 1).is_err());

        // Disjoint union covers the corpus.
        let mut all: Vec<String> = a.train.iter().chain(&a.test).map(|s| s.id.clone()).collect();
        all.sort();
        let mut expect: Vec<String> = s.iter().map(|s| s.id.clone()).collect();
        expect.sort();
        assert_eq!(all, expect);
    }

    #[test]
    fn vocab_from_samples() {
        let mut s = fake_samples(2);
        s[0].transcription = "ab".into();
        s[1].transcription = "ba".into();
        let v = build_vocab(&s).unwrap();
        assert_eq!(v.as_string(), "ab");
        assert_eq!(v.blank(), 2);
    }
}
