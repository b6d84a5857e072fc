//! Synthetic word dataset: renders words with the embedded 5x7 font onto
//! white canvases with seeded jitter and noise, and writes them to disk in
//! the same directory/index layout the IAM loader reads, so both corpora
//! flow through one loader.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use hwrc_core::preprocess::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::font::{self, GLYPH_H, GLYPH_W};
use crate::image_io::save_gray;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyParams {
    /// Base glyph pixel scale.
    pub scale: usize,
    /// Extra scale added uniformly in 0..=scale_jitter per word.
    pub scale_jitter: usize,
    /// Base horizontal gap between characters, in pixels.
    pub spacing: usize,
    /// Extra gap added uniformly in 0..=spacing_jitter per character.
    pub spacing_jitter: usize,
    /// Per-character vertical offset drawn uniformly in 0..=y_jitter.
    pub y_jitter: usize,
    /// Probability of flipping a pixel to salt or pepper.
    pub noise: f64,
    pub margin: usize,
}

impl Default for ToyParams {
    fn default() -> Self {
        ToyParams {
            scale: 3,
            scale_jitter: 1,
            spacing: 3,
            spacing_jitter: 2,
            y_jitter: 3,
            noise: 0.003,
            margin: 4,
        }
    }
}

impl ToyParams {
    /// No randomness at all: identical renders for identical words.
    pub fn rigid() -> Self {
        ToyParams {
            scale_jitter: 0,
            spacing_jitter: 0,
            y_jitter: 0,
            noise: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    pub id: String,
    pub image: GrayImage,
    pub word: String,
}

/// Renders one word; ink is black (0) on a white (255) canvas.
pub fn render_word(word: &str, params: &ToyParams, rng: &mut ChaCha8Rng) -> Result<GrayImage> {
    if word.is_empty() {
        bail!("cannot render an empty word");
    }
    if !font::covers(word) {
        bail!("word {word:?} uses characters outside the embedded font");
    }
    let s = params.scale + rng.gen_range(0..=params.scale_jitter);
    let n = word.chars().count();
    let gaps: Vec<usize> = (0..n)
        .map(|_| params.spacing + rng.gen_range(0..=params.spacing_jitter))
        .collect();
    let offsets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..=params.y_jitter)).collect();

    let width = 2 * params.margin + n * GLYPH_W * s + gaps[..n - 1].iter().sum::<usize>();
    let height = 2 * params.margin + GLYPH_H * s + params.y_jitter;
    let mut img = GrayImage::filled(width, height, 255);

    let mut x0 = params.margin;
    for (ci, ch) in word.chars().enumerate() {
        let rows = font::glyph(ch).expect("coverage checked above");
        let y0 = params.margin + offsets[ci];
        for (gy, row) in rows.iter().enumerate() {
            for gx in 0..GLYPH_W {
                if row & (1 << (GLYPH_W - 1 - gx)) != 0 {
                    for dy in 0..s {
                        for dx in 0..s {
                            img.set(x0 + gx * s + dx, y0 + gy * s + dy, 0);
                        }
                    }
                }
            }
        }
        x0 += GLYPH_W * s + if ci + 1 < n { gaps[ci] } else { 0 };
    }

    if params.noise > 0.0 {
        for y in 0..height {
            for x in 0..width {
                if rng.gen::<f64>() < params.noise {
                    img.set(x, y, if rng.gen::<bool>() { 0 } else { 255 });
                }
            }
        }
    }
    Ok(img)
}

/// Renders `samples_per_word` jittered copies of each word. Sample ids
/// follow the hierarchical form-line-word scheme the corpus loader expects.
pub fn gen_toy(
    words: &[&str],
    samples_per_word: usize,
    seed: u64,
    params: &ToyParams,
) -> Result<Vec<ToySample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(words.len() * samples_per_word);
    for (wi, word) in words.iter().enumerate() {
        for r in 0..samples_per_word {
            let image = render_word(word, params, &mut rng)
                .with_context(|| format!("rendering word {wi} ({word:?})"))?;
            out.push(ToySample {
                id: format!("t{wi:02}-{r:03}-00-00"),
                image,
                word: (*word).to_string(),
            });
        }
    }
    Ok(out)
}

/// Writes PNGs under `root` using the form/line hierarchy plus a
/// `words.txt` index in the standard layout.
pub fn write_toy_dataset(root: &Path, samples: &[ToySample]) -> Result<()> {
    let mut index = String::new();
    index.push_str("# synthetic word corpus\n");
    for s in samples {
        let parts: Vec<&str> = s.id.split('-').collect();
        anyhow::ensure!(parts.len() >= 3, "bad toy id {}", s.id);
        let form = format!("{}-{}", parts[0], parts[1]);
        let dir = root.join(parts[0]).join(&form);
        fs::create_dir_all(&dir)
            .with_context(|| format!("creating {}", dir.display()))?;
        save_gray(&dir.join(format!("{}.png", s.id)), &s.image)?;
        index.push_str(&format!(
            "{} ok 128 0 0 {} {} XX {}\n",
            s.id,
            s.image.width(),
            s.image.height(),
            s.word
        ));
    }
    fs::write(root.join("words.txt"), index)
        .with_context(|| format!("writing index under {}", root.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_renders() {
        let words = ["cat", "dog"];
        let a = gen_toy(&words, 3, 7, &ToyParams::default()).unwrap();
        let b = gen_toy(&words, 3, 7, &ToyParams::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
    }

    #[test]
    fn rigid_params_make_identical_copies_per_word() {
        let samples = gen_toy(&["hill"], 4, 1, &ToyParams::rigid()).unwrap();
        for s in &samples[1..] {
            assert_eq!(s.image, samples[0].image);
        }
    }

    #[test]
    fn longer_words_render_wider() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ToyParams::rigid();
        let a = render_word("a", &p, &mut rng).unwrap();
        let ab = render_word("ab", &p, &mut rng).unwrap();
        assert!(ab.width() > a.width());
    }

    #[test]
    fn unsupported_characters_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(render_word("Hi", &ToyParams::rigid(), &mut rng).is_err());
        assert!(render_word("", &ToyParams::rigid(), &mut rng).is_err());
    }

    #[test]
    fn renders_contain_ink() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = render_word("ink", &ToyParams::default(), &mut rng).unwrap();
        assert!(img.pixels().iter().any(|&p| p == 0));
        assert!(img.pixels().iter().any(|&p| p == 255));
    }

    #[test]
    fn dataset_files_land_in_hierarchical_layout() {
        let dir = tempfile::tempdir().unwrap();
        let samples = gen_toy(&["ab"], 2, 5, &ToyParams::rigid()).unwrap();
        write_toy_dataset(dir.path(), &samples).unwrap();
        assert!(dir.path().join("words.txt").exists());
        assert!(dir.path().join("t00/t00-000/t00-000-00-00.png").exists());
        assert!(dir.path().join("t00/t00-001/t00-001-00-00.png").exists());
    }
}
