//! Randomized invariant checks over the numerics core.

use proptest::prelude::*;

use hwrc_core::ctc::{collapse, ctc_loss, min_frames};
use hwrc_core::dct::{forward_block_dct, inverse_block_dct, BlockSize};
use hwrc_core::metrics::edit_distance;
use hwrc_core::preprocess::{contrast_stretch, GrayImage};
use hwrc_core::vocab::CharVocab;
use hwrc_core::Tensor;

fn block_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n * n)
}

proptest! {
    #[test]
    fn dct_round_trip_is_identity(data in block_strategy(8)) {
        let b = Tensor::new(vec![8, 8], data).unwrap();
        let c = forward_block_dct(&b, BlockSize::N8).unwrap();
        let back = inverse_block_dct(&c, BlockSize::N8).unwrap();
        for (x, y) in b.data().iter().zip(back.data()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn dct_preserves_energy(data in block_strategy(4)) {
        // The scaled basis is orthogonal up to the global gram factor
        // lambda^2 = N/8, so ||C||^2 == (N/8) ||B||^2.
        let b = Tensor::new(vec![4, 4], data).unwrap();
        let c = forward_block_dct(&b, BlockSize::N4).unwrap();
        let eb: f64 = b.data().iter().map(|x| x * x).sum();
        let ec: f64 = c.data().iter().map(|x| x * x).sum();
        prop_assert!((ec - eb * 0.5).abs() < 1e-9, "{ec} vs {}", eb * 0.5);
    }

    #[test]
    fn edit_distance_is_a_metric(
        a in "[abc]{0,8}",
        b in "[abc]{0,8}",
        c in "[abc]{0,8}",
    ) {
        let dab = edit_distance(&a, &b);
        prop_assert_eq!(dab, edit_distance(&b, &a));
        prop_assert_eq!(edit_distance(&a, &a), 0);
        prop_assert!(dab <= edit_distance(&a, &c) + edit_distance(&c, &b));
        // Bounds: at least the length difference, at most the longer length.
        let (la, lb) = (a.chars().count(), b.chars().count());
        prop_assert!(dab >= la.abs_diff(lb));
        prop_assert!(dab <= la.max(lb));
    }

    #[test]
    fn collapse_matches_dedup_then_strip_oracle(path in prop::collection::vec(0usize..4, 0..12)) {
        // Collapse = drop repeated symbols first, then drop blanks; a blank
        // between repeats keeps both ([a, blank, a] -> [a, a]).
        let blank = 3;
        let out = collapse(&path, blank);
        let mut oracle: Vec<usize> = Vec::new();
        let mut prev = None;
        for &s in &path {
            if Some(s) != prev && s != blank {
                oracle.push(s);
            }
            prev = Some(s);
        }
        prop_assert_eq!(out, oracle);
    }

    #[test]
    fn collapse_of_a_label_is_identity(label in prop::collection::vec(0usize..3, 0..8)) {
        // Labels never contain the blank; runs of equal symbols shrink to one.
        let blank = 3;
        let out = collapse(&label, blank);
        prop_assert!(!out.contains(&blank));
        prop_assert!(out.windows(2).all(|w| w[0] != w[1]));
        prop_assert_eq!(collapse(&out, blank), out);
    }

    #[test]
    fn vocab_encode_decode_round_trips(s in "[a-f]{1,10}") {
        let vocab = CharVocab::build(["abcdef"]).unwrap();
        let encoded = vocab.encode(&s).unwrap();
        prop_assert!(encoded.iter().all(|&i| i < vocab.blank()));
        prop_assert_eq!(vocab.decode(&encoded).unwrap(), s);
    }

    #[test]
    fn contrast_stretch_spans_range_and_keeps_order(
        pixels in prop::collection::vec(0u8..=255, 4..64),
    ) {
        let w = pixels.len();
        let img = GrayImage::new(w, 1, pixels.clone()).unwrap();
        let out = contrast_stretch(&img);
        let constant = pixels.iter().all(|&p| p == pixels[0]);
        if !constant {
            prop_assert_eq!(*out.pixels().iter().min().unwrap(), 0);
            prop_assert_eq!(*out.pixels().iter().max().unwrap(), 255);
        }
        for i in 0..w {
            for j in 0..w {
                if pixels[i] <= pixels[j] {
                    prop_assert!(out.pixels()[i] <= out.pixels()[j]);
                }
            }
        }
    }

    #[test]
    fn ctc_loss_is_a_valid_negative_log_probability(
        logits in prop::collection::vec(-3.0f64..3.0, 6 * 3),
        label in prop::collection::vec(0usize..2, 1..3),
    ) {
        let mut lp = Tensor::new(vec![6, 3], logits).unwrap();
        for t in 0..6 {
            let lse: f64 = (0..3).map(|j| lp.at2(t, j).exp()).sum::<f64>().ln();
            for j in 0..3 {
                let idx = lp.idx2(t, j);
                lp.data_mut()[idx] -= lse;
            }
        }
        prop_assume!(min_frames(&label) <= 6);
        let loss = ctc_loss(&lp, &label).unwrap();
        prop_assert!(loss.is_finite());
        prop_assert!(loss >= 0.0, "exp(-loss) must be a probability, loss {loss}");
    }
}
