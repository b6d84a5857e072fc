//! Fast built-in oracle suite behind `hwrc selftest`: each group re-derives
//! expected values independently (closed forms, brute-force enumeration,
//! finite differences) and checks the library against them.

use anyhow::{ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hwrc_core::ctc::{ctc_grad, ctc_loss, collapse};
use hwrc_core::dct::{forward_block_dct, inverse_block_dct, BlockSize};
use hwrc_core::metrics::{cer, edit_distance, wa_waf};
use hwrc_core::network::{model_forward, HwrcnetConfig, Mode, ModelParams};
use hwrc_core::tape::Tape;
use hwrc_core::Tensor;

pub struct Group {
    pub name: &'static str,
    pub run: fn() -> Result<()>,
}

pub const GROUPS: &[Group] = &[
    Group { name: "dct-roundtrip", run: dct_roundtrip },
    Group { name: "ctc-bruteforce", run: ctc_bruteforce },
    Group { name: "metrics-oracle", run: metrics_oracle },
    Group { name: "gradient-check", run: gradient_check },
];

fn dct_roundtrip() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for block in [BlockSize::N8, BlockSize::N4] {
        let n = block.n();
        for _ in 0..200 {
            let data: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b = Tensor::new(vec![n, n], data)?;
            let back = inverse_block_dct(&forward_block_dct(&b, block)?, block)?;
            for (x, y) in b.data().iter().zip(back.data()) {
                ensure!((x - y).abs() < 1e-10, "{n}x{n} round trip off by {}", (x - y).abs());
            }
        }
        // Constant block: only the DC coefficient survives, with a known value.
        let v = 0.6875f64;
        let c = forward_block_dct(&Tensor::full(&[n, n], v), block)?;
        let expect_dc = if n == 8 { 8.0 * v } else { 2.0 * core::f64::consts::SQRT_2 * v };
        ensure!((c.at2(0, 0) - expect_dc).abs() < 1e-10, "DC {} vs {expect_dc}", c.at2(0, 0));
        for (i, &x) in c.data().iter().enumerate().skip(1) {
            ensure!(x.abs() < 1e-10, "AC coefficient {i} is {x}, expected 0");
        }
    }
    Ok(())
}

/// Sums the probability of every length-T class path that collapses to the
/// label; the library loss must satisfy exp(-loss) == that sum.
fn brute_force_prob(log_probs: &Tensor<f64>, label: &[usize], blank: usize) -> f64 {
    let (t, c) = (log_probs.shape()[0], log_probs.shape()[1]);
    let mut total = 0.0;
    let mut path = vec![0usize; t];
    loop {
        if collapse(&path, blank) == label {
            let lp: f64 = path.iter().enumerate().map(|(i, &k)| log_probs.at2(i, k)).sum();
            total += lp.exp();
        }
        // Odometer increment over the C^T path space.
        let mut i = 0;
        loop {
            if i == t {
                return total;
            }
            path[i] += 1;
            if path[i] < c {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

fn random_log_probs(rng: &mut ChaCha8Rng, t: usize, c: usize) -> Tensor<f64> {
    let mut lp = Tensor::<f64>::zeros(&[t, c]);
    for i in 0..t {
        let logits: Vec<f64> = (0..c).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lse = logits.iter().map(|x| x.exp()).sum::<f64>().ln();
        for (j, &x) in logits.iter().enumerate() {
            let idx = lp.idx2(i, j);
            lp.data_mut()[idx] = x - lse;
        }
    }
    lp
}

fn ctc_bruteforce() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    while checked < 40 {
        let t = rng.gen_range(2..=5usize);
        let c = rng.gen_range(2..=3usize);
        let u = rng.gen_range(1..=2usize);
        let label: Vec<usize> = (0..u).map(|_| rng.gen_range(0..c - 1)).collect();
        if hwrc_core::ctc::min_frames(&label) > t {
            continue;
        }
        let lp = random_log_probs(&mut rng, t, c);
        let loss = ctc_loss(&lp, &label).map_err(|e| anyhow::anyhow!("{e}"))?;
        let oracle = brute_force_prob(&lp, &label, c - 1);
        ensure!(
            ((-loss).exp() - oracle).abs() < 1e-10,
            "T={t} C={c} label={label:?}: exp(-loss)={} oracle={oracle}",
            (-loss).exp()
        );
        checked += 1;
    }
    Ok(())
}

fn edit_distance_recursive(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let sub = edit_distance_recursive(&a[1..], &b[1..]) + usize::from(a[0] != b[0]);
    let del = edit_distance_recursive(&a[1..], b) + 1;
    let ins = edit_distance_recursive(a, &b[1..]) + 1;
    sub.min(del).min(ins)
}

fn metrics_oracle() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let alphabet = ['a', 'b', 'c'];
    for _ in 0..200 {
        let mk = |rng: &mut ChaCha8Rng| -> String {
            let n = rng.gen_range(0..=5usize);
            (0..n).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
        };
        let (a, b) = (mk(&mut rng), mk(&mut rng));
        let fast = edit_distance(&a, &b);
        let slow = edit_distance_recursive(
            &a.chars().collect::<Vec<_>>(),
            &b.chars().collect::<Vec<_>>(),
        );
        ensure!(fast == slow, "distance({a:?},{b:?}) = {fast}, oracle {slow}");
        ensure!(fast == edit_distance(&b, &a), "distance is not symmetric on ({a:?},{b:?})");
        ensure!(edit_distance(&a, &a) == 0, "distance({a:?},{a:?}) != 0");
    }
    let pairs: Vec<(String, String)> = vec![
        ("word".into(), "word".into()),
        ("it".into(), "it".into()),
        ("on".into(), "on".into()),
        ("deep".into(), "dp".into()),
    ];
    let (wa, waf) = wa_waf(&pairs).map_err(|e| anyhow::anyhow!("{e}"))?;
    ensure!(wa == 75.0 && waf == 100.0, "WA/WAF fixture gave ({wa},{waf})");
    ensure!((100.0 - wa) == 25.0, "WER identity broken");
    let c = cer(&[("ab".into(), "ab".into()), ("cd".into(), "ce".into())])
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    ensure!(c == 25.0, "CER fixture gave {c}");
    Ok(())
}

fn tiny_loss(params: &ModelParams<f64>, label: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let mut x = Tensor::<f64>::zeros(&[16, 8]);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        *v = ((i * 37 % 101) as f64) / 101.0;
    }
    let x = tape.leaf(x);
    let out = model_forward(&mut tape, params, &bound, x, Mode::Train)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let loss = hwrc_core::ctc::ctc_loss_node(&mut tape, out.log_probs, label)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(tape.value(loss).item())
}

fn gradient_check() -> Result<()> {
    // CTC gradient against central finite differences.
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..5 {
        let lp = random_log_probs(&mut rng, 6, 4);
        let label = vec![0usize, 2, 1];
        let g = ctc_grad(&lp, &label).map_err(|e| anyhow::anyhow!("{e}"))?;
        let h = 1e-6;
        for i in 0..lp.len() {
            let mut plus = lp.clone();
            plus.data_mut()[i] += h;
            let mut minus = lp.clone();
            minus.data_mut()[i] -= h;
            let fd = (ctc_loss(&plus, &label).map_err(|e| anyhow::anyhow!("{e}"))?
                - ctc_loss(&minus, &label).map_err(|e| anyhow::anyhow!("{e}"))?)
                / (2.0 * h);
            let ga = g.data()[i];
            let err = (ga - fd).abs() / 1.0f64.max(ga.abs()).max(fd.abs());
            ensure!(err < 1e-6, "ctc grad coord {i}: ad={ga} fd={fd} err={err}");
        }
    }

    // End-to-end network gradient, sampled coordinates only (the exhaustive
    // sweep lives in the slower test suite).
    let config = HwrcnetConfig {
        input_w: 16,
        input_h: 8,
        maps: vec![4, 8, 8, 8, 16],
        kernels: vec![5, 5, 3, 3, 3],
        pools: vec![(2, 2), (2, 2), (1, 2), (1, 1), (1, 1)],
        bn_stage: 2,
        hidden: 16,
        num_classes: 8,
    };
    let params = ModelParams::<f64>::init(config, 5).map_err(|e| anyhow::anyhow!("{e}"))?;
    let label = vec![1usize, 3];

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let mut x = Tensor::<f64>::zeros(&[16, 8]);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        *v = ((i * 37 % 101) as f64) / 101.0;
    }
    let x = tape.leaf(x);
    let out = model_forward(&mut tape, &params, &bound, x, Mode::Train)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let loss = hwrc_core::ctc::ctc_loss_node(&mut tape, out.log_probs, &label)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let grads = tape.backward(loss).map_err(|e| anyhow::anyhow!("{e}"))?;

    let h = 1e-5;
    for probe in 0..24 {
        let ti = rng.gen_range(0..params.tensors().len());
        let ci = rng.gen_range(0..params.tensors()[ti].len());
        let ga = grads.get(bound.vars()[ti]).data()[ci];
        let mut plus = params.clone();
        plus.tensors_mut()[ti].data_mut()[ci] += h;
        let mut minus = params.clone();
        minus.tensors_mut()[ti].data_mut()[ci] -= h;
        let fd = (tiny_loss(&plus, &label)? - tiny_loss(&minus, &label)?) / (2.0 * h);
        let err = (ga - fd).abs() / 1.0f64.max(ga.abs()).max(fd.abs());
        ensure!(err < 1e-4, "network grad probe {probe} ({ti}/{ci}): ad={ga} fd={fd} err={err}");
    }
    Ok(())
}

/// Runs all groups, printing one line each; Ok iff all pass.
pub fn run_all() -> Result<()> {
    let mut failed = 0;
    for g in GROUPS {
        match (g.run)() {
            Ok(()) => println!("{:<16} PASS", g.name),
            Err(e) => {
                println!("{:<16} FAIL: {e}", g.name);
                failed += 1;
            }
        }
    }
    anyhow::ensure!(failed == 0, "{failed} selftest group(s) failed");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_groups_pass() {
        for g in GROUPS {
            (g.run)().unwrap_or_else(|e| panic!("group {} failed: {e}", g.name));
        }
    }

    #[test]
    fn brute_force_matches_hand_computed_case() {
        // T=2, C=2 (one symbol + blank), label [0]: paths 00x, collapse
        // targets are (0,blank), (blank,0), (0,0).
        let lp = random_log_probs(&mut ChaCha8Rng::seed_from_u64(1), 2, 2);
        let p = |i: usize, j: usize| lp.at2(i, j).exp();
        let expect = p(0, 0) * p(1, 1) + p(0, 1) * p(1, 0) + p(0, 0) * p(1, 0);
        assert!((brute_force_prob(&lp, &[0], 1) - expect).abs() < 1e-12);
    }
}
