//! Connectionist Temporal Classification: log-space forward-backward loss,
//! analytic gradient, and best-path / prefix-beam / lexicon-corrected
//! decoding.
//!
//! The blank class is always the last index (`C - 1`). The loss marginalizes
//! over every frame-label path that collapses (adjacent repeats merged,
//! blanks dropped) to the target label; the gradient with respect to
//! per-frame log-probabilities is minus the symbol-occupancy posterior.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::metrics::edit_distance;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor, TensorError};
use crate::vocab::CharVocab;

#[derive(Debug, Clone, PartialEq)]
pub enum CtcError {
    /// The label cannot be emitted in the available frames: every symbol
    /// needs a frame and every adjacent repeat needs a separating blank.
    Infeasible { frames: usize, needed: usize },
    /// A label index collides with the blank or exceeds the class count.
    BadLabel { index: usize, num_classes: usize },
    /// Wrong log-prob tensor shape.
    BadShape { got: Vec<usize> },
    Tensor(TensorError),
}

impl fmt::Display for CtcError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CtcError::Infeasible { frames, needed } => write!(
                f,
                "label needs at least {needed} frames but only {frames} are available"
            ),
            CtcError::BadLabel { index, num_classes } => write!(
                f,
                "label index {index} invalid for {num_classes} classes (blank is last)"
            ),
            CtcError::BadShape { got } => {
                write!(f, "expected a [T, C] log-prob tensor with C >= 2, got {got:?}")
            }
            CtcError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for CtcError {}

impl From<TensorError> for CtcError {
    fn from(e: TensorError) -> Self {
        CtcError::Tensor(e)
    }
}

fn log_add<T: Scalar>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Minimum frame count for a label: one frame per symbol plus one separating
/// blank per adjacent repeat.
pub fn min_frames(label: &[usize]) -> usize {
    let repeats = label.windows(2).filter(|w| w[0] == w[1]).count();
    label.len() + repeats
}

fn validate<T: Scalar>(log_probs: &Tensor<T>, label: &[usize]) -> Result<(usize, usize), CtcError> {
    let shape = log_probs.shape();
    if shape.len() != 2 || shape[1] < 2 {
        return Err(CtcError::BadShape { got: shape.to_vec() });
    }
    let (t, c) = (shape[0], shape[1]);
    for &l in label {
        if l >= c - 1 {
            return Err(CtcError::BadLabel { index: l, num_classes: c });
        }
    }
    let needed = min_frames(label);
    if needed > t {
        return Err(CtcError::Infeasible { frames: t, needed });
    }
    Ok((t, c))
}

/// Blank-interleaved extended label: blank, l0, blank, l1, ..., blank.
fn extend(label: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * label.len() + 1);
    ext.push(blank);
    for &l in label {
        ext.push(l);
        ext.push(blank);
    }
    ext
}

/// Loss and per-frame symbol occupancy in one forward-backward sweep.
/// The occupancy rows sum to one; the loss gradient with respect to
/// `log_probs` is the negated occupancy.
pub fn ctc_forward_backward<T: Scalar>(
    log_probs: &Tensor<T>,
    label: &[usize],
) -> Result<(T, Tensor<T>), CtcError> {
    let (t_len, c) = validate(log_probs, label)?;
    let blank = c - 1;
    let ext = extend(label, blank);
    let s_len = ext.len();
    let ninf = T::neg_infinity();

    // Whether lattice state s may step directly from s-2 (skipping a blank):
    // allowed when ext[s] is a symbol differing from ext[s-2].
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let lp = |t: usize, s: usize| log_probs.at2(t, ext[s]);

    // Alpha: emission at frame t included.
    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = lp(0, 0);
    if s_len > 1 {
        alpha[1] = lp(0, 1);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                a = log_add(a, alpha[(t - 1) * s_len + s - 1]);
            }
            if can_skip(s) {
                a = log_add(a, alpha[(t - 1) * s_len + s - 2]);
            }
            alpha[t * s_len + s] = if a == ninf { ninf } else { a + lp(t, s) };
        }
    }
    let mut log_p = alpha[(t_len - 1) * s_len + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[(t_len - 1) * s_len + s_len - 2]);
    }
    if log_p == ninf || !log_p.is_finite() {
        // Unreachable under the feasibility check unless inputs were -inf.
        return Err(CtcError::Tensor(TensorError::NonFinite { op: "ctc_loss" }));
    }

    // Beta: emission at frame t included, so alpha*beta/emission marginalizes
    // the path probability through (t, s).
    let mut beta = vec![ninf; t_len * s_len];
    beta[(t_len - 1) * s_len + s_len - 1] = lp(t_len - 1, s_len - 1);
    if s_len > 1 {
        beta[(t_len - 1) * s_len + s_len - 2] = lp(t_len - 1, s_len - 2);
    }
    for t in (0..t_len.saturating_sub(1)).rev() {
        for s in 0..s_len {
            let mut b = beta[(t + 1) * s_len + s];
            if s + 1 < s_len {
                b = log_add(b, beta[(t + 1) * s_len + s + 1]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = log_add(b, beta[(t + 1) * s_len + s + 2]);
            }
            beta[t * s_len + s] = if b == ninf { ninf } else { b + lp(t, s) };
        }
    }

    let mut occupancy = Tensor::zeros(&[t_len, c]);
    for t in 0..t_len {
        for s in 0..s_len {
            let a = alpha[t * s_len + s];
            let b = beta[t * s_len + s];
            if a == ninf || b == ninf {
                continue;
            }
            let g = (a + b - lp(t, s) - log_p).exp();
            let idx = occupancy.idx2(t, ext[s]);
            occupancy.data_mut()[idx] = occupancy.data()[idx] + g;
        }
    }

    Ok((-log_p, occupancy))
}

/// Negative log likelihood of the label under the per-frame log-probs.
pub fn ctc_loss<T: Scalar>(log_probs: &Tensor<T>, label: &[usize]) -> Result<T, CtcError> {
    ctc_forward_backward(log_probs, label).map(|(loss, _)| loss)
}

/// Gradient of `ctc_loss` with respect to `log_probs` (minus the occupancy).
pub fn ctc_grad<T: Scalar>(log_probs: &Tensor<T>, label: &[usize]) -> Result<Tensor<T>, CtcError> {
    let (_, mut occ) = ctc_forward_backward(log_probs, label)?;
    occ.scale_in_place(-T::one());
    Ok(occ)
}

/// Records the CTC loss as a differentiable tape node over `log_probs`.
pub fn ctc_loss_node<T: Scalar>(
    tape: &mut Tape<T>,
    log_probs: Var,
    label: &[usize],
) -> Result<Var, CtcError> {
    let (loss, occ) = ctc_forward_backward(tape.value(log_probs), label)?;
    let in_id = log_probs.id();
    let out = tape.push_custom(
        "ctc_loss",
        Tensor::scalar(loss),
        Box::new(move |_vals, out_grad, earlier| {
            let g = out_grad.item();
            for (dst, &o) in earlier[in_id].data_mut().iter_mut().zip(occ.data()) {
                *dst = *dst - g * o;
            }
        }),
    )?;
    Ok(out)
}

fn argmax_row<T: Scalar>(log_probs: &Tensor<T>, t: usize) -> usize {
    let c = log_probs.shape()[1];
    let mut best = 0;
    for j in 1..c {
        if log_probs.at2(t, j) > log_probs.at2(t, best) {
            best = j;
        }
    }
    best
}

/// Collapses a frame-label path: merge adjacent repeats, drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != blank {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Greedy decoding: per-frame argmax, collapse, map to characters.
pub fn decode_best_path<T: Scalar>(log_probs: &Tensor<T>, vocab: &CharVocab) -> String {
    let t_len = log_probs.shape()[0];
    let path: Vec<usize> = (0..t_len).map(|t| argmax_row(log_probs, t)).collect();
    let ids = collapse(&path, vocab.blank());
    vocab.decode(&ids).expect("collapsed path indices are in-vocabulary")
}

/// Prefix beam search over collapsed labelings; scores are pure posteriors,
/// ties broken lexicographically by prefix.
pub fn decode_beam<T: Scalar>(
    log_probs: &Tensor<T>,
    vocab: &CharVocab,
    beam_width: usize,
) -> String {
    let beam_width = beam_width.max(1);
    let t_len = log_probs.shape()[0];
    let c = log_probs.shape()[1];
    let blank = c - 1;
    let ninf = f64::NEG_INFINITY;

    // Each beam entry: (prefix, log p ending in blank, log p ending in symbol).
    let mut beams: Vec<(Vec<usize>, f64, f64)> = vec![(Vec::new(), 0.0, ninf)];
    for t in 0..t_len {
        let row: Vec<f64> = (0..c).map(|j| log_probs.at2(t, j).as_f64()).collect();
        let mut next: Vec<(Vec<usize>, f64, f64)> = Vec::new();
        let slot = |next: &mut Vec<(Vec<usize>, f64, f64)>, prefix: &[usize]| -> usize {
            match next.iter().position(|(p, _, _)| p == prefix) {
                Some(i) => i,
                None => {
                    next.push((prefix.to_vec(), ninf, ninf));
                    next.len() - 1
                }
            }
        };
        for (prefix, pb, pnb) in &beams {
            let total = log_add(*pb, *pnb);
            // Emit blank: prefix unchanged, now blank-terminated.
            let i = slot(&mut next, prefix);
            next[i].1 = log_add(next[i].1, total + row[blank]);
            for sym in 0..blank {
                let p_sym = row[sym];
                if *prefix.last().unwrap_or(&usize::MAX) == sym {
                    // Repeat of the last symbol: staying on the same prefix
                    // only continues a symbol run; growing the prefix needs
                    // the blank-terminated mass.
                    let i = slot(&mut next, prefix);
                    next[i].2 = log_add(next[i].2, *pnb + p_sym);
                    let mut grown = prefix.clone();
                    grown.push(sym);
                    let i = slot(&mut next, &grown);
                    next[i].2 = log_add(next[i].2, *pb + p_sym);
                } else {
                    let mut grown = prefix.clone();
                    grown.push(sym);
                    let i = slot(&mut next, &grown);
                    next[i].2 = log_add(next[i].2, total + p_sym);
                }
            }
        }
        next.sort_by(|a, b| {
            let ta = log_add(a.1, a.2);
            let tb = log_add(b.1, b.2);
            tb.partial_cmp(&ta).unwrap().then_with(|| a.0.cmp(&b.0))
        });
        next.truncate(beam_width);
        beams = next;
    }
    let best = &beams[0].0;
    vocab.decode(best).expect("beam prefixes are in-vocabulary")
}

/// Nearest lexicon word by edit distance; ties go to the earlier entry.
pub fn lexicon_correct<'a>(word: &str, lexicon: &'a [impl AsRef<str>]) -> Option<&'a str> {
    let mut best: Option<(&'a str, usize)> = None;
    for entry in lexicon {
        let entry = entry.as_ref();
        let d = edit_distance(word, entry);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((entry, d));
        }
        if d == 0 {
            break;
        }
    }
    best.map(|(w, _)| w)
}
