//! Edit distance and the four evaluation measures: CER, WER, WA, WAF.
//!
//! CER = 100 * sum(edit distances) / sum(ground-truth lengths); it can exceed
//! 100 when predictions are much longer than their references. WA counts
//! exact matches, WAF matches within edit distance 2, WER = 100 - WA.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum MetricsError {
    /// No (ground truth, prediction) pairs were supplied.
    EmptyPairs,
    /// Ground truth has zero characters in total; CER is undefined.
    EmptyGroundTruth,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::EmptyPairs => write!(f, "no evaluation pairs"),
            MetricsError::EmptyGroundTruth => {
                write!(f, "total ground-truth length is zero; CER undefined")
            }
        }
    }
}

impl core::error::Error for MetricsError {}

/// Levenshtein distance over Unicode scalar values, unit costs.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    // Single-row DP.
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut prev_diag = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev_diag + usize::from(ca != cb);
            prev_diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(prev_diag + 1);
        }
    }
    row[b.len()]
}

/// Character error rate in percent over (ground truth, prediction) pairs.
pub fn cer(pairs: &[(String, String)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyPairs);
    }
    let total_chars: usize = pairs.iter().map(|(gt, _)| gt.chars().count()).sum();
    if total_chars == 0 {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let total_dist: usize = pairs.iter().map(|(gt, pt)| edit_distance(gt, pt)).sum();
    Ok(100.0 * total_dist as f64 / total_chars as f64)
}

/// Word accuracy (exact matches) and flexible word accuracy (distance <= 2),
/// both in percent.
pub fn wa_waf(pairs: &[(String, String)]) -> Result<(f64, f64), MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyPairs);
    }
    let mut exact = 0usize;
    let mut near = 0usize;
    for (gt, pt) in pairs {
        let d = edit_distance(gt, pt);
        if d == 0 {
            exact += 1;
        }
        if d <= 2 {
            near += 1;
        }
    }
    let n = pairs.len() as f64;
    Ok((100.0 * exact as f64 / n, 100.0 * near as f64 / n))
}

/// Full evaluation summary over a pair list.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub cer: f64,
    pub wer: f64,
    pub wa: f64,
    pub waf: f64,
    pub samples: usize,
    pub gt_chars: usize,
    pub exact_matches: usize,
    pub within_two: usize,
}

impl EvalReport {
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, MetricsError> {
        let cer = cer(pairs)?;
        let (wa, waf) = wa_waf(pairs)?;
        let gt_chars = pairs.iter().map(|(gt, _)| gt.chars().count()).sum();
        let exact_matches = pairs.iter().filter(|(gt, pt)| gt == pt).count();
        let within_two = pairs
            .iter()
            .filter(|(gt, pt)| edit_distance(gt, pt) <= 2)
            .count();
        Ok(EvalReport {
            cer,
            wer: 100.0 - wa,
            wa,
            waf,
            samples: pairs.len(),
            gt_chars,
            exact_matches,
            within_two,
        })
    }
}
