use crate::error::{Error, Result};

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Matched symbols in a minimum-cost alignment of `reference` and
/// `hypothesis`. Among optimal alignments the one with the most matches is
/// taken (e.g. `ab`/`ba` counts one match, not zero).
pub fn alignment_matches<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    // Cells hold (cost, -matches) ordered lexicographically.
    let m = hypothesis.len();
    let mut prev: Vec<(usize, isize)> = (0..=m).map(|j| (j, 0)).collect();
    let mut cur = vec![(0usize, 0isize); m + 1];
    for (i, x) in reference.iter().enumerate() {
        cur[0] = (i + 1, 0);
        for (j, y) in hypothesis.iter().enumerate() {
            let diag = if x == y {
                (prev[j].0, prev[j].1 - 1)
            } else {
                (prev[j].0 + 1, prev[j].1)
            };
            let del = (prev[j + 1].0 + 1, prev[j + 1].1);
            let ins = (cur[j].0 + 1, cur[j].1);
            cur[j + 1] = diag.min(del).min(ins);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    (-prev[m].1) as usize
}

/// Σ edit distance / Σ reference length over `(reference, hypothesis)` pairs.
pub fn character_error_rate<T: PartialEq>(pairs: &[(&[T], &[T])]) -> Result<f64> {
    let total: usize = pairs.iter().map(|(r, _)| r.len()).sum();
    if total == 0 {
        return Err(Error::invalid("character error rate needs a non-empty reference"));
    }
    let edits: usize = pairs.iter().map(|(r, h)| levenshtein(r, h)).sum();
    Ok(edits as f64 / total as f64)
}

/// Harmonic mean, zero when both inputs are zero.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Character-level precision, recall and F-measure from alignment matches.
pub fn precision_recall_f<T: PartialEq>(pairs: &[(&[T], &[T])]) -> Result<(f64, f64, f64)> {
    let ref_total: usize = pairs.iter().map(|(r, _)| r.len()).sum();
    let hyp_total: usize = pairs.iter().map(|(_, h)| h.len()).sum();
    if ref_total == 0 {
        return Err(Error::invalid("precision/recall need a non-empty reference"));
    }
    let matches: usize = pairs.iter().map(|(r, h)| alignment_matches(r, h)).sum();
    let precision = if hyp_total == 0 {
        0.0
    } else {
        matches as f64 / hyp_total as f64
    };
    let recall = matches as f64 / ref_total as f64;
    Ok((precision, recall, f_measure(precision, recall)))
}

/// Scores of one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    /// `100 * (1 - CER)`.
    pub accuracy: f64,
    /// Percentage of lines decoded exactly.
    pub seq_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

pub fn score_pairs<T: PartialEq>(pairs: &[(&[T], &[T])]) -> Result<RunMetrics> {
    let cer = character_error_rate(pairs)?;
    let (precision, recall, _) = precision_recall_f(pairs)?;
    let exact = pairs.iter().filter(|(r, h)| r == h).count();
    Ok(RunMetrics {
        accuracy: 100.0 * (1.0 - cer),
        seq_accuracy: 100.0 * exact as f64 / pairs.len() as f64,
        precision,
        recall,
    })
}
