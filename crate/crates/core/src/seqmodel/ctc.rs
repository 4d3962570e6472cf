//! Connectionist temporal classification: loss, gradient and greedy decoding.
//!
//! Labels are indices into the output layer with `0` reserved for the blank.
//! The recursions run over the blank-augmented label `- l1 - l2 - ... -` in
//! log space.

use super::linalg::Matrix;
use crate::error::{Error, Result};

pub const BLANK: usize = 0;

/// Floor applied to posteriors before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Smallest frame count that can emit `label`: one frame per symbol plus a
/// separating blank between equal neighbours.
pub fn min_frames(label: &[usize]) -> usize {
    label.len() + label.windows(2).filter(|w| w[0] == w[1]).count()
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Checks symbol range and length against a `frames x classes` posterior.
pub fn validate_label(label: &[usize], frames: usize, classes: usize) -> Result<()> {
    if let Some(&bad) = label.iter().find(|&&s| s == BLANK || s >= classes) {
        return Err(Error::UnknownSymbol {
            index: bad,
            size: classes,
        });
    }
    let required = min_frames(label);
    if frames < required {
        return Err(Error::LabelTooLong {
            label_len: label.len(),
            required,
            frames,
        });
    }
    Ok(())
}

/// Negative log likelihood of `label` and its gradient with respect to the
/// pre-softmax activations that produced `posteriors`.
pub fn ctc_loss(posteriors: &Matrix, label: &[usize]) -> Result<(f64, Matrix)> {
    let (t_len, classes) = (posteriors.rows(), posteriors.cols());
    validate_label(label, t_len, classes)?;

    let ext: Vec<usize> = std::iter::once(BLANK)
        .chain(label.iter().flat_map(|&s| [s, BLANK]))
        .collect();
    let s_len = ext.len();
    // Whether state s may be entered directly from s - 2.
    let skip: Vec<bool> = (0..s_len)
        .map(|s| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2])
        .collect();

    let log_y: Vec<f64> = posteriors
        .data()
        .iter()
        .map(|&y| y.max(PROB_FLOOR).ln())
        .collect();
    let ly = |t: usize, k: usize| log_y[t * classes + k];

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![neg; t_len * s_len];
    alpha[0] = ly(0, ext[0]);
    if s_len > 1 {
        alpha[1] = ly(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if skip[s] {
                acc = log_add(acc, prev[s - 2]);
            }
            if acc != neg {
                alpha[t * s_len + s] = acc + ly(t, ext[s]);
            }
        }
    }

    // beta excludes the emission at its own frame.
    let mut beta = vec![neg; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = (t + 1) * s_len;
            let mut acc = beta[next + s] + ly(t + 1, ext[s]);
            if s + 1 < s_len {
                acc = log_add(acc, beta[next + s + 1] + ly(t + 1, ext[s + 1]));
            }
            if s + 2 < s_len && skip[s + 2] {
                acc = log_add(acc, beta[next + s + 2] + ly(t + 1, ext[s + 2]));
            }
            beta[t * s_len + s] = acc;
        }
    }

    let end = &alpha[last..last + s_len];
    let log_p = if s_len > 1 {
        log_add(end[s_len - 1], end[s_len - 2])
    } else {
        end[0]
    };
    let loss = (-log_p).max(0.0);

    let mut grad = posteriors.clone();
    let mut occupancy = vec![neg; classes];
    for t in 0..t_len {
        occupancy.fill(neg);
        for s in 0..s_len {
            let v = alpha[t * s_len + s] + beta[t * s_len + s];
            occupancy[ext[s]] = log_add(occupancy[ext[s]], v);
        }
        let row = grad.row_mut(t);
        for (g, occ) in row.iter_mut().zip(&occupancy) {
            if *occ != neg {
                *g -= (occ - log_p).exp();
            }
        }
    }
    Ok((loss, grad))
}

/// Per-frame argmax, merge repeats, drop blanks. Ties take the lower index.
pub fn ctc_greedy_decode(posteriors: &Matrix) -> Vec<usize> {
    let best: Vec<usize> = (0..posteriors.rows())
        .map(|t| {
            posteriors
                .row(t)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect();
    collapse_path(&best)
}

/// Collapses a frame-level path to its label.
pub fn collapse_path(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}
