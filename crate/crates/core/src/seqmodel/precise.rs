//! Double-double arithmetic and an extended-precision loss evaluation.
//!
//! Central differences divide a loss difference by `2 * epsilon`. In plain
//! `f64` the loss carries about half an ulp of rounding noise, so a loss near
//! 5 and a step of `1e-5` leave roughly `4e-11` of noise in every numeric
//! derivative. That swamps parameters whose true gradient is below `1e-6`.
//! Evaluating the loss with ~106 significant bits removes that noise while
//! keeping the check a genuine finite difference.
//!
//! The forward pass here is a straightforward re-derivation from the
//! parameter blocks; it shares no code with the fast `f64` path, so agreement
//! between the two is itself a useful check.

use std::collections::HashMap;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::OnceLock;

use super::ctc::{validate_label, BLANK, PROB_FLOOR};
use super::{ModelKind, SequenceModel};
use crate::error::Result;
use crate::filter_bank::FeatureSequence;

/// An unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(super) struct Dd {
    pub hi: f64,
    pub lo: f64,
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

/// `1 / n!` for `n = 1..=14`.
fn inverse_factorials() -> &'static [Dd; 14] {
    static TABLE: OnceLock<[Dd; 14]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [Dd::ONE; 14];
        let mut f = Dd::ONE;
        for (n, slot) in t.iter_mut().enumerate() {
            f = f / Dd::from_f64((n + 1) as f64);
            *slot = f;
        }
        t
    })
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn from_f64(v: f64) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }

    /// Exact difference of two doubles.
    pub fn diff(a: f64, b: f64) -> Dd {
        let (hi, lo) = two_sum(a, -b);
        Dd { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn scale(self, s: f64) -> Dd {
        // Exact for powers of two away from the subnormal range.
        Dd {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    fn max(self, other: Dd) -> Dd {
        if (self - other).hi < 0.0 {
            other
        } else {
            self
        }
    }

    pub fn exp(self) -> Dd {
        if self.hi > 709.0 {
            return Dd::from_f64(f64::INFINITY);
        }
        if self.hi < -708.0 {
            return Dd::ZERO;
        }
        const SQUARINGS: i32 = 5;
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Dd::from_f64(k)).scale(0.5f64.powi(SQUARINGS));
        // expm1(r) by Horner's rule; |r| < 0.011 so the 14th term is far
        // below double-double resolution.
        let inv = inverse_factorials();
        let mut s = Dd::ZERO;
        for c in inv.iter().rev() {
            s = (s + *c) * r;
        }
        // expm1(2x) = expm1(x) * (expm1(x) + 2) keeps small results accurate.
        for _ in 0..SQUARINGS {
            s = s * (s + Dd::from_f64(2.0));
        }
        let e = s + Dd::ONE;
        // k lies in [-1022, 1023] here, so the scale factor is a normal double.
        e.scale(2f64.powi(k as i32))
    }

    pub fn ln(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::from_f64(if self.hi == 0.0 {
                f64::NEG_INFINITY
            } else {
                f64::NAN
            });
        }
        // One Newton step on exp(y) = x doubles the ~53 correct bits of
        // the f64 seed.
        let y = Dd::from_f64(self.hi.ln());
        y + self * (-y).exp() - Dd::ONE
    }

    pub fn sigmoid(self) -> Dd {
        Dd::ONE / (Dd::ONE + (-self).exp())
    }

    pub fn tanh(self) -> Dd {
        if self.hi.abs() > 40.0 {
            return Dd::from_f64(self.hi.signum());
        }
        Dd::ONE - Dd::from_f64(2.0) / ((self + self).exp() + Dd::ONE)
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, b.hi);
        let (t1, t2) = two_sum(self.lo, b.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        let (hi, lo) = quick_two_sum(s1, s2 + t2);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let (p1, p2) = two_prod(self.hi, b.hi);
        let p2 = p2 + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p1, p2);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * Dd::from_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Dd::from_f64(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from_f64(q3)
    }
}

fn dot(w: &[f64], x: &[Dd]) -> Dd {
    w.iter()
        .zip(x)
        .fold(Dd::ZERO, |acc, (&a, &b)| acc + Dd::from_f64(a) * b)
}

/// Parameter blocks by name.
struct Params<'a> {
    blocks: HashMap<String, &'a [f64]>,
}

impl<'a> Params<'a> {
    fn new(model: &'a SequenceModel) -> Self {
        let mut blocks = HashMap::new();
        let mut offset = 0;
        for b in model.blocks() {
            blocks.insert(b.name.clone(), &model.params()[offset..offset + b.len]);
            offset += b.len;
        }
        Params { blocks }
    }

    fn get(&self, name: &str) -> &'a [f64] {
        self.blocks[name]
    }
}

/// `W v + b` for each row `W_r` of a row-major matrix with `v.len()` columns.
fn affine(w: &[f64], v: &[Dd], out: &mut [Dd]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(v.len())) {
        *o = *o + dot(row, v);
    }
}

/// One LSTM direction over `frames` in the given order; returns the hidden
/// state for each visited frame, indexed by original frame.
fn lstm_direction(p: &Params, dir: &str, frames: &[Vec<Dd>], h: usize, order: &[usize]) -> Vec<Vec<Dd>> {
    let w_in = p.get(&format!("{dir}.w_in"));
    let w_rec = p.get(&format!("{dir}.w_rec"));
    let bias = p.get(&format!("{dir}.bias"));
    let mut out = vec![Vec::new(); frames.len()];
    let mut h_prev = vec![Dd::ZERO; h];
    let mut c_prev = vec![Dd::ZERO; h];
    for &t in order {
        let mut z: Vec<Dd> = bias.iter().map(|&b| Dd::from_f64(b)).collect();
        affine(w_in, &frames[t], &mut z);
        affine(w_rec, &h_prev, &mut z);
        for j in 0..h {
            let i = z[j].sigmoid();
            let f = z[h + j].sigmoid();
            let o = z[2 * h + j].sigmoid();
            let g = z[3 * h + j].tanh();
            c_prev[j] = f * c_prev[j] + i * g;
            h_prev[j] = o * c_prev[j].tanh();
        }
        out[t] = h_prev.clone();
    }
    out
}

fn blstm_logits(p: &Params, x: &[Vec<Dd>], h: usize, k: usize) -> Vec<Vec<Dd>> {
    let t_len = x.len();
    let order: Vec<usize> = (0..t_len).collect();
    let rev: Vec<usize> = (0..t_len).rev().collect();
    let hf = lstm_direction(p, "fwd", x, h, &order);
    let hb = lstm_direction(p, "bwd", x, h, &rev);
    let (wf, wb, b) = (p.get("out.w_fwd"), p.get("out.w_bwd"), p.get("out.bias"));
    (0..t_len)
        .map(|t| {
            let mut z: Vec<Dd> = b.iter().map(|&v| Dd::from_f64(v)).collect();
            affine(wf, &hf[t], &mut z);
            affine(wb, &hb[t], &mut z);
            debug_assert_eq!(z.len(), k);
            z
        })
        .collect()
}

fn mdlstm_logits(p: &Params, x: &[Vec<Dd>], channels: usize, h: usize, k: usize) -> Vec<Vec<Dd>> {
    let t_len = x.len();
    let rows = x[0].len() / channels;
    let b = p.get("out.bias");
    let mut logits: Vec<Vec<Dd>> = (0..t_len)
        .map(|_| b.iter().map(|&v| Dd::from_f64(v)).collect())
        .collect();
    for d in 0..4 {
        let (flip_rows, flip_cols) = (d & 2 != 0, d & 1 != 0);
        let w_in = p.get(&format!("d{d}.w_in"));
        let w_up = p.get(&format!("d{d}.w_up"));
        let w_left = p.get(&format!("d{d}.w_left"));
        let bias = p.get(&format!("d{d}.bias"));
        // States keyed by original (row, frame).
        let mut hid = vec![vec![Dd::ZERO; h]; rows * t_len];
        let mut cell = vec![vec![Dd::ZERO; h]; rows * t_len];
        let mut collapsed = vec![vec![Dd::ZERO; h]; t_len];
        for sy in 0..rows {
            let y = if flip_rows { rows - 1 - sy } else { sy };
            for sx in 0..t_len {
                let t = if flip_cols { t_len - 1 - sx } else { sx };
                let inp: Vec<Dd> = (0..channels).map(|c| x[t][c * rows + y]).collect();
                let up = (sy > 0).then(|| if flip_rows { y + 1 } else { y - 1 });
                let left = (sx > 0).then(|| if flip_cols { t + 1 } else { t - 1 });
                let mut z: Vec<Dd> = bias.iter().map(|&v| Dd::from_f64(v)).collect();
                affine(w_in, &inp, &mut z);
                if let Some(uy) = up {
                    affine(w_up, &hid[uy * t_len + t], &mut z);
                }
                if let Some(lt) = left {
                    affine(w_left, &hid[y * t_len + lt], &mut z);
                }
                for j in 0..h {
                    let i = z[j].sigmoid();
                    let fu = z[h + j].sigmoid();
                    let fl = z[2 * h + j].sigmoid();
                    let o = z[3 * h + j].sigmoid();
                    let g = z[4 * h + j].tanh();
                    let mut c = i * g;
                    if let Some(uy) = up {
                        c = c + fu * cell[uy * t_len + t][j];
                    }
                    if let Some(lt) = left {
                        c = c + fl * cell[y * t_len + lt][j];
                    }
                    let hv = o * c.tanh();
                    cell[y * t_len + t][j] = c;
                    hid[y * t_len + t][j] = hv;
                    collapsed[t][j] = collapsed[t][j] + hv;
                }
            }
        }
        let w_out = p.get(&format!("out.w_d{d}"));
        for t in 0..t_len {
            affine(w_out, &collapsed[t], &mut logits[t]);
        }
    }
    debug_assert!(logits.iter().all(|z| z.len() == k));
    logits
}

fn softmax(z: &[Dd]) -> Vec<Dd> {
    let max = z.iter().copied().fold(z[0], Dd::max);
    let e: Vec<Dd> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum = e.iter().fold(Dd::ZERO, |a, &b| a + b);
    e.into_iter().map(|v| v / sum).collect()
}

/// CTC negative log-likelihood with per-frame rescaling of the forward
/// variables.
fn ctc(post: &[Vec<Dd>], label: &[usize]) -> Dd {
    let floor = Dd::from_f64(PROB_FLOOR);
    let y = |t: usize, k: usize| post[t][k].max(floor);
    let ext: Vec<usize> = std::iter::once(BLANK)
        .chain(label.iter().flat_map(|&s| [s, BLANK]))
        .collect();
    let s_len = ext.len();
    let mut alpha = vec![Dd::ZERO; s_len];
    alpha[0] = y(0, ext[0]);
    if s_len > 1 {
        alpha[1] = y(0, ext[1]);
    }
    let mut neg_log = Dd::ZERO;
    for t in 0..post.len() {
        if t > 0 {
            let prev = alpha.clone();
            for s in 0..s_len {
                let mut acc = prev[s];
                if s >= 1 {
                    acc = acc + prev[s - 1];
                }
                if s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2] {
                    acc = acc + prev[s - 2];
                }
                alpha[s] = acc * y(t, ext[s]);
            }
        }
        let scale = alpha.iter().fold(Dd::ZERO, |a, &b| a + b);
        neg_log = neg_log - scale.ln();
        for a in alpha.iter_mut() {
            *a = *a / scale;
        }
    }
    let mut end = alpha[s_len - 1];
    if s_len > 1 {
        end = end + alpha[s_len - 2];
    }
    neg_log - end.ln()
}

/// CTC loss of `label` evaluated in double-double arithmetic.
pub(super) fn precise_loss(model: &SequenceModel, seq: &FeatureSequence, label: &[usize]) -> Result<Dd> {
    model.check_input(seq)?;
    validate_label(label, seq.frame_count(), model.output_dim())?;
    let x: Vec<Vec<Dd>> = (0..seq.frame_count())
        .map(|t| seq.frame(t).iter().map(|&v| Dd::from_f64(v)).collect())
        .collect();
    let p = Params::new(model);
    let (h, k) = (model.hidden(), model.output_dim());
    let logits = match model.kind() {
        ModelKind::Blstm1d => blstm_logits(&p, &x, h, k),
        ModelKind::Mdlstm2d { channels } => mdlstm_logits(&p, &x, channels, h, k),
    };
    let post: Vec<Vec<Dd>> = logits.iter().map(|z| softmax(z)).collect();
    Ok(ctc(&post, label))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Dd, b: f64, tol: f64) -> bool {
        (a.to_f64() - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn arithmetic_exceeds_double_precision() {
        let third = Dd::ONE / Dd::from_f64(3.0);
        let back = third * Dd::from_f64(3.0) - Dd::ONE;
        assert!(back.to_f64().abs() < 1e-31);
        let tiny = (Dd::ONE + Dd::from_f64(1e-20)) - Dd::ONE;
        assert!((tiny.to_f64() - 1e-20).abs() < 1e-35);
    }

    #[test]
    fn exp_and_ln_are_consistent() {
        for &v in &[-30.0, -2.5, -1e-3, 0.0, 1e-9, 0.7, 3.0, 50.0] {
            let x = Dd::from_f64(v);
            assert!(close(x.exp(), v.exp(), 1e-15));
            let round = x.exp().ln() - x;
            assert!(round.to_f64().abs() < 1e-28 * v.abs().max(1.0), "{v}");
        }
        let e = Dd::ONE.exp();
        // e to 32 digits: 2.7182818284590452353602874713527
        let want = Dd { hi: std::f64::consts::E, lo: 1.445_646_891_729_250_2e-16 };
        assert!((e - want).to_f64().abs() < 1e-30);
    }

    #[test]
    fn activations_match_f64() {
        for &v in &[-8.0, -0.3, 0.0, 0.4, 6.0] {
            assert!(close(Dd::from_f64(v).tanh(), f64::tanh(v), 1e-15));
            assert!(close(Dd::from_f64(v).sigmoid(), 1.0 / (1.0 + (-v).exp()), 1e-15));
        }
    }
}
