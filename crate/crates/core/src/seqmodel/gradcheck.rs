use super::precise::{precise_loss, Dd};
use super::{SequenceModel, TrainSample};
use crate::error::{Error, Result};

/// Largest relative error between the analytic gradient and central
/// differences over every parameter:
/// `|g_a - g_n| / max(|g_a|, |g_n|, 1e-8)`.
///
/// The perturbed losses are evaluated in double-double arithmetic and the
/// quotient uses the exactly representable step `(p + e) - (p - e)`, so the
/// numeric side is limited by truncation error rather than by `f64`
/// rounding of the loss. Meant for toy models; it costs two forward passes
/// per parameter.
pub fn gradient_check(model: &SequenceModel, sample: &TrainSample, epsilon: f64) -> Result<f64> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {epsilon}"
        )));
    }
    let (_, analytic) = model.loss_and_gradient(&sample.features, &sample.label)?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (i, &g_a) in analytic.iter().enumerate() {
        let orig = probe.params()[i];
        let (up, down) = (orig + epsilon, orig - epsilon);
        probe.params_mut()[i] = up;
        let plus = precise_loss(&probe, &sample.features, &sample.label)?;
        probe.params_mut()[i] = down;
        let minus = precise_loss(&probe, &sample.features, &sample.label)?;
        probe.params_mut()[i] = orig;
        let g_n = ((plus - minus) / Dd::diff(up, down)).to_f64();
        let rel = (g_a - g_n).abs() / g_a.abs().max(g_n.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
