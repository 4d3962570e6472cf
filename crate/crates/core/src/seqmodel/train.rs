//! Online momentum SGD with early stopping on validation label error.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ctc::validate_label;
use super::SequenceModel;
use crate::error::{Error, Result};
use crate::eval::levenshtein;
use crate::filter_bank::FeatureSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            momentum: 0.9,
            max_epochs: 200,
            patience: 20,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub features: FeatureSequence,
    /// Alphabet indices, blank excluded.
    pub label: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    /// Character error rate on the validation set.
    pub validation_error: f64,
    /// Fraction of validation lines decoded exactly.
    pub validation_seq_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation error.
    pub model: SequenceModel,
    pub log: Vec<EpochStats>,
    pub best_epoch: usize,
}

pub fn train(
    model: &SequenceModel,
    train_set: &[TrainSample],
    validation: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_observer(model, train_set, validation, cfg, |_| {})
}

fn check_samples(model: &SequenceModel, samples: &[TrainSample]) -> Result<()> {
    for (index, s) in samples.iter().enumerate() {
        let bad = |e: Error| Error::BadSample {
            index,
            msg: e.to_string(),
        };
        model.check_input(&s.features).map_err(bad)?;
        validate_label(&s.label, s.features.frame_count(), model.output_dim()).map_err(bad)?;
    }
    Ok(())
}

/// Label error rate and exact-match rate of greedy decoding.
fn evaluate(model: &SequenceModel, samples: &[TrainSample]) -> Result<(f64, f64)> {
    let mut edits = 0usize;
    let mut symbols = 0usize;
    let mut exact = 0usize;
    for s in samples {
        let hyp = model.recognize(&s.features)?;
        let d = levenshtein(&s.label, &hyp);
        edits += d;
        symbols += s.label.len();
        exact += usize::from(d == 0);
    }
    let cer = if symbols == 0 {
        if edits == 0 { 0.0 } else { 1.0 }
    } else {
        edits as f64 / symbols as f64
    };
    Ok((cer, exact as f64 / samples.len().max(1) as f64))
}

/// Like [`train`], calling `observer` after every epoch. When `validation`
/// is empty the training set doubles as validation set.
pub fn train_with_observer(
    model: &SequenceModel,
    train_set: &[TrainSample],
    validation: &[TrainSample],
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    check_samples(model, train_set)?;
    check_samples(model, validation)?;
    let validation = if validation.is_empty() {
        train_set
    } else {
        validation
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut current = model.clone();
    let mut velocity = vec![0.0; current.params.len()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = model.clone();
    let mut best_error = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut log = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let s = &train_set[i];
            let (loss, grad) = current.loss_and_gradient(&s.features, &s.label)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::BadSample {
                    index: i,
                    msg: format!("non-finite loss or gradient in epoch {epoch}"),
                });
            }
            total += loss;
            for ((p, v), g) in current.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v - cfg.learning_rate * g;
                *p += *v;
            }
        }
        let (validation_error, validation_seq_accuracy) = evaluate(&current, validation)?;
        let stats = EpochStats {
            epoch,
            mean_loss: total / train_set.len() as f64,
            validation_error,
            validation_seq_accuracy,
        };
        observer(&stats);
        log.push(stats);

        if validation_error < best_error {
            best_error = validation_error;
            best = current.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
        }
        // Nothing left to improve on once validation is error free.
        if best_error == 0.0 || stale >= cfg.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best,
        log,
        best_epoch,
    })
}
