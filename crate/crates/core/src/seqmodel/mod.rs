//! Recurrent recognizer with CTC output.
//!
//! Two backbones share one output contract (per-frame posteriors over the
//! alphabet plus blank):
//!
//! * [`ModelKind::Blstm1d`]: forward and backward LSTMs over the frames.
//! * [`ModelKind::Mdlstm2d`]: four-direction MDLSTM over the frame volume
//!   with a row-sum collapse layer.
//!
//! All parameters live in one flat `Vec<f64>`; [`SequenceModel::blocks`]
//! documents the fixed order used for initialization and persistence.

mod alphabet;
pub mod ctc;
mod gradcheck;
pub mod linalg;
mod lstm;
mod mdlstm;
mod persist;
mod precise;
mod train;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use alphabet::Alphabet;
pub use ctc::{ctc_greedy_decode, ctc_loss, BLANK};
pub use gradcheck::gradient_check;
pub use linalg::Matrix;
pub use persist::{load_model, save_model, ModelFile, MODEL_MAGIC};
pub use train::{train, train_with_observer, EpochStats, TrainConfig, TrainOutcome, TrainSample};

use crate::error::{Error, Result};
use crate::filter_bank::FeatureSequence;
use lstm::BlstmShape;
use mdlstm::MdlstmShape;

/// Half-width of the uniform weight initialization interval.
pub const INIT_RANGE: f64 = 0.1;

/// Initial value of forget-gate biases.
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Blstm1d,
    /// `channels` planes per frame; the frame dimension must be a multiple.
    Mdlstm2d { channels: usize },
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Blstm1d => "blstm_1d",
            ModelKind::Mdlstm2d { .. } => "mdlstm_2d",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Names without layout: `mdlstm_2d` parses with `channels = 0`, to be
/// filled from the feature layout.
impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blstm_1d" => Ok(ModelKind::Blstm1d),
            "mdlstm_2d" => Ok(ModelKind::Mdlstm2d { channels: 0 }),
            other => Err(Error::invalid(format!(
                "unknown model kind {other:?} (expected blstm_1d or mdlstm_2d)"
            ))),
        }
    }
}

/// How a parameter block is initialized.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockInit {
    Uniform,
    Zero,
    /// Zero except the forget-gate slice, which starts at [`FORGET_BIAS`].
    GateBias { ones: Range<usize> },
}

/// One named, contiguous slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub len: usize,
    pub init: BlockInit,
}

impl Block {
    fn new(name: impl Into<String>, len: usize, init: BlockInit) -> Self {
        Block {
            name: name.into(),
            len,
            init,
        }
    }

    pub fn is_bias(&self) -> bool {
        !matches!(self.init, BlockInit::Uniform)
    }
}

enum Shape {
    Blstm(BlstmShape),
    Mdlstm(MdlstmShape),
}

// One trace exists per forward pass, so the size gap does not matter.
#[allow(clippy::large_enum_variant)]
enum Trace {
    Blstm(lstm::BlstmTrace),
    Mdlstm(mdlstm::MdlstmTrace),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel {
    kind: ModelKind,
    input_dim: usize,
    hidden: usize,
    alphabet: Alphabet,
    seed: u64,
    params: Vec<f64>,
}

fn debug_assert_normalized(post: &Matrix) {
    if cfg!(debug_assertions) {
        for t in 0..post.rows() {
            let sum: f64 = post.row(t).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "posterior row {t} sums to {sum}");
        }
    }
}

fn shape_of(kind: ModelKind, input_dim: usize, hidden: usize, classes: usize) -> Result<Shape> {
    if input_dim == 0 || hidden == 0 {
        return Err(Error::invalid(format!(
            "input_dim and hidden units must be >= 1, got {input_dim} and {hidden}"
        )));
    }
    Ok(match kind {
        ModelKind::Blstm1d => Shape::Blstm(BlstmShape {
            input: input_dim,
            hidden,
            classes,
        }),
        ModelKind::Mdlstm2d { channels } => {
            if channels == 0 || !input_dim.is_multiple_of(channels) {
                return Err(Error::invalid(format!(
                    "mdlstm_2d needs a frame dimension divisible by its channel count \
                     ({input_dim} / {channels})"
                )));
            }
            Shape::Mdlstm(MdlstmShape {
                channels,
                rows: input_dim / channels,
                hidden,
                classes,
            })
        }
    })
}

/// Uniform `[-0.1, 0.1]` weights from a ChaCha8 stream seeded with `seed`,
/// zero biases, forget biases at `+1`.
pub fn init_model(
    kind: ModelKind,
    input_dim: usize,
    hidden: usize,
    alphabet: &Alphabet,
    seed: u64,
) -> Result<SequenceModel> {
    let shape = shape_of(kind, input_dim, hidden, alphabet.size())?;
    let blocks = blocks_of(&shape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(blocks.iter().map(|b| b.len).sum());
    for block in &blocks {
        match &block.init {
            BlockInit::Uniform => {
                params.extend((0..block.len).map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE)))
            }
            BlockInit::Zero => params.extend(std::iter::repeat_n(0.0, block.len)),
            BlockInit::GateBias { ones } => params.extend(
                (0..block.len).map(|i| if ones.contains(&i) { FORGET_BIAS } else { 0.0 }),
            ),
        }
    }
    Ok(SequenceModel {
        kind,
        input_dim,
        hidden,
        alphabet: alphabet.clone(),
        seed,
        params,
    })
}

fn blocks_of(shape: &Shape) -> Vec<Block> {
    match shape {
        Shape::Blstm(s) => s.blocks(),
        Shape::Mdlstm(s) => s.blocks(),
    }
}

fn param_count_of(shape: &Shape) -> usize {
    match shape {
        Shape::Blstm(s) => s.param_count(),
        Shape::Mdlstm(s) => s.param_count(),
    }
}

impl SequenceModel {
    /// Rebuilds a model from stored parameters.
    pub fn from_parts(
        kind: ModelKind,
        input_dim: usize,
        hidden: usize,
        alphabet: Alphabet,
        seed: u64,
        params: Vec<f64>,
    ) -> Result<Self> {
        let shape = shape_of(kind, input_dim, hidden, alphabet.size())?;
        let expected = param_count_of(&shape);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(SequenceModel {
            kind,
            input_dim,
            hidden,
            alphabet,
            seed,
            params,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.alphabet.size()
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Named parameter blocks in storage order.
    pub fn blocks(&self) -> Vec<Block> {
        blocks_of(&self.shape())
    }

    fn shape(&self) -> Shape {
        shape_of(self.kind, self.input_dim, self.hidden, self.output_dim())
            .expect("model shape validated at construction")
    }

    fn check_input(&self, seq: &FeatureSequence) -> Result<()> {
        if seq.frame_dim() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: seq.frame_dim(),
            });
        }
        if let ModelKind::Mdlstm2d { channels } = self.kind {
            if seq.meta().channels != channels {
                return Err(Error::DimensionMismatch {
                    expected: channels,
                    actual: seq.meta().channels,
                });
            }
        }
        Ok(())
    }

    fn logits(&self, seq: &FeatureSequence) -> Result<(Matrix, Trace)> {
        self.check_input(seq)?;
        let t = seq.frame_count();
        Ok(match self.shape() {
            Shape::Blstm(s) => {
                let (m, tr) = lstm::forward(&s, &self.params, seq.frames(), t);
                (m, Trace::Blstm(tr))
            }
            Shape::Mdlstm(s) => {
                let (m, tr) = mdlstm::forward(&s, &self.params, seq.frames(), t);
                (m, Trace::Mdlstm(tr))
            }
        })
    }

    /// Per-frame posteriors, `T x output_dim`, each row summing to one.
    pub fn forward(&self, seq: &FeatureSequence) -> Result<Matrix> {
        let (mut m, _) = self.logits(seq)?;
        linalg::softmax_rows(&mut m);
        debug_assert_normalized(&m);
        Ok(m)
    }

    /// CTC loss of `label` and its gradient w.r.t. every parameter.
    pub fn loss_and_gradient(
        &self,
        seq: &FeatureSequence,
        label: &[usize],
    ) -> Result<(f64, Vec<f64>)> {
        let (mut post, trace) = self.logits(seq)?;
        linalg::softmax_rows(&mut post);
        debug_assert_normalized(&post);
        let (loss, dlogits) = ctc_loss(&post, label)?;
        let mut grad = vec![0.0; self.params.len()];
        match (self.shape(), &trace) {
            (Shape::Blstm(s), Trace::Blstm(tr)) => {
                lstm::backward(&s, &self.params, seq.frames(), tr, &dlogits, &mut grad)
            }
            (Shape::Mdlstm(s), Trace::Mdlstm(tr)) => {
                mdlstm::backward(&s, &self.params, tr, &dlogits, &mut grad)
            }
            _ => unreachable!("trace matches model kind"),
        }
        Ok((loss, grad))
    }

    /// CTC loss only.
    pub fn loss(&self, seq: &FeatureSequence, label: &[usize]) -> Result<f64> {
        let post = self.forward(seq)?;
        Ok(ctc_loss(&post, label)?.0)
    }

    /// Greedy CTC transcription as alphabet indices.
    pub fn recognize(&self, seq: &FeatureSequence) -> Result<Vec<usize>> {
        Ok(ctc_greedy_decode(&self.forward(seq)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter_bank::FrameMeta;

    fn alphabet() -> Alphabet {
        Alphabet::new("abc".chars()).unwrap()
    }

    fn random_seq(t: usize, channels: usize, rows: usize, seed: u64) -> FeatureSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = channels * rows;
        let frames = (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let meta = FrameMeta {
            level: Some(0),
            channels,
            frame_height: rows,
        };
        FeatureSequence::new(t, d, frames, meta).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_model(ModelKind::Blstm1d, 6, 5, &alphabet(), 11).unwrap();
        let b = init_model(ModelKind::Blstm1d, 6, 5, &alphabet(), 11).unwrap();
        let c = init_model(ModelKind::Blstm1d, 6, 5, &alphabet(), 12).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
        let mut offset = 0;
        for block in a.blocks() {
            let slice = &a.params()[offset..offset + block.len];
            match &block.init {
                BlockInit::Uniform => assert!(slice.iter().all(|w| w.abs() <= INIT_RANGE)),
                BlockInit::Zero => assert!(slice.iter().all(|&w| w == 0.0)),
                BlockInit::GateBias { ones } => {
                    for (i, &w) in slice.iter().enumerate() {
                        assert_eq!(w, if ones.contains(&i) { 1.0 } else { 0.0 });
                    }
                }
            }
            offset += block.len;
        }
        assert_eq!(offset, a.params().len());
    }

    #[test]
    fn parameter_counts() {
        let blstm = init_model(ModelKind::Blstm1d, 420, 100, &alphabet(), 0).unwrap();
        let dir = 400 * 420 + 400 * 100 + 400;
        assert_eq!(blstm.params().len(), 2 * dir + 2 * 4 * 100 + 4);
        let md = init_model(ModelKind::Mdlstm2d { channels: 7 }, 420, 4, &alphabet(), 0).unwrap();
        let dir = 20 * 7 + 2 * 20 * 4 + 20;
        assert_eq!(md.params().len(), 4 * dir + 4 * 4 * 4 + 4);
        assert!(init_model(ModelKind::Mdlstm2d { channels: 8 }, 420, 4, &alphabet(), 0).is_err());
        assert!(init_model(ModelKind::Blstm1d, 0, 4, &alphabet(), 0).is_err());
        assert!(init_model(ModelKind::Blstm1d, 4, 0, &alphabet(), 0).is_err());
    }

    #[test]
    fn posteriors_are_normalized() {
        for kind in [ModelKind::Blstm1d, ModelKind::Mdlstm2d { channels: 3 }] {
            let model = init_model(kind, 12, 6, &alphabet(), 3).unwrap();
            let post = model.forward(&random_seq(9, 3, 4, 1)).unwrap();
            assert_eq!((post.rows(), post.cols()), (9, 4));
            for t in 0..9 {
                assert!((post.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_projection_gives_uniform_posteriors() {
        for kind in [ModelKind::Blstm1d, ModelKind::Mdlstm2d { channels: 2 }] {
            let mut model = init_model(kind, 8, 3, &alphabet(), 5).unwrap();
            let mut offset = 0;
            for block in model.blocks() {
                if block.name.starts_with("out.") {
                    model.params_mut()[offset..offset + block.len].fill(0.0);
                }
                offset += block.len;
            }
            let post = model.forward(&random_seq(5, 2, 4, 2)).unwrap();
            assert!(post.data().iter().all(|p| (p - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let model = init_model(ModelKind::Blstm1d, 10, 3, &alphabet(), 0).unwrap();
        assert!(matches!(
            model.forward(&random_seq(4, 1, 9, 0)),
            Err(Error::DimensionMismatch { expected: 10, actual: 9 })
        ));
        let md = init_model(ModelKind::Mdlstm2d { channels: 2 }, 8, 3, &alphabet(), 0).unwrap();
        assert!(md.forward(&random_seq(4, 4, 2, 0)).is_err());
    }

    #[test]
    fn blstm_direction_symmetry() {
        let model = init_model(ModelKind::Blstm1d, 5, 4, &alphabet(), 9).unwrap();
        // Swap forward/backward LSTM blocks and the two output projections.
        let blocks = model.blocks();
        let lens: Vec<usize> = blocks.iter().map(|b| b.len).collect();
        let dir: usize = lens[..3].iter().sum();
        let kh = lens[6];
        let p = model.params();
        let mut swapped = Vec::with_capacity(p.len());
        swapped.extend_from_slice(&p[dir..2 * dir]);
        swapped.extend_from_slice(&p[..dir]);
        swapped.extend_from_slice(&p[2 * dir + kh..2 * dir + 2 * kh]);
        swapped.extend_from_slice(&p[2 * dir..2 * dir + kh]);
        swapped.extend_from_slice(&p[2 * dir + 2 * kh..]);
        let mirror = SequenceModel::from_parts(
            ModelKind::Blstm1d,
            5,
            4,
            alphabet(),
            9,
            swapped,
        )
        .unwrap();

        let seq = random_seq(7, 1, 5, 4);
        let a = model.forward(&seq).unwrap();
        let b = mirror.forward(&seq.reversed()).unwrap();
        for t in 0..7 {
            for k in 0..4 {
                assert!((a.get(t, k) - b.get(6 - t, k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn precise_loss_agrees_with_fast_path() {
        let alpha = alphabet();
        for (kind, seed) in [(ModelKind::Blstm1d, 1), (ModelKind::Mdlstm2d { channels: 2 }, 2)] {
            let model = init_model(kind, 6, 3, &alpha, seed).unwrap();
            let seq = random_seq(7, 2, 3, seed + 10);
            let fast = model.loss(&seq, &[1, 2, 2]).unwrap();
            let precise = precise::precise_loss(&model, &seq, &[1, 2, 2]).unwrap().to_f64();
            assert!((fast - precise).abs() < 1e-12 * fast.abs(), "{fast} vs {precise}");
        }
    }

    #[test]
    fn kind_names() {
        assert_eq!("blstm_1d".parse::<ModelKind>().unwrap(), ModelKind::Blstm1d);
        assert_eq!(ModelKind::Mdlstm2d { channels: 7 }.to_string(), "mdlstm_2d");
        assert!("gru".parse::<ModelKind>().is_err());
    }
}
