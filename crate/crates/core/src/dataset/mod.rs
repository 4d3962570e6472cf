//! Manifests, alphabets, splits and the synthetic line corpus.

mod synth;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use synth::{glyph_codepoint, synth_generate, SynthParams, GLYPH_CELL, MANIFEST_NAME};

use crate::error::{Error, Result};
use crate::raster::{load_image, RasterImage};
use crate::seqmodel::Alphabet;

pub const DEFAULT_SPLIT: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub image_path: PathBuf,
    /// Logical (reading) order.
    pub transcription: String,
}

impl Sample {
    pub fn load_image(&self) -> Result<RasterImage> {
        load_image(&self.image_path)
    }
}

/// Reads `<image-path>\t<transcription>` records. Lines starting with `#`
/// and blank lines are skipped; image paths resolve against the manifest's
/// directory.
pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut samples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let err = |msg: &str| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            msg: msg.to_string(),
        };
        let (image, transcription) = line
            .split_once('\t')
            .ok_or_else(|| err("expected <image-path><TAB><transcription>"))?;
        if image.is_empty() {
            return Err(err("empty image path"));
        }
        if transcription.is_empty() {
            return Err(err("empty transcription"));
        }
        samples.push(Sample {
            image_path: base.join(image),
            transcription: transcription.to_string(),
        });
    }
    Ok(samples)
}

/// Sorted unique codepoints of every transcription.
pub fn build_alphabet(samples: &[Sample]) -> Result<Alphabet> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot build an alphabet from zero samples"));
    }
    let symbols: BTreeSet<char> = samples
        .iter()
        .flat_map(|s| s.transcription.chars())
        .collect();
    Alphabet::new(symbols)
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub alphabet: Alphabet,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Corpus {
    pub fn split(&self, which: SplitName) -> &[usize] {
        match which {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "validation" | "val" => Ok(SplitName::Validation),
            "test" => Ok(SplitName::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// Seeded shuffle, then contiguous train/validation/test blocks sized by
/// rounding `n * ratio` (the test block takes the remainder).
///
/// A zero validation or test ratio yields an empty split; every split with a
/// positive ratio must receive at least one sample.
pub fn split_corpus(samples: Vec<Sample>, ratios: [f64; 3], seed: u64) -> Result<Corpus> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || ratios[0] == 0.0 {
        return Err(Error::invalid(format!(
            "split ratios must be non-negative with a positive train share, got {ratios:?}"
        )));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios sum to {sum}, expected 1")));
    }
    let alphabet = build_alphabet(&samples)?;
    let n = samples.len();
    let n_train = ((n as f64 * ratios[0]).round() as usize).min(n);
    let n_val = ((n as f64 * ratios[1]).round() as usize).min(n - n_train);
    let n_test = n - n_train - n_val;
    let sizes = [n_train, n_val, n_test];
    if sizes.iter().zip(&ratios).any(|(&k, &r)| k == 0 && r > 0.0) {
        return Err(Error::invalid(format!(
            "{n} samples cannot fill every split ({n_train}/{n_val}/{n_test})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(n_train + n_val);
    let validation = order.split_off(n_train);
    Ok(Corpus {
        samples,
        alphabet,
        train: order,
        validation,
        test,
    })
}
