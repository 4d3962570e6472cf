//! `key=value` run configuration with flag overrides.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use linepyr::dataset::DEFAULT_SPLIT;
use linepyr::filter_bank::FeatureMode;
use linepyr::pyramid::{DEFAULT_MIN_HEIGHT, MAX_LEVELS};
use linepyr::seqmodel::{ModelKind, TrainConfig};

use crate::UsageError;

/// File name written next to every command's outputs.
pub const RESOLVED_NAME: &str = "config.resolved.txt";

/// Everything a command needs besides its input/output paths.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub xheight: usize,
    pub max_levels: usize,
    pub min_height: usize,
    pub mode: FeatureMode,
    /// Channel count of `mdlstm_2d` is filled in from the features.
    pub kind: ModelKind,
    pub hidden_units: usize,
    pub seeds: Vec<u64>,
    /// Pyramid levels to train in per-level mode; `None` means every level
    /// the whole corpus reaches.
    pub train_levels: Option<Vec<usize>>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub split: [f64; 3],
    pub split_seed: u64,
    pub manifest: Option<PathBuf>,
    pub glyph_count: usize,
    pub line_count: usize,
    pub line_length: (usize, usize),
    pub noise_level: f64,
    pub synth_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            xheight: 60,
            max_levels: MAX_LEVELS,
            min_height: DEFAULT_MIN_HEIGHT,
            mode: FeatureMode::PerLevel,
            kind: ModelKind::Blstm1d,
            hidden_units: 100,
            seeds: vec![1, 2, 3],
            train_levels: None,
            learning_rate: train.learning_rate,
            momentum: train.momentum,
            max_epochs: train.max_epochs,
            patience: train.patience,
            split: DEFAULT_SPLIT,
            split_seed: 0,
            manifest: None,
            glyph_count: 10,
            line_count: 200,
            line_length: (3, 8),
            noise_level: 0.05,
            synth_seed: 7,
        }
    }
}

fn usage(msg: String) -> anyhow::Error {
    UsageError(msg).into()
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| usage(format!("invalid value {value:?} for {key}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Reads a config file over the defaults. Relative `manifest` paths are
    /// resolved against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = RunConfig::default();
        let base = path.parent().unwrap_or(Path::new(""));
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                usage(format!("{}:{}: expected key=value", path.display(), n + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .with_context(|| format!("{}:{}", path.display(), n + 1))?;
            if key.trim() == "manifest" {
                cfg.manifest = cfg.manifest.map(|m| base.join(m));
            }
        }
        Ok(cfg)
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "xheight" => self.xheight = parse(key, value)?,
            "max_levels" => self.max_levels = parse(key, value)?,
            "min_height" => self.min_height = parse(key, value)?,
            "mode" => self.mode = parse(key, value)?,
            "kind" => self.kind = parse(key, value)?,
            "hidden_units" => self.hidden_units = parse(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "train_levels" => {
                self.train_levels = match value.trim() {
                    "" | "all" => None,
                    v => Some(parse_list(key, v)?),
                }
            }
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "split" => {
                let v: Vec<f64> = parse_list(key, value)?;
                self.split = v
                    .try_into()
                    .map_err(|_| usage(format!("split needs three ratios, got {value:?}")))?;
            }
            "split_seed" => self.split_seed = parse(key, value)?,
            "manifest" => self.manifest = Some(PathBuf::from(value.trim())),
            "glyph_count" => self.glyph_count = parse(key, value)?,
            "line_count" => self.line_count = parse(key, value)?,
            "line_length" => {
                let v: Vec<usize> = parse_list(key, value)?;
                self.line_length = match v[..] {
                    [lo, hi] => (lo, hi),
                    [n] => (n, n),
                    _ => return Err(usage(format!("line_length needs lo,hi, got {value:?}"))),
                };
            }
            "noise_level" => self.noise_level = parse(key, value)?,
            "synth_seed" => self.synth_seed = parse(key, value)?,
            other => return Err(usage(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.xheight == 0 || self.hidden_units == 0 {
            return Err(usage("xheight and hidden_units must be at least 1".into()));
        }
        if !(1..=MAX_LEVELS).contains(&self.max_levels) {
            return Err(usage(format!("max_levels must be in [1, {MAX_LEVELS}]")));
        }
        if self.min_height < 2 {
            return Err(usage("min_height must be at least 2".into()));
        }
        if self.seeds.is_empty() {
            return Err(usage("seeds must list at least one seed".into()));
        }
        self.train_config(0).validate().map_err(|e| usage(e.to_string()))?;
        Ok(())
    }

    /// Optimizer settings for one run; the shuffle order follows the seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            max_epochs: self.max_epochs,
            patience: self.patience,
            shuffle_seed: seed,
        }
    }

    /// Canonical `key=value` rendering; parses back to the same config.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("xheight", self.xheight.to_string());
        kv("max_levels", self.max_levels.to_string());
        kv("min_height", self.min_height.to_string());
        kv("mode", self.mode.to_string());
        kv("kind", self.kind.name().to_string());
        kv("hidden_units", self.hidden_units.to_string());
        kv("seeds", join(&self.seeds));
        kv(
            "train_levels",
            self.train_levels.as_deref().map_or("all".into(), join),
        );
        kv("learning_rate", format!("{:?}", self.learning_rate));
        kv("momentum", format!("{:?}", self.momentum));
        kv("max_epochs", self.max_epochs.to_string());
        kv("patience", self.patience.to_string());
        kv("split", self.split.map(|r| format!("{r:?}")).join(","));
        kv("split_seed", self.split_seed.to_string());
        if let Some(m) = &self.manifest {
            kv("manifest", m.display().to_string());
        }
        kv("glyph_count", self.glyph_count.to_string());
        kv("line_count", self.line_count.to_string());
        kv(
            "line_length",
            format!("{},{}", self.line_length.0, self.line_length.1),
        );
        kv("noise_level", format!("{:?}", self.noise_level));
        kv("synth_seed", self.synth_seed.to_string());
        s
    }

    /// Writes the resolved config into `dir`, headed by the invocation that
    /// produced it.
    pub fn write_resolved(&self, dir: &Path, invocation: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RESOLVED_NAME);
        let mut cfg = self.clone();
        // Absolute manifest paths keep the file usable from any directory.
        if let Some(m) = &cfg.manifest {
            cfg.manifest = Some(fs::canonicalize(m).unwrap_or_else(|_| m.clone()));
        }
        let text = format!("# {invocation}\n{}", cfg.render());
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
