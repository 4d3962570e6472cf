//! Experiment plumbing shared by the subcommands: corpus preparation,
//! per-level training loops, evaluation and single-image recognition.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use linepyr::dataset::{parse_manifest, split_corpus, Corpus, SplitName};
use linepyr::eval::{report_levels, score_pairs, LevelId, LevelReport, LevelResult, RunMetrics};
use linepyr::filter_bank::{
    default_bank, featurize_level, featurize_pyramid, FeatureMode, FeatureSequence, FrameMeta,
};
use linepyr::pyramid::{build_pyramid, GaussianPyramid};
use linepyr::raster::{load_image, save_image, RasterImage};
use linepyr::seqmodel::{
    init_model, load_model, save_model, train_with_observer, EpochStats, ModelFile, ModelKind,
    SequenceModel, TrainSample,
};

use crate::config::{RunConfig, RESOLVED_NAME};
use crate::UsageError;

/// Model file extension.
pub const MODEL_EXT: &str = "ptxm";

/// Feature settings stored in every model so it can featurize new images.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub xheight: usize,
    pub max_levels: usize,
    pub min_height: usize,
    pub target: LevelId,
    /// Levels fused by a whole-pyramid model.
    pub pyramid_levels: usize,
}

impl FeatureSpec {
    fn to_meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("xheight".into(), self.xheight.to_string());
        m.insert("max_levels".into(), self.max_levels.to_string());
        m.insert("min_height".into(), self.min_height.to_string());
        m.insert("target".into(), self.target.to_string());
        m.insert("pyramid_levels".into(), self.pyramid_levels.to_string());
        m
    }

    fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
            meta.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| anyhow!("model header lacks a valid meta.{key}"))
        }
        Ok(FeatureSpec {
            xheight: get(meta, "xheight")?,
            max_levels: get(meta, "max_levels")?,
            min_height: get(meta, "min_height")?,
            target: get(meta, "target")?,
            pyramid_levels: get(meta, "pyramid_levels")?,
        })
    }

    fn pyramid(&self, img: &RasterImage) -> Result<GaussianPyramid> {
        Ok(build_pyramid(img, self.max_levels, self.min_height)?)
    }

    /// Features of one image's pyramid for this spec's target.
    fn features(&self, pyr: &GaussianPyramid) -> Result<FeatureSequence> {
        let bank = default_bank();
        match self.target {
            LevelId::Level(k) => {
                let level = pyr
                    .level(k)
                    .ok_or_else(|| anyhow!("image reaches only {} pyramid levels, need level {k}", pyr.level_count()))?;
                let seq = featurize_level(level, &bank, self.xheight)?;
                let meta = FrameMeta {
                    level: Some(k),
                    ..seq.meta()
                };
                Ok(seq.with_meta(meta)?)
            }
            LevelId::Whole => {
                if pyr.level_count() < self.pyramid_levels {
                    bail!(
                        "image reaches only {} pyramid levels, the model fuses {}",
                        pyr.level_count(),
                        self.pyramid_levels
                    );
                }
                let mut pyr = pyr.clone();
                pyr.truncate(self.pyramid_levels);
                Ok(featurize_pyramid(&pyr, &bank, self.xheight, FeatureMode::Whole)?.remove(0))
            }
        }
    }
}

/// A split corpus with every image's pyramid built once.
pub struct PreparedCorpus {
    pub corpus: Corpus,
    pyramids: Vec<GaussianPyramid>,
    /// Pyramid depth reached by every sample.
    pub reach: usize,
}

impl PreparedCorpus {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let manifest = cfg
            .manifest
            .as_ref()
            .ok_or_else(|| UsageError("no manifest given (config key `manifest` or --manifest)".into()))?;
        let samples = parse_manifest(manifest)?;
        if samples.is_empty() {
            bail!("manifest {} lists no samples", manifest.display());
        }
        let corpus = split_corpus(samples, cfg.split, cfg.split_seed)?;
        let mut pyramids = Vec::with_capacity(corpus.samples.len());
        for s in &corpus.samples {
            let img = s.load_image()?;
            let pyr = build_pyramid(&img, cfg.max_levels, cfg.min_height)
                .with_context(|| format!("building pyramid of {}", s.image_path.display()))?;
            pyramids.push(pyr);
        }
        let reach = pyramids.iter().map(GaussianPyramid::level_count).min().unwrap_or(0);
        Ok(PreparedCorpus {
            corpus,
            pyramids,
            reach,
        })
    }

    /// Labelled features of `indices` under `spec`.
    pub fn samples(&self, indices: &[usize], spec: &FeatureSpec) -> Result<Vec<TrainSample>> {
        indices
            .iter()
            .map(|&i| {
                let s = &self.corpus.samples[i];
                let features = spec
                    .features(&self.pyramids[i])
                    .with_context(|| format!("featurizing {}", s.image_path.display()))?;
                let label = self.corpus.alphabet.encode(&s.transcription)?;
                Ok(TrainSample { features, label })
            })
            .collect()
    }

    /// Targets the config asks for, checked against the corpus reach.
    pub fn targets(&self, cfg: &RunConfig) -> Result<Vec<LevelId>> {
        match cfg.mode {
            FeatureMode::Whole => Ok(vec![LevelId::Whole]),
            FeatureMode::PerLevel => {
                let levels = match &cfg.train_levels {
                    Some(l) => l.clone(),
                    None => (0..self.reach).collect(),
                };
                if let Some(&k) = levels.iter().find(|&&k| k >= self.reach) {
                    bail!(
                        "level {k} requested but some samples reach only {} levels \
                         (max_levels={}, min_height={})",
                        self.reach,
                        cfg.max_levels,
                        cfg.min_height
                    );
                }
                Ok(levels.into_iter().map(LevelId::Level).collect())
            }
        }
    }

    pub fn spec(&self, cfg: &RunConfig, target: LevelId) -> FeatureSpec {
        FeatureSpec {
            xheight: cfg.xheight,
            max_levels: cfg.max_levels,
            min_height: cfg.min_height,
            target,
            pyramid_levels: match target {
                LevelId::Whole => self.reach,
                LevelId::Level(_) => 1,
            },
        }
    }
}

/// `L<k>` or `whole`, as used in output file names.
pub fn target_tag(target: LevelId) -> String {
    match target {
        LevelId::Level(k) => format!("L{k}"),
        LevelId::Whole => "whole".into(),
    }
}

pub fn model_file_name(target: LevelId, seed: u64) -> String {
    format!("model.{}.seed{seed}.{MODEL_EXT}", target_tag(target))
}

/// One finished training job.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub target: LevelId,
    pub seed: u64,
    pub model_path: PathBuf,
    pub best_epoch: usize,
    pub epochs: usize,
    /// Exact-match rate on the validation set at the best epoch.
    pub validation_seq_accuracy: f64,
}

fn kind_for(cfg_kind: ModelKind, sample: &TrainSample) -> ModelKind {
    match cfg_kind {
        ModelKind::Blstm1d => ModelKind::Blstm1d,
        ModelKind::Mdlstm2d { .. } => ModelKind::Mdlstm2d {
            channels: sample.features.meta().channels,
        },
    }
}

/// Trains one model per target and seed, saving models and epoch logs into
/// `out_dir`. `progress` receives one line per epoch.
pub fn train_all(
    cfg: &RunConfig,
    out_dir: &Path,
    mut progress: impl FnMut(&str),
) -> Result<Vec<TrainedRun>> {
    cfg.validate()?;
    let prepared = PreparedCorpus::load(cfg)?;
    let targets = prepared.targets(cfg)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut runs = Vec::new();
    for target in targets {
        let spec = prepared.spec(cfg, target);
        let train_set = prepared.samples(&prepared.corpus.train, &spec)?;
        let validation = prepared.samples(&prepared.corpus.validation, &spec)?;
        let first = &train_set[0];
        let kind = kind_for(cfg.kind, first);
        for &seed in &cfg.seeds {
            let model = init_model(
                kind,
                first.features.frame_dim(),
                cfg.hidden_units,
                &prepared.corpus.alphabet,
                seed,
            )?;
            let tcfg = cfg.train_config(seed);
            let tag = format!("{}.seed{seed}", target_tag(target));
            let mut log = String::from("epoch,mean_loss,validation_cer,validation_line_accuracy\n");
            let outcome = train_with_observer(&model, &train_set, &validation, &tcfg, |s: &EpochStats| {
                let _ = writeln!(
                    log,
                    "{},{:.6},{:.6},{:.6}",
                    s.epoch, s.mean_loss, s.validation_error, s.validation_seq_accuracy
                );
                progress(&format!(
                    "{tag} epoch {} loss {:.4} val_cer {:.4} val_line_acc {:.3}",
                    s.epoch, s.mean_loss, s.validation_error, s.validation_seq_accuracy
                ));
            })
            .with_context(|| format!("training {tag}"))?;
            let model_path = out_dir.join(model_file_name(target, seed));
            save_model(
                &model_path,
                &ModelFile {
                    model: outcome.model,
                    train: tcfg,
                    meta: spec.to_meta(),
                },
            )?;
            let log_path = out_dir.join(format!("train.{tag}.csv"));
            fs::write(&log_path, log).with_context(|| format!("writing {}", log_path.display()))?;
            let best = &outcome.log[outcome.best_epoch - 1];
            runs.push(TrainedRun {
                target,
                seed,
                model_path,
                best_epoch: outcome.best_epoch,
                epochs: outcome.log.len(),
                validation_seq_accuracy: best.validation_seq_accuracy,
            });
        }
    }
    Ok(runs)
}

/// Model files of a directory in name order.
pub fn model_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == MODEL_EXT))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .{MODEL_EXT} models in {}", dir.display());
    }
    Ok(files)
}

/// Scores one model on labelled samples.
pub fn score_model(model: &SequenceModel, samples: &[TrainSample]) -> Result<RunMetrics> {
    let hyps = samples
        .iter()
        .map(|s| model.recognize(&s.features))
        .collect::<linepyr::Result<Vec<_>>>()?;
    let pairs: Vec<(&[usize], &[usize])> = samples
        .iter()
        .zip(&hyps)
        .map(|(s, h)| (s.label.as_slice(), h.as_slice()))
        .collect();
    Ok(score_pairs(&pairs)?)
}

/// Per-run scores of one evaluation.
#[derive(Debug, Clone)]
pub struct EvaluatedRun {
    pub target: LevelId,
    pub seed: u64,
    pub metrics: RunMetrics,
}

/// Evaluates every model in `models_dir` on `split` of the corpus recorded
/// in its resolved config.
pub fn evaluate_models(models_dir: &Path, split: SplitName) -> Result<(RunConfig, Vec<EvaluatedRun>)> {
    let cfg = RunConfig::from_file(&models_dir.join(RESOLVED_NAME))?;
    let prepared = PreparedCorpus::load(&cfg)?;
    let indices = prepared.corpus.split(split);
    if indices.is_empty() {
        bail!("the {split:?} split of {} is empty", models_dir.display());
    }
    let mut cache: HashMap<LevelId, Vec<TrainSample>> = HashMap::new();
    let mut runs = Vec::new();
    for path in model_files(models_dir)? {
        let file = load_model(&path)?;
        let spec = FeatureSpec::from_meta(&file.meta).with_context(|| path.display().to_string())?;
        if file.model.alphabet() != &prepared.corpus.alphabet {
            bail!("{} was trained on a different alphabet", path.display());
        }
        if let Entry::Vacant(slot) = cache.entry(spec.target) {
            slot.insert(prepared.samples(indices, &spec)?);
        }
        let metrics = score_model(&file.model, &cache[&spec.target])
            .with_context(|| format!("scoring {}", path.display()))?;
        runs.push(EvaluatedRun {
            target: spec.target,
            seed: file.model.seed(),
            metrics,
        });
    }
    Ok((cfg, runs))
}

/// Groups runs by level and writes the report CSV (plus `.txt` table and a
/// `.runs.csv` with every seed's scores).
pub fn write_report(runs: &[EvaluatedRun], out: &Path) -> Result<Vec<LevelReport>> {
    let mut by_level: BTreeMap<LevelId, Vec<RunMetrics>> = BTreeMap::new();
    for r in runs {
        by_level.entry(r.target).or_default().push(r.metrics);
    }
    let results: Vec<LevelResult> = by_level
        .into_iter()
        .map(|(level, runs)| LevelResult { level, runs })
        .collect();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let reports = report_levels(&results, out)?;
    let mut detail = String::from("level,seed,accuracy,line_accuracy,precision,recall\n");
    for r in runs {
        let m = &r.metrics;
        let _ = writeln!(
            detail,
            "{},{},{:.4},{:.4},{:.4},{:.4}",
            r.target, r.seed, m.accuracy, m.seq_accuracy, m.precision, m.recall
        );
    }
    let detail_path = out.with_extension("runs.csv");
    fs::write(&detail_path, detail).with_context(|| format!("writing {}", detail_path.display()))?;
    Ok(reports)
}

/// Greedy transcription of one image.
pub fn recognize_image(model_path: &Path, image: &Path) -> Result<String> {
    let file = load_model(model_path)?;
    let spec = FeatureSpec::from_meta(&file.meta).with_context(|| model_path.display().to_string())?;
    let img = load_image(image)?;
    let seq = spec.features(&spec.pyramid(&img)?)?;
    let indices = file.model.recognize(&seq)?;
    Ok(file.model.alphabet().decode(&indices))
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| anyhow!("{} has no file name", path.display()))
}

/// Writes every pyramid level as `<stem>.L<k>.pgm` (or `.ppm` for color).
pub fn write_pyramid(input: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let img = load_image(input)?;
    let pyr = build_pyramid(&img, cfg.max_levels, cfg.min_height)?;
    let stem = stem(input)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    pyr.levels()
        .iter()
        .enumerate()
        .map(|(k, level)| {
            let ext = if level.channels() == 1 { "pgm" } else { "ppm" };
            let path = out_dir.join(format!("{stem}.L{k}.{ext}"));
            save_image(&path, level)?;
            Ok(path)
        })
        .collect()
}

fn write_sequence(path: &Path, seq: &FeatureSequence) -> Result<()> {
    let mut buf = Vec::new();
    seq.write_to(&mut buf)?;
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

/// Featurizes one image, or every sample of a manifest, into FSEQ1 files
/// named `<stem>.L<k>.fseq` or `<stem>.whole.fseq`.
pub fn write_features(inputs: &[PathBuf], out_dir: &Path, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let bank = default_bank();
    let pyramids = inputs
        .iter()
        .map(|p| {
            let img = load_image(p)?;
            build_pyramid(&img, cfg.max_levels, cfg.min_height)
                .with_context(|| format!("building pyramid of {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    // Whole-pyramid sequences share one frame size across a batch.
    let reach = pyramids.iter().map(GaussianPyramid::level_count).min().unwrap_or(1);
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut seen = HashMap::new();
    let mut written = Vec::new();
    for (input, mut pyr) in inputs.iter().zip(pyramids) {
        let stem = stem(input)?;
        if let Some(prev) = seen.insert(stem.clone(), input.clone()) {
            bail!(
                "{} and {} share the output name {stem}",
                prev.display(),
                input.display()
            );
        }
        if cfg.mode == FeatureMode::Whole {
            pyr.truncate(reach);
        }
        for seq in featurize_pyramid(&pyr, &bank, cfg.xheight, cfg.mode)? {
            let tag = match (cfg.mode, seq.meta().level) {
                (FeatureMode::PerLevel, Some(k)) => format!("L{k}"),
                _ => "whole".into(),
            };
            let path = out_dir.join(format!("{stem}.{tag}.fseq"));
            write_sequence(&path, &seq)?;
            written.push(path);
        }
    }
    Ok(written)
}
