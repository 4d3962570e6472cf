//! Command-line front end for the text-line pyramid recognizer.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or I/O errors.

pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use linepyr::dataset::{parse_manifest, synth_generate, SplitName, SynthParams};

use config::RunConfig;

/// Marks errors caused by the invocation rather than the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "linepyr", version, about = "Pyramid features and CTC recognition for text lines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus per-key overrides; flags win over the file.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// `key=value` config file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override any config key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    xheight: Option<String>,
    /// Maximum pyramid levels, base included.
    #[arg(long = "levels", alias = "max-levels")]
    max_levels: Option<String>,
    #[arg(long)]
    min_height: Option<String>,
    /// per_level or whole.
    #[arg(long)]
    mode: Option<String>,
    /// blstm_1d or mdlstm_2d.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    hidden_units: Option<String>,
    /// Comma-separated seeds, one model per seed.
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated levels to train, or `all`.
    #[arg(long)]
    train_levels: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    /// Train,validation,test ratios.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    split_seed: Option<String>,
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let flags = [
            ("xheight", &self.xheight),
            ("max_levels", &self.max_levels),
            ("min_height", &self.min_height),
            ("mode", &self.mode),
            ("kind", &self.kind),
            ("hidden_units", &self.hidden_units),
            ("seeds", &self.seeds),
            ("train_levels", &self.train_levels),
            ("learning_rate", &self.learning_rate),
            ("momentum", &self.momentum),
            ("max_epochs", &self.max_epochs),
            ("patience", &self.patience),
            ("split", &self.split),
            ("split_seed", &self.split_seed),
        ];
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if let Some(m) = &self.manifest {
            cfg.manifest = Some(m.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write every Gaussian pyramid level of an image.
    Pyramid {
        #[arg(long = "in", value_name = "IMAGE")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write FSEQ1 feature files for an image or every manifest sample.
    Featurize {
        #[arg(long = "in", value_name = "IMAGE")]
        input: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate a synthetic right-to-left glyph corpus.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        glyph_count: Option<String>,
        #[arg(long)]
        lines: Option<String>,
        /// Glyphs per line, `lo,hi`.
        #[arg(long)]
        line_length: Option<String>,
        #[arg(long)]
        noise: Option<String>,
        #[arg(long)]
        seed: Option<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train one model per seed (and per level in per_level mode).
    Train {
        #[arg(long)]
        out_dir: PathBuf,
        /// Print one line per epoch to stderr.
        #[arg(long, short)]
        verbose: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a directory of trained models and write the levels report.
    Eval {
        /// Directory written by `train`.
        #[arg(long)]
        models: PathBuf,
        /// Report CSV path; a `.txt` table is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// train, validation or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Print the decoded transcription of one image.
    Recognize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
}

fn invocation(args: &[OsString]) -> String {
    args.iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join(" ")
}

fn execute(cli: Cli, invocation: &str) -> Result<()> {
    match cli.command {
        Command::Pyramid {
            input,
            out_dir,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            let written = pipeline::write_pyramid(&input, &out_dir, &cfg)?;
            cfg.write_resolved(&out_dir, invocation)?;
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Featurize {
            input,
            out_dir,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            let inputs = match (&input, &cfg.manifest) {
                (Some(img), _) => vec![img.clone()],
                (None, Some(m)) => parse_manifest(m)?.into_iter().map(|s| s.image_path).collect(),
                (None, None) => return Err(UsageError("featurize needs --in or --manifest".into()).into()),
            };
            let written = pipeline::write_features(&inputs, &out_dir, &cfg)?;
            cfg.write_resolved(&out_dir, invocation)?;
            println!("wrote {} feature files to {}", written.len(), out_dir.display());
        }
        Command::Synth {
            out_dir,
            glyph_count,
            lines,
            line_length,
            noise,
            seed,
            cfg,
        } => {
            let mut cfg = cfg.resolve()?;
            for (key, value) in [
                ("glyph_count", glyph_count),
                ("line_count", lines),
                ("line_length", line_length),
                ("noise_level", noise),
                ("synth_seed", seed),
            ] {
                if let Some(v) = value {
                    cfg.set(key, &v)?;
                }
            }
            let params = SynthParams {
                glyph_count: cfg.glyph_count,
                line_count: cfg.line_count,
                line_length: cfg.line_length,
                noise_level: cfg.noise_level,
                seed: cfg.synth_seed,
            };
            let manifest = synth_generate(&params, &out_dir).map_err(|e| match e {
                linepyr::Error::InvalidArgument(msg) => UsageError(msg).into(),
                other => anyhow::Error::from(other),
            })?;
            cfg.manifest = Some(manifest.clone());
            cfg.write_resolved(&out_dir, invocation)?;
            println!("{}", manifest.display());
        }
        Command::Train {
            out_dir,
            verbose,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            cfg.write_resolved(&out_dir, invocation)?;
            let runs = pipeline::train_all(&cfg, &out_dir, |line| {
                if verbose {
                    eprintln!("{line}");
                }
            })?;
            for r in runs {
                println!(
                    "{} seed {}: best epoch {} of {}, validation line accuracy {:.1}% -> {}",
                    pipeline::target_tag(r.target),
                    r.seed,
                    r.best_epoch,
                    r.epochs,
                    100.0 * r.validation_seq_accuracy,
                    r.model_path.display()
                );
            }
        }
        Command::Eval { models, out, split } => {
            let split: SplitName = split.parse().map_err(|e: linepyr::Error| UsageError(e.to_string()))?;
            let (cfg, runs) = pipeline::evaluate_models(&models, split)?;
            let reports = pipeline::write_report(&runs, &out)?;
            let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(std::path::Path::new("."));
            cfg.write_resolved(dir, invocation)?;
            print!("{}", linepyr::eval::render_table(&reports));
        }
        Command::Recognize { model, image } => {
            println!("{}", pipeline::recognize_image(&model, &image)?);
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, &invocation(&args)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<UsageError>()) {
                1
            } else {
                2
            }
        }
    }
}
