//! Per-level result tables: CSV plus a plain-text rendering.

use std::fmt;
use std::fs;
use std::path::Path;

use super::metrics::{f_measure, RunMetrics};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "level,accuracy_mean,accuracy_std,precision,recall,f_measure";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LevelId {
    Level(usize),
    /// All levels fused into one feature sequence.
    Whole,
}

impl fmt::Display for LevelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevelId::Level(k) => write!(f, "{k}"),
            LevelId::Whole => f.write_str("whole"),
        }
    }
}

impl std::str::FromStr for LevelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whole" => Ok(LevelId::Whole),
            k => k
                .parse()
                .map(LevelId::Level)
                .map_err(|_| Error::invalid(format!("unknown level {s:?}"))),
        }
    }
}

/// Runs of one level, one entry per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub level: LevelId,
    pub runs: Vec<RunMetrics>,
}

/// One table row. `precision` and `recall` are the seed means rounded to
/// two decimals and `f_measure` is their exact harmonic mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelReport {
    pub level: LevelId,
    pub accuracy_mean: f64,
    /// Sample standard deviation across seeds.
    pub accuracy_std: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub seq_accuracy_mean: f64,
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn mean(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    xs.sum::<f64>() / n
}

pub fn summarize(result: &LevelResult) -> Result<LevelReport> {
    let runs = &result.runs;
    if runs.len() < 2 {
        return Err(Error::invalid(format!(
            "level {} has {} run(s); a standard deviation needs at least 2",
            result.level,
            runs.len()
        )));
    }
    let n = runs.len() as f64;
    let acc = runs.iter().map(|r| r.accuracy);
    let accuracy_mean = mean(acc.clone());
    let var = acc.map(|a| (a - accuracy_mean).powi(2)).sum::<f64>() / (n - 1.0);
    let precision = round2(mean(runs.iter().map(|r| r.precision)));
    let recall = round2(mean(runs.iter().map(|r| r.recall)));
    Ok(LevelReport {
        level: result.level,
        accuracy_mean,
        accuracy_std: var.sqrt(),
        precision,
        recall,
        f_measure: f_measure(precision, recall),
        seq_accuracy_mean: mean(runs.iter().map(|r| r.seq_accuracy)),
    })
}

fn sorted_reports(results: &[LevelResult]) -> Result<Vec<LevelReport>> {
    if results.is_empty() {
        return Err(Error::invalid("no level results to report"));
    }
    let mut reports = results.iter().map(summarize).collect::<Result<Vec<_>>>()?;
    reports.sort_by_key(|r| r.level);
    Ok(reports)
}

pub fn render_csv(reports: &[LevelReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{:.2},{:.2},{:.2},{:.2},{:.2}\n",
            r.level, r.accuracy_mean, r.accuracy_std, r.precision, r.recall, r.f_measure
        ));
    }
    out
}

/// Fixed-width table with `mean ± std` accuracies.
pub fn render_table(reports: &[LevelReport]) -> String {
    let mut out = format!(
        "{:<8}{:<18}{:<11}{:<8}{:<11}{}\n",
        "level", "accuracy", "precision", "recall", "f_measure", "line_accuracy"
    );
    for r in reports {
        let label = match r.level {
            LevelId::Level(k) => format!("py-{}", k + 1),
            LevelId::Whole => "whole".to_string(),
        };
        out.push_str(&format!(
            "{:<8}{:<18}{:<11.2}{:<8.2}{:<11.2}{:.2}\n",
            label,
            format!("{:.2} ± {:.2}", r.accuracy_mean, r.accuracy_std),
            r.precision,
            r.recall,
            r.f_measure,
            r.seq_accuracy_mean
        ));
    }
    out
}

/// Writes the CSV to `out_path` and the text table next to it with a
/// `.txt` extension.
pub fn report_levels(results: &[LevelResult], out_path: impl AsRef<Path>) -> Result<Vec<LevelReport>> {
    let out_path = out_path.as_ref();
    let reports = sorted_reports(results)?;
    fs::write(out_path, render_csv(&reports)).map_err(|e| Error::io(out_path, e))?;
    let txt = out_path.with_extension("txt");
    fs::write(&txt, render_table(&reports)).map_err(|e| Error::io(&txt, e))?;
    Ok(reports)
}
