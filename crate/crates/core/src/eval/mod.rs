//! Edit-distance metrics and per-level report tables.

mod metrics;
mod report;

pub use metrics::{
    alignment_matches, character_error_rate, f_measure, levenshtein, precision_recall_f,
    score_pairs, RunMetrics,
};
pub use report::{
    render_csv, render_table, report_levels, summarize, LevelId, LevelReport, LevelResult,
    CSV_HEADER,
};
