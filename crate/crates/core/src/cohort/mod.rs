//! Cohort manifests, splitting, and the evaluation commands behind the CLI.

mod commands;
pub mod format;
mod manifest;
mod scores;
mod split;

use std::path::PathBuf;

use thiserror::Error;

pub use commands::{
    cmd_correlate, cmd_dose, cmd_evaluate, cmd_infer, cmd_report, cmd_stats_grouped, cmd_stats_paired, grouped_rows,
    infer_case, summarize_scores, CaseFailure, CommandOutput, Grouping, InferOptions, PredictorSource, StatsRow,
    StructureSummary, DEFAULT_FAMILY_SIZE, INFERENCE_SPACING,
};
pub use manifest::{
    load_manifest, read_manifest, write_manifest, write_manifest_to, CaseRecord, CohortManifest, Contrast, Position,
    Sex, MANIFEST_COLUMNS,
};
pub use scores::{read_scores, scores_path, write_scores, ScoreRow, SegMetric, SCORES_HEADER};
pub use split::{kfold, stratified_split, SplitAssignment};

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest is missing column `{0}`")]
    MissingColumn(String),
    #[error("manifest has column `{0}` more than once")]
    DuplicateColumn(String),
    #[error("line {line}, column {column}: invalid value `{value}`: {reason}")]
    InvalidValue {
        line: u64,
        column: String,
        value: String,
        reason: String,
    },
    #[error("duplicate case_id `{case_id}` on line {line}")]
    DuplicateCaseId { case_id: String, line: u64 },
    #[error("stratum {stratum}: requested {requested} cases but only {available} available (short by {})", requested - available)]
    InsufficientStratum {
        stratum: String,
        requested: usize,
        available: usize,
    },
    #[error("cannot split {n} cases into {k} folds")]
    InvalidFolds { k: usize, n: usize },
    #[error("manifest contains no cases")]
    EmptyManifest,
    #[error("case `{case_id}` has no {field}")]
    MissingField { case_id: String, field: &'static str },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Volume(#[from] crate::volume::VolumeError),
    #[error(transparent)]
    Dose(#[from] crate::dosimetry::DoseError),
}
