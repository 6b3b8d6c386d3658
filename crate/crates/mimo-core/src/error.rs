use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by loading, validation and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to read npy file {path}: {reason}")]
    NpyRead { path: PathBuf, reason: String },

    #[error("failed to write npy file {path}: {reason}")]
    NpyWrite { path: PathBuf, reason: String },

    #[error("{path}: expected rank {expected}, got rank {got}")]
    WrongRank {
        path: PathBuf,
        expected: usize,
        got: usize,
    },

    #[error("{path}: label {label} at voxel {index:?} exceeds organ count {organs}")]
    LabelOutOfRange {
        path: PathBuf,
        label: u16,
        index: (usize, usize, usize),
        organs: usize,
    },

    #[error("non-positive spacing {spacing:?}")]
    BadSpacing { spacing: [f64; 3] },

    #[error("{path}: expected {expected} probability channels, got {got}")]
    ClassCountMismatch {
        path: PathBuf,
        expected: usize,
        got: usize,
    },

    #[error("{path}: probability {value} at {index:?} outside [0,1]")]
    ProbabilityOutOfRange {
        path: PathBuf,
        value: f32,
        index: (usize, usize, usize),
    },

    #[error("{path}: per-voxel probability sum {sum} at {index:?} violates normalization (tolerance {tolerance})")]
    NotNormalized {
        path: PathBuf,
        sum: f32,
        index: (usize, usize, usize),
        tolerance: f32,
    },

    #[error("manifest {path}: {reason}")]
    BadManifest { path: PathBuf, reason: String },

    #[error("manifest {manifest}: referenced file does not exist: {path}")]
    DanglingPath { manifest: PathBuf, path: PathBuf },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("organ index {index} out of range 1..={organs}")]
    OrganIndexOutOfRange { index: usize, organs: usize },

    #[error("prediction disagrees with probability argmax on {rate:.4} of voxels (limit {limit})")]
    ArgmaxInconsistent { rate: f64, limit: f64 },

    #[error("empty input: {context}")]
    EmptyInput { context: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("length mismatch in {context}: {left} vs {right}")]
    LengthMismatch {
        context: String,
        left: usize,
        right: usize,
    },

    #[error("organ '{organ}': every Hausdorff distance is infinite, cannot form a threshold")]
    AllInfiniteColumn { organ: String },

    #[error("organ sets disagree: {reason}")]
    OrganMismatch { reason: String },

    #[error("invalid configuration: {reason}")]
    BadConfig { reason: String },

    #[error("metric table {path}: {reason}")]
    BadTable { path: PathBuf, reason: String },

    #[error("while processing sample '{sample}', organ '{organ}': {source}")]
    InContext {
        sample: String,
        organ: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
