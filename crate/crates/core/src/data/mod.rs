//! Dataset ingestion, task splits, episode sampling, checkpoints and the
//! synthetic task generator.

mod checkpoint;
mod dataset;
mod episode;
pub mod synthetic;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    FORMAT_VERSION, MAGIC,
};
pub use dataset::{
    load_dataset, read_dataset, split_tasks, IngestReport, LoadOptions, Molecule, MultiTaskDataset,
    RowFailure, TaskSplit,
};
pub use episode::{build_episode, Episode, Example, QuerySize};
pub use synthetic::{
    generate_synthetic, generate_synthetic_with, Motif, SyntheticConfig, SyntheticDataset,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("dataset has no usable molecules")]
    EmptyDataset,
    #[error("unknown task name {0:?}")]
    UnknownTaskName(String),
    #[error("unknown task id {0}")]
    UnknownTaskId(usize),
    #[error("task {task} has {available} molecules of class {class}, needs {needed}")]
    InsufficientClassData {
        task: String,
        class: u8,
        available: usize,
        needed: usize,
    },
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("tensor {name} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        found: [usize; 2],
        expected: [usize; 2],
    },
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint has unexpected tensor {0}")]
    UnexpectedTensor(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("{0}")]
    Malformed(String),
}
