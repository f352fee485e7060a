//! Cross-validated evaluation over a model x window matrix, metric
//! conversion to metres, and scoring of externally produced positions.

pub mod external;
pub mod kfold;
pub mod matrix;
pub mod metrics;
pub mod report;

use thiserror::Error;

use crate::ingest::IngestError;
use crate::model::ModelError;
use crate::segmentation::SegmentError;

pub use external::{parse_estimates, read_estimates, score_external_estimates, ExternalEstimate, ExternalScore};
pub use kfold::{kfold_split, kfold_split_grouped, Fold};
pub use matrix::{cell_seed, run_cell, run_matrix, ExperimentConfig, MatrixData, MatrixPreset, MatrixSpec};
pub use metrics::{
    evaluate_regression, evaluate_rooms, predicted_room, regression_metrics, room_metrics, RegressionMetrics,
    RoomMetrics,
};
pub use report::{EvalReport, EvalRow, RowStatus};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("dataset of {n} samples cannot be split into {k} folds")]
    DatasetTooSmall { n: usize, k: usize },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("no estimate falls inside a labeled span")]
    NoOverlap,
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{0}")]
    Parse(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
