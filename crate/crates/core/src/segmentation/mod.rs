//! Sliding-window aggregation, feature frames, label interpolation and
//! training-set assembly.

pub mod file;
pub mod frame;
pub mod label;
pub mod summary;
pub mod training;
pub mod window;

use std::path::PathBuf;

use thiserror::Error;

pub use file::{read_training_set, write_training_set, DATASET_MAGIC, DATASET_VERSION};
pub use frame::{build_feature_frame, FeatureFrame, AGGREGATIONS, AGG_MAX, AGG_MEAN, AGG_MIN, MISSING_FILL_DBM, N_AGG};
pub use label::{interpolate_label, DEFAULT_MAX_GAP_MS};
pub use summary::{summarize_dataset, DatasetSummary};
pub use training::{generate_training_set, DiscardReport, SegmentConfig, TargetPoint, TrainingSample, TrainingSet};
pub use window::{aggregate_window, Aggregate, WindowMode, WindowSpec};

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("anchor roster is empty")]
    EmptyRoster,
    #[error("every cell of the frame at t*={t_star_ms} is missing")]
    AllMissing { t_star_ms: i64 },
    #[error("no training pairs survived segmentation")]
    EmptyTrainingSet,
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset file: {0}")]
    Format(String),
}
