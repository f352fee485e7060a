//! Networks, losses, optimizer, baselines and the model file.
//!
//! Frames enter the networks as sequences: the step axis is time and the
//! channel axis is `source * 3 + aggregation` (plus one mask channel per cell
//! when enabled). Everything is `f64` and the backward pass is written out by
//! hand for each layer.

pub mod adam;
pub mod config;
pub mod forest;
pub mod gradcheck;
pub mod knn;
pub mod layers;
pub mod loss;
pub mod network;
pub mod normalize;
pub mod persist;
pub mod predict;
pub mod train;

use thiserror::Error;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use config::{DropoutPlacement, ForestConfig, Head, ModelConfig, ModelKind, TrainConfig};
pub use forest::{RegressionForest, Tree};
pub use gradcheck::{grad_check, GradCheckReport};
pub use knn::{knn_predict, KnnIndex};
pub use layers::{Act, ParamStore};
pub use loss::{loss_cross_entropy, loss_mse};
pub use network::{Network, Targets};
pub use normalize::{InputShape, Normalization};
pub use persist::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use predict::{PositionEstimate, Prediction, RoomDistribution};
pub use train::{train, ModelBody, TrainedModel, TrainingMetadata};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("class index {index} out of range for {n_classes} classes")]
    IndexOutOfRange { index: usize, n_classes: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("k = {k} exceeds the {n} stored samples")]
    KTooLarge { k: usize, n: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (last finite loss {last_finite:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        last_finite: Option<f64>,
    },
    #[error("{kind} does not support the {head} head")]
    UnsupportedHead { kind: String, head: String },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("model file checksum mismatch")]
    Checksum,
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
