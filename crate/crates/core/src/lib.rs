//! Indoor localization from RSSI fingerprints.
//!
//! Timestamped RSSI streams from fixed anchors are cut into sliding temporal
//! windows, aggregated (mean, max, min) into fixed-shape feature frames, and
//! regressed onto 2D floor-plan positions by convolutional/recurrent networks
//! or by kNN and random-forest baselines.
//!
//! * [`ingest`]: recorded file formats, live bus subscription, session logs.
//! * [`segmentation`]: window aggregation, feature frames, label interpolation.
//! * [`model`]: the network stack, losses, Adam, baselines and model files.
//! * [`experiment`]: cross-validation, metrics, external estimate scoring.
//! * [`floorplan`]: canvas geometry, rooms and anchors.
//! * [`synth`]: path-loss simulator for test datasets.

pub mod experiment;
pub mod floorplan;
pub mod ingest;
pub mod model;
pub mod segmentation;
pub mod synth;

pub use floorplan::{Anchor, FlatConfig, FloorPlan, Room, RoomLabel};
pub use ingest::{LabelSample, RssiSample, SampleStream, StreamSet, Tech};
pub use model::{ModelConfig, ModelKind, Prediction, TrainedModel};
pub use segmentation::{FeatureFrame, TargetPoint, TrainingSet, WindowMode, WindowSpec};
