//! Recorded and live RSSI/label ingestion.

pub mod dataset;
pub mod live;
pub mod log;
pub mod record;
pub mod reorder;
pub mod stream;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use dataset::{load_dataset, load_flat, DataFile, IngestReport, LoadOptions, LoadedDataset};
pub use live::{
    loopback, subscribe_live, BusEvent, BusMessage, BusSource, Clock, LiveOptions, LiveRecord, LiveStats, ManualClock,
    MqttConfig, MqttSource, Stamped, SubscriptionHandle, SystemClock, TimestampMode, Topic,
};
pub use log::{read_session, LogRecord, PositionRecord, PositionSource, SessionLog};
pub use record::{
    normalize_epoch, parse_label_record, parse_rssi_record, serialize_label_record, serialize_rssi_record, Delimiter,
    EpochUnit, LabelSample, RecordKind, RecordSchema, RssiSample, Tech,
};
pub use reorder::ReorderBuffer;
pub use stream::{Reading, SampleStream, StreamKey, StreamSet};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed record: {reason}")]
    MalformedRecord { reason: String },
    #[error("timestamp `{0}` out of range")]
    TimestampOutOfRange(String),
    #[error("non-finite rssi `{0}`")]
    NonFiniteRssi(String),
    #[error("label ({x}, {y}) lies outside the floor plan canvas")]
    LabelOutOfCanvas { x: f64, y: f64 },
    #[error("{}:{line}: {source}", path.display())]
    AtLine {
        path: PathBuf,
        line: usize,
        #[source]
        source: Box<IngestError>,
    },
    #[error("no valid samples in dataset")]
    EmptyDataset,
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bus: {0}")]
    Bus(String),
    #[error("bus connection lost: {0}")]
    ConnectionLost(String),
}

impl IngestError {
    pub fn malformed(reason: impl Into<String>) -> Self {
        IngestError::MalformedRecord { reason: reason.into() }
    }

    pub fn at(self, path: &Path, line: usize) -> Self {
        IngestError::AtLine {
            path: path.to_path_buf(),
            line,
            source: Box::new(self),
        }
    }
}
