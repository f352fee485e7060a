//! Live tracking service: subscribes to the tag bus, predicts positions once
//! per tick, records labeling sessions and exposes everything over HTTP with
//! a newline-delimited JSON event stream.

pub mod app;
pub mod clock;
pub mod error;
pub mod events;
pub mod replay;
pub mod session;
pub mod tracker;

pub use app::{router, AppState, Service, ServiceConfig};
pub use clock::TokioClock;
pub use error::ServiceError;
pub use events::{Event, LabelEcho, LivePosition};
pub use replay::{ReplayFrame, ReplayLine, ReplaySource};
pub use session::{Session, SessionState, SessionStore};
pub use tracker::Tracker;
