use homeloc_core::ingest::{LabelSample, PositionSource};
use homeloc_core::model::PositionEstimate;
use homeloc_core::RoomLabel;
use serde::{Deserialize, Serialize};

use crate::session::Session;

/// A predicted (or labeled) position for one tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LivePosition {
    pub t_ms: i64,
    pub tag_id: String,
    pub estimate: PositionEstimate,
    /// `room_of(estimate)` for model output.
    pub room: Option<RoomLabel>,
    pub source: PositionSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEcho {
    pub session_id: String,
    /// Position in the session log.
    pub seq: u64,
    pub label: LabelSample,
    pub room: Option<RoomLabel>,
}

/// Records pushed on the event channel, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Position(LivePosition),
    /// No anchor heard the tag for a whole window; there is deliberately no position.
    Gap {
        t_ms: i64,
        tag_id: String,
    },
    Label(LabelEcho),
    Session(Session),
}

impl Event {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("event serializes");
        s.push('\n');
        s
    }
}
