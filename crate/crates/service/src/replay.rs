//! Replays a recorded session next to its interpolated ground truth.

use std::str::FromStr;

use homeloc_core::ingest::{LogRecord, PositionSource};
use homeloc_core::segmentation::{build_feature_frame, interpolate_label, SegmentError, DEFAULT_MAX_GAP_MS};
use homeloc_core::{FloorPlan, LabelSample, StreamSet, TrainedModel};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplaySource {
    /// Positions logged while the session was live.
    #[default]
    Recorded,
    /// Positions predicted again from the logged readings with the current model.
    Recomputed,
}

impl FromStr for ReplaySource {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "recorded" => Ok(ReplaySource::Recorded),
            "recomputed" => Ok(ReplaySource::Recomputed),
            other => Err(ServiceError::BadRequest(format!("unknown replay source `{other}`"))),
        }
    }
}

/// One replayed instant. `estimate` is `None` where the tag was not heard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayFrame {
    pub t_ms: i64,
    pub tag_id: String,
    pub estimate: Option<[f64; 2]>,
    /// Interpolated label, absent outside labeled spans.
    pub truth: Option<[f64; 2]>,
    pub room: Option<String>,
    pub source: ReplaySource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReplayLine {
    Frame(ReplayFrame),
    End { frames: usize },
}

impl ReplayLine {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("replay line serializes");
        s.push('\n');
        s
    }
}

fn labels_of(records: &[(u64, LogRecord)]) -> Vec<LabelSample> {
    let mut labels: Vec<LabelSample> = records
        .iter()
        .filter_map(|(_, r)| match r {
            LogRecord::Label(l) => Some(l.clone()),
            _ => None,
        })
        .collect();
    labels.sort_by_key(|l| l.t_ms);
    labels
}

fn truth_at(labels: &[LabelSample], t_ms: i64) -> Option<[f64; 2]> {
    interpolate_label(labels, t_ms, DEFAULT_MAX_GAP_MS).map(|(x, y)| [x, y])
}

/// Frames from the positions and gaps that were logged live.
pub fn recorded_frames(records: &[(u64, LogRecord)]) -> Vec<ReplayFrame> {
    let labels = labels_of(records);
    let mut frames: Vec<ReplayFrame> = records
        .iter()
        .filter_map(|(_, r)| match r {
            LogRecord::Position(p) if p.source == PositionSource::Model => Some(ReplayFrame {
                t_ms: p.t_ms,
                tag_id: p.tag_id.clone(),
                estimate: Some([p.x_px, p.y_px]),
                truth: truth_at(&labels, p.t_ms),
                room: p.room.clone(),
                source: ReplaySource::Recorded,
            }),
            LogRecord::Gap { t_ms, tag_id } => Some(ReplayFrame {
                t_ms: *t_ms,
                tag_id: tag_id.clone(),
                estimate: None,
                truth: truth_at(&labels, *t_ms),
                room: None,
                source: ReplaySource::Recorded,
            }),
            _ => None,
        })
        .collect();
    frames.sort_by_key(|f| f.t_ms);
    frames
}

/// Frames predicted on a `step_ms` grid spanning the logged readings.
pub fn recomputed_frames(
    records: &[(u64, LogRecord)],
    tag_id: &str,
    model: &TrainedModel,
    floorplan: &FloorPlan,
    step_ms: i64,
) -> Result<Vec<ReplayFrame>, ServiceError> {
    let labels = labels_of(records);
    let streams = StreamSet::from_samples(records.iter().filter_map(|(_, r)| match r {
        LogRecord::Rssi(s) if s.tag_id == tag_id => Some(s.clone()),
        _ => None,
    }));
    let times: Vec<i64> = streams
        .iter()
        .flat_map(|s| [s.first_t(), s.last_t()])
        .flatten()
        .collect();
    let (Some(&lo), Some(&hi)) = (times.iter().min(), times.iter().max()) else {
        return Ok(Vec::new());
    };
    let spec = model.window();
    let first = lo.div_euclid(step_ms) * step_ms + step_ms;
    let mut frames = Vec::new();
    let mut t = first;
    while t <= hi {
        let estimate = match build_feature_frame(&streams, tag_id, &model.metadata.roster, spec, t) {
            Ok(frame) => model.predict_one(&frame)?.position().map(|p| [p.x_px, p.y_px]),
            Err(SegmentError::AllMissing { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        frames.push(ReplayFrame {
            t_ms: t,
            tag_id: tag_id.to_owned(),
            estimate,
            truth: truth_at(&labels, t),
            room: estimate
                .and_then(|[x, y]| floorplan.room_of(x, y))
                .map(|r| r.name.clone()),
            source: ReplaySource::Recomputed,
        });
        t += step_ms;
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use homeloc_core::ingest::PositionRecord;

    fn label(t_ms: i64, x: f64) -> LogRecord {
        LogRecord::Label(LabelSample {
            t_ms,
            x_px: x,
            y_px: 50.0,
            session_id: "s".into(),
        })
    }

    #[test]
    fn recorded_frames_carry_truth() {
        let records = vec![
            (0, label(1000, 0.0)),
            (1, label(3000, 20.0)),
            (
                2,
                LogRecord::Position(PositionRecord {
                    t_ms: 2000,
                    tag_id: "t".into(),
                    x_px: 12.0,
                    y_px: 50.0,
                    room: None,
                    source: PositionSource::Model,
                }),
            ),
            (
                3,
                LogRecord::Gap {
                    t_ms: 9000,
                    tag_id: "t".into(),
                },
            ),
        ];
        let frames = recorded_frames(&records);
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].estimate, Some([12.0, 50.0]));
        assert_eq!(frames[0].truth, Some([10.0, 50.0]));
        assert_eq!((frames[1].estimate, frames[1].truth), (None, None));
    }

    #[test]
    fn source_parses() {
        assert_eq!("Recomputed".parse::<ReplaySource>().unwrap(), ReplaySource::Recomputed);
        assert!("live".parse::<ReplaySource>().is_err());
    }
}
