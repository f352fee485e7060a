use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::frame::{build_feature_frame, FeatureFrame};
use super::label::{interpolate_label, DEFAULT_MAX_GAP_MS};
use super::window::WindowSpec;
use super::SegmentError;
use crate::floorplan::{FloorPlan, RoomLabel};
use crate::ingest::{LabelSample, StreamSet, Tech};

/// Regression target in pixels and in canvas-normalized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPoint {
    pub x_px: f64,
    pub y_px: f64,
    pub x_norm: f64,
    pub y_norm: f64,
    pub room: Option<RoomLabel>,
}

impl TargetPoint {
    pub fn new(x_px: f64, y_px: f64, floorplan: &FloorPlan) -> Self {
        Self {
            x_px,
            y_px,
            x_norm: x_px / f64::from(floorplan.width_px),
            y_norm: y_px / f64::from(floorplan.height_px),
            room: floorplan.room_of(x_px, y_px).cloned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub frame: FeatureFrame,
    pub target: TargetPoint,
    pub session_id: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscardReport {
    pub grid_points: usize,
    pub gap_dropped: usize,
    pub all_missing_dropped: usize,
}

impl DiscardReport {
    pub fn kept(&self) -> usize {
        self.grid_points - self.gap_dropped - self.all_missing_dropped
    }

    pub fn discard_fraction(&self) -> f64 {
        if self.grid_points == 0 {
            0.0
        } else {
            (self.gap_dropped + self.all_missing_dropped) as f64 / self.grid_points as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub spec: WindowSpec,
    pub roster: Vec<String>,
    pub tag_id: String,
    pub tech: Option<Tech>,
    pub step_ms: i64,
    pub max_gap_ms: i64,
}

impl SegmentConfig {
    pub fn new(spec: WindowSpec, roster: Vec<String>, tag_id: impl Into<String>) -> Self {
        Self {
            spec,
            roster,
            tag_id: tag_id.into(),
            tech: None,
            step_ms: 1000,
            max_gap_ms: DEFAULT_MAX_GAP_MS,
        }
    }

    pub fn with_tech(mut self, tech: Tech) -> Self {
        self.tech = Some(tech);
        self
    }
}

/// Aligned (frame, target) pairs plus everything needed to interpret them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub config: SegmentConfig,
    pub floorplan: FloorPlan,
    pub samples: Vec<TrainingSample>,
    pub discards: DiscardReport,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn frame_shape(&self) -> (usize, usize) {
        (self.config.roster.len(), self.config.spec.n_steps)
    }

    /// Subset by sample index, sharing config and floor plan.
    pub fn subset(&self, idx: &[usize]) -> TrainingSet {
        TrainingSet {
            config: self.config.clone(),
            floorplan: self.floorplan.clone(),
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            discards: DiscardReport::default(),
        }
    }
}

/// Grid `t*` at `step_ms` over each session's labeled span and pair each
/// point's feature frame with its interpolated ground truth. Points in a
/// labeling gap or with no readings at all are dropped and counted.
pub fn generate_training_set(
    streams: &StreamSet,
    labels: &[LabelSample],
    floorplan: &FloorPlan,
    config: &SegmentConfig,
) -> Result<TrainingSet, SegmentError> {
    if config.step_ms <= 0 {
        return Err(SegmentError::InvalidWindow("grid step must be positive".into()));
    }
    let mut sessions: BTreeMap<&str, Vec<LabelSample>> = BTreeMap::new();
    for l in labels {
        sessions.entry(l.session_id.as_str()).or_default().push(l.clone());
    }
    let mut samples = Vec::new();
    let mut discards = DiscardReport::default();
    for (session, mut session_labels) in sessions {
        session_labels.sort_by_key(|l| l.t_ms);
        let (Some(first), Some(last)) = (session_labels.first(), session_labels.last()) else {
            continue;
        };
        let grid: Vec<i64> = (0..)
            .map(|k| first.t_ms + k * config.step_ms)
            .take_while(|t| *t <= last.t_ms)
            .collect();
        discards.grid_points += grid.len();
        let results: Vec<Result<TrainingSample, Drop>> = grid
            .par_iter()
            .map(|&t| {
                let (x, y) = interpolate_label(&session_labels, t, config.max_gap_ms).ok_or(Drop::Gap)?;
                let frame = build_feature_frame(streams, &config.tag_id, &config.roster, &config.spec, t)
                    .map_err(|_| Drop::AllMissing)?;
                Ok(TrainingSample {
                    frame,
                    target: TargetPoint::new(x, y, floorplan),
                    session_id: session.to_owned(),
                })
            })
            .collect();
        for r in results {
            match r {
                Ok(s) => samples.push(s),
                Err(Drop::Gap) => discards.gap_dropped += 1,
                Err(Drop::AllMissing) => discards.all_missing_dropped += 1,
            }
        }
    }
    if samples.is_empty() {
        return Err(SegmentError::EmptyTrainingSet);
    }
    Ok(TrainingSet {
        config: config.clone(),
        floorplan: floorplan.clone(),
        samples,
        discards,
    })
}

enum Drop {
    Gap,
    AllMissing,
}
