use serde::{Deserialize, Serialize};

use super::window::{aggregate_window, WindowSpec};
use super::SegmentError;
use crate::ingest::StreamSet;

/// Aggregations per (source, step), in slot order: mean, max, min.
pub const AGGREGATIONS: [&str; 3] = ["mean", "max", "min"];
pub const N_AGG: usize = AGGREGATIONS.len();
pub const AGG_MEAN: usize = 0;
pub const AGG_MAX: usize = 1;
pub const AGG_MIN: usize = 2;

/// Value written into cells with no readings, in dBm.
pub const MISSING_FILL_DBM: f64 = -100.0;

/// Aggregated features for one tag at one time step, shaped
/// `n_sources x 3 x n_steps` and stored source-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub t_star_ms: i64,
    pub tag_id: String,
    pub n_sources: usize,
    pub n_steps: usize,
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

impl FeatureFrame {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_sources, N_AGG, self.n_steps)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, source: usize, agg: usize, step: usize) -> usize {
        (source * N_AGG + agg) * self.n_steps + step
    }

    pub fn value(&self, source: usize, agg: usize, step: usize) -> f64 {
        self.values[self.index(source, agg, step)]
    }

    pub fn is_missing(&self, source: usize, agg: usize, step: usize) -> bool {
        self.missing[self.index(source, agg, step)]
    }

    pub fn all_missing(&self) -> bool {
        self.missing.iter().all(|&m| m)
    }
}

/// Builds the frame for `tag_id` at `t_star_ms`. Roster order fixes the
/// source axis; roster entries without a stream are treated as silent.
pub fn build_feature_frame(
    streams: &StreamSet,
    tag_id: &str,
    roster: &[String],
    spec: &WindowSpec,
    t_star_ms: i64,
) -> Result<FeatureFrame, SegmentError> {
    if roster.is_empty() {
        return Err(SegmentError::EmptyRoster);
    }
    let n_steps = spec.n_steps;
    let len = roster.len() * N_AGG * n_steps;
    let mut frame = FeatureFrame {
        t_star_ms,
        tag_id: tag_id.to_owned(),
        n_sources: roster.len(),
        n_steps,
        values: vec![MISSING_FILL_DBM; len],
        missing: vec![true; len],
    };
    let intervals = spec.intervals(t_star_ms);
    for (s, source) in roster.iter().enumerate() {
        let Some(stream) = streams.get(source, tag_id) else {
            continue;
        };
        for (k, &(lo, hi)) in intervals.iter().enumerate() {
            if let Some(agg) = aggregate_window(stream.readings(), lo, hi) {
                for (a, v) in [(AGG_MEAN, agg.mean), (AGG_MAX, agg.max), (AGG_MIN, agg.min)] {
                    let i = frame.index(s, a, k);
                    frame.values[i] = v;
                    frame.missing[i] = false;
                }
            }
        }
    }
    if frame.all_missing() {
        return Err(SegmentError::AllMissing { t_star_ms });
    }
    Ok(frame)
}
