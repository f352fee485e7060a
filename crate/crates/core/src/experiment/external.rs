//! Scoring positions produced by an external positioning system against
//! interpolated ground truth.
//!
//! Estimate files are comma separated `t,x_px,y_px` with an optional header.
//! An empty, `nan` or `NA` coordinate marks a timestamp where the system
//! produced no position. Epochs below 10^12 are read as seconds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::floorplan::FloorPlan;
use crate::ingest::{normalize_epoch, EpochUnit, LabelSample};
use crate::segmentation::interpolate_label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExternalEstimate {
    pub t_ms: i64,
    pub position: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExternalScore {
    /// `None` when every matched estimate was lost.
    pub mae_x_m: Option<f64>,
    pub mae_y_m: Option<f64>,
    pub lost_fraction: f64,
    /// Estimates inside a labeled span.
    pub n_matched: usize,
    pub n_scored: usize,
    pub n_lost: usize,
    /// Estimates outside every labeled span or inside a labeling gap.
    pub n_outside: usize,
}

impl ExternalScore {
    pub fn mae_m(&self) -> Option<f64> {
        Some((self.mae_x_m? + self.mae_y_m?) / 2.0)
    }

    pub fn render(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_owned(), |v| format!("{v:.3} m"));
        format!(
            "MAE x: {}\nMAE y: {}\nMAE: {}\nlost estimates: {:.1}% ({} of {})\nscored: {}, outside labeled spans: {}\n",
            fmt(self.mae_x_m),
            fmt(self.mae_y_m),
            fmt(self.mae_m()),
            100.0 * self.lost_fraction,
            self.n_lost,
            self.n_matched,
            self.n_scored,
            self.n_outside
        )
    }
}

/// Matches each estimate to the ground truth interpolated at its own
/// timestamp. Labels must be time sorted.
pub fn score_external_estimates(
    estimates: &[ExternalEstimate],
    labels: &[LabelSample],
    floorplan: &FloorPlan,
    max_gap_ms: i64,
) -> Result<ExternalScore, ExperimentError> {
    let (mut sx, mut sy) = (0.0, 0.0);
    let (mut matched, mut scored, mut lost, mut outside) = (0, 0, 0, 0);
    for e in estimates {
        let Some((gx, gy)) = interpolate_label(labels, e.t_ms, max_gap_ms) else {
            outside += 1;
            continue;
        };
        matched += 1;
        match e.position {
            Some((x, y)) => {
                scored += 1;
                sx += (x - gx).abs();
                sy += (y - gy).abs();
            }
            None => lost += 1,
        }
    }
    if matched == 0 {
        return Err(ExperimentError::NoOverlap);
    }
    let mae = |s: f64, scale: f64| (scored > 0).then(|| s / scored as f64 * scale / 1000.0);
    Ok(ExternalScore {
        mae_x_m: mae(sx, floorplan.scale_x()),
        mae_y_m: mae(sy, floorplan.scale_y()),
        lost_fraction: lost as f64 / matched as f64,
        n_matched: matched,
        n_scored: scored,
        n_lost: lost,
        n_outside: outside,
    })
}

fn parse_coord(field: &str) -> Result<Option<f64>, ExperimentError> {
    let f = field.trim();
    if f.is_empty() || f.eq_ignore_ascii_case("nan") || f.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    let v: f64 = f
        .parse()
        .map_err(|_| ExperimentError::Parse(format!("bad coordinate `{f}`")))?;
    Ok(v.is_finite().then_some(v))
}

/// Parses estimate CSV text; the result is sorted by time.
pub fn parse_estimates(text: &str) -> Result<Vec<ExternalEstimate>, ExperimentError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| ExperimentError::Parse(e.to_string()))?;
        let t_field = rec.get(0).unwrap_or("");
        if t_field.is_empty() {
            continue;
        }
        if i == 0 && t_field.parse::<f64>().is_err() {
            continue;
        }
        let t_ms = normalize_epoch(t_field, EpochUnit::Auto)
            .map_err(|e| ExperimentError::Parse(format!("line {}: {e}", i + 1)))?;
        let x = parse_coord(rec.get(1).unwrap_or(""))?;
        let y = parse_coord(rec.get(2).unwrap_or(""))?;
        out.push(ExternalEstimate {
            t_ms,
            position: x.zip(y),
        });
    }
    out.sort_by_key(|e| e.t_ms);
    Ok(out)
}

pub fn read_estimates(path: &Path) -> Result<Vec<ExternalEstimate>, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_estimates(&text)
}
