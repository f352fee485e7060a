use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::floorplan::FloorPlan;
use crate::ingest::{LabelSample, StreamSet};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceShare {
    pub source_id: String,
    pub samples: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoomShare {
    pub room: String,
    pub labels: usize,
    pub percent: f64,
}

/// Per-anchor data shares, per-room label shares and label cadence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub total_samples: usize,
    pub sources: Vec<SourceShare>,
    pub total_labels: usize,
    pub rooms: Vec<RoomShare>,
    pub unroomed_labels: usize,
    /// Mean and standard deviation of label inter-arrival times in seconds,
    /// measured within each session.
    pub label_interval_mean_s: Option<f64>,
    pub label_interval_std_s: Option<f64>,
}

impl DatasetSummary {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "rssi samples: {}", self.total_samples);
        for s in &self.sources {
            let _ = writeln!(out, "  {:<20} {:>8}  {:6.2}%", s.source_id, s.samples, s.percent);
        }
        let _ = writeln!(out, "labels: {}", self.total_labels);
        for r in &self.rooms {
            let _ = writeln!(out, "  {:<20} {:>8}  {:6.2}%", r.room, r.labels, r.percent);
        }
        if self.unroomed_labels > 0 {
            let _ = writeln!(out, "  {:<20} {:>8}", "(no room)", self.unroomed_labels);
        }
        if let (Some(m), Some(s)) = (self.label_interval_mean_s, self.label_interval_std_s) {
            let _ = writeln!(out, "label interval: mean {m:.3} s, std {s:.3} s");
        }
        out
    }
}

fn percent(part: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * part as f64 / total as f64
    }
}

pub fn summarize_dataset(streams: &StreamSet, labels: &[LabelSample], floorplan: &FloorPlan) -> DatasetSummary {
    let mut per_source: BTreeMap<&str, usize> = BTreeMap::new();
    for s in streams.iter() {
        *per_source.entry(s.key.source_id.as_str()).or_default() += s.len();
    }
    let total_samples: usize = per_source.values().sum();
    let sources = per_source
        .into_iter()
        .map(|(id, n)| SourceShare {
            source_id: id.to_owned(),
            samples: n,
            percent: percent(n, total_samples),
        })
        .collect();

    let mut per_room = vec![0usize; floorplan.rooms.len()];
    let mut unroomed = 0;
    for l in labels {
        match floorplan.room_of(l.x_px, l.y_px) {
            Some(room) => per_room[room.index] += 1,
            None => unroomed += 1,
        }
    }
    let rooms = floorplan
        .rooms
        .iter()
        .map(|r| RoomShare {
            room: r.label.name.clone(),
            labels: per_room[r.label.index],
            percent: percent(per_room[r.label.index], labels.len()),
        })
        .collect();

    let mut sessions: BTreeMap<&str, Vec<i64>> = BTreeMap::new();
    for l in labels {
        sessions.entry(l.session_id.as_str()).or_default().push(l.t_ms);
    }
    let mut gaps = Vec::new();
    for ts in sessions.values_mut() {
        ts.sort_unstable();
        gaps.extend(ts.windows(2).map(|w| (w[1] - w[0]) as f64 / 1000.0));
    }
    let (mean, std) = if gaps.is_empty() {
        (None, None)
    } else {
        let n = gaps.len() as f64;
        let m = gaps.iter().sum::<f64>() / n;
        let var = gaps.iter().map(|g| (g - m).powi(2)).sum::<f64>() / n;
        (Some(m), Some(var.sqrt()))
    };

    DatasetSummary {
        total_samples,
        sources,
        total_labels: labels.len(),
        rooms,
        unroomed_labels: unroomed,
        label_interval_mean_s: mean,
        label_interval_std_s: std,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floorplan::{Room, RoomLabel};
    use crate::ingest::{RssiSample, Tech};

    #[test]
    fn single_source_is_everything() {
        let streams = StreamSet::from_samples((0..5).map(|k| RssiSample {
            t_ms: 1000 + k,
            source_id: "4842".into(),
            tech: Tech::Uwb,
            rssi_dbm: -90.0,
            tag_id: "tag0".into(),
        }));
        let fp = FloorPlan::bare("t", 10, 10, 10.0, 10.0);
        let s = summarize_dataset(&streams, &[], &fp);
        assert_eq!(s.sources.len(), 1);
        assert_eq!(s.sources[0].percent, 100.0);
        assert!(s.label_interval_mean_s.is_none());
    }

    #[test]
    fn label_cadence_and_rooms() {
        let mut fp = FloorPlan::bare("t", 10, 10, 10.0, 10.0);
        fp.rooms.push(Room {
            label: RoomLabel {
                name: "kitchen".into(),
                index: 0,
            },
            polygon: vec![[0.0, 0.0], [5.0, 0.0], [5.0, 10.0], [0.0, 10.0]],
        });
        let labels: Vec<LabelSample> = [(0, 1.0), (1000, 2.0), (3000, 8.0)]
            .iter()
            .map(|&(t, x)| LabelSample {
                t_ms: t,
                x_px: x,
                y_px: 1.0,
                session_id: "s".into(),
            })
            .collect();
        let s = summarize_dataset(&StreamSet::new(), &labels, &fp);
        assert_eq!(s.rooms[0].labels, 2);
        assert_eq!(s.unroomed_labels, 1);
        assert_eq!(s.label_interval_mean_s, Some(1.5));
        assert_eq!(s.label_interval_std_s, Some(0.5));
    }
}
