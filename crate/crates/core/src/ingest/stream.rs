use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{RssiSample, Tech};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StreamKey {
    pub source_id: String,
    pub tag_id: String,
}

impl StreamKey {
    pub fn new(source_id: impl Into<String>, tag_id: impl Into<String>) -> Self {
        Self {
            source_id: source_id.into(),
            tag_id: tag_id.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub t_ms: i64,
    pub rssi_dbm: f64,
}

/// Time-ordered readings for one (source, tag) pair.
///
/// Readings sharing a timestamp are ordered by value, so the stored order
/// does not depend on arrival order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStream {
    pub key: StreamKey,
    pub tech: Tech,
    readings: Vec<Reading>,
}

fn canonical(a: &Reading, b: &Reading) -> std::cmp::Ordering {
    a.t_ms.cmp(&b.t_ms).then_with(|| a.rssi_dbm.total_cmp(&b.rssi_dbm))
}

impl SampleStream {
    pub fn new(key: StreamKey, tech: Tech) -> Self {
        Self {
            key,
            tech,
            readings: Vec::new(),
        }
    }

    pub fn from_readings(key: StreamKey, tech: Tech, mut readings: Vec<Reading>) -> Self {
        readings.sort_by(canonical);
        Self { key, tech, readings }
    }

    pub fn readings(&self) -> &[Reading] {
        &self.readings
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    /// Inserts keeping canonical order; appending in time order is O(1).
    pub fn push(&mut self, reading: Reading) {
        let pos = self
            .readings
            .partition_point(|r| canonical(r, &reading) != std::cmp::Ordering::Greater);
        self.readings.insert(pos, reading);
    }

    /// Readings with `lo <= t_ms < hi`.
    pub fn range(&self, lo: i64, hi: i64) -> &[Reading] {
        let start = self.readings.partition_point(|r| r.t_ms < lo);
        let end = self.readings.partition_point(|r| r.t_ms < hi);
        &self.readings[start..end.max(start)]
    }

    /// Drops readings older than `t_ms`.
    pub fn prune_before(&mut self, t_ms: i64) {
        let cut = self.readings.partition_point(|r| r.t_ms < t_ms);
        self.readings.drain(..cut);
    }

    pub fn first_t(&self) -> Option<i64> {
        self.readings.first().map(|r| r.t_ms)
    }

    pub fn last_t(&self) -> Option<i64> {
        self.readings.last().map(|r| r.t_ms)
    }
}

/// All streams of a dataset, keyed by (source, tag).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamSet {
    streams: BTreeMap<StreamKey, SampleStream>,
}

impl StreamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples<I: IntoIterator<Item = RssiSample>>(samples: I) -> Self {
        let mut grouped: BTreeMap<StreamKey, (Tech, Vec<Reading>)> = BTreeMap::new();
        for s in samples {
            let key = StreamKey::new(s.source_id, s.tag_id);
            grouped
                .entry(key)
                .or_insert_with(|| (s.tech, Vec::new()))
                .1
                .push(Reading {
                    t_ms: s.t_ms,
                    rssi_dbm: s.rssi_dbm,
                });
        }
        Self {
            streams: grouped
                .into_iter()
                .map(|(k, (tech, r))| (k.clone(), SampleStream::from_readings(k, tech, r)))
                .collect(),
        }
    }

    pub fn push(&mut self, sample: &RssiSample) {
        let key = StreamKey::new(sample.source_id.clone(), sample.tag_id.clone());
        self.streams
            .entry(key.clone())
            .or_insert_with(|| SampleStream::new(key, sample.tech))
            .push(Reading {
                t_ms: sample.t_ms,
                rssi_dbm: sample.rssi_dbm,
            });
    }

    pub fn get(&self, source_id: &str, tag_id: &str) -> Option<&SampleStream> {
        self.streams.get(&StreamKey::new(source_id, tag_id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &SampleStream> {
        self.streams.values()
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }

    pub fn total_readings(&self) -> usize {
        self.streams.values().map(SampleStream::len).sum()
    }

    /// Only the streams of one technology.
    pub fn with_tech(&self, tech: Tech) -> StreamSet {
        StreamSet {
            streams: self
                .streams
                .iter()
                .filter(|(_, s)| s.tech == tech)
                .map(|(k, s)| (k.clone(), s.clone()))
                .collect(),
        }
    }

    pub fn tags(&self) -> Vec<String> {
        let mut tags: Vec<String> = self.streams.keys().map(|k| k.tag_id.clone()).collect();
        tags.dedup();
        tags.sort();
        tags.dedup();
        tags
    }

    pub fn prune_before(&mut self, t_ms: i64) {
        for s in self.streams.values_mut() {
            s.prune_before(t_ms);
        }
    }
}
