use std::collections::BTreeMap;

/// Default hold-back horizon for live streams.
pub const DEFAULT_REORDER_MS: i64 = 2000;

/// Holds items for `horizon_ms` of stream time so slightly late arrivals can
/// be slotted into place. Items that arrive after their slot was already
/// released are dropped and counted.
#[derive(Debug)]
pub struct ReorderBuffer<T> {
    horizon_ms: i64,
    pending: BTreeMap<(i64, u64), T>,
    next_seq: u64,
    max_seen: Option<i64>,
    released_upto: Option<i64>,
    late_dropped: u64,
}

impl<T> ReorderBuffer<T> {
    pub fn new(horizon_ms: i64) -> Self {
        Self {
            horizon_ms,
            pending: BTreeMap::new(),
            next_seq: 0,
            max_seen: None,
            released_upto: None,
            late_dropped: 0,
        }
    }

    pub fn late_dropped(&self) -> u64 {
        self.late_dropped
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Adds an item and returns everything that is now older than the horizon,
    /// ordered by time then arrival.
    pub fn push(&mut self, t_ms: i64, item: T) -> Vec<T> {
        if self.released_upto.is_some_and(|r| t_ms < r) {
            self.late_dropped += 1;
            return Vec::new();
        }
        self.pending.insert((t_ms, self.next_seq), item);
        self.next_seq += 1;
        self.max_seen = Some(self.max_seen.map_or(t_ms, |m| m.max(t_ms)));
        let cutoff = self.max_seen.unwrap_or(t_ms) - self.horizon_ms;
        self.release_before(cutoff)
    }

    fn release_before(&mut self, cutoff: i64) -> Vec<T> {
        let keep = self.pending.split_off(&(cutoff, 0));
        let out = std::mem::replace(&mut self.pending, keep);
        if let Some((&(t, _), _)) = out.iter().next_back() {
            self.released_upto = Some(self.released_upto.map_or(t, |r| r.max(t)));
        }
        out.into_values().collect()
    }

    /// Releases everything still held.
    pub fn flush(&mut self) -> Vec<T> {
        self.release_before(i64::MAX)
    }
}
