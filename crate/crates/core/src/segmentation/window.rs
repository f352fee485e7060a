use serde::{Deserialize, Serialize};

use super::SegmentError;
use crate::ingest::Reading;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    OnlyPast,
    PastAndFuture,
}

impl WindowMode {
    pub fn label(self) -> &'static str {
        match self {
            WindowMode::OnlyPast => "ONLY_PAST",
            WindowMode::PastAndFuture => "PAST+FUTURE",
        }
    }
}

impl std::str::FromStr for WindowMode {
    type Err = SegmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "past" | "onlypast" => Ok(WindowMode::OnlyPast),
            "past+future" | "pastandfuture" | "pastfuture" => Ok(WindowMode::PastAndFuture),
            _ => Err(SegmentError::InvalidWindow(format!("unknown window mode `{s}`"))),
        }
    }
}

/// A window of `n_steps` consecutive sub-windows of `sub_span_ms` each.
///
/// `total_span_ms` is the nominal size the window was configured with. The
/// covered span is always `n_steps * sub_span_ms`; they differ only when the
/// step count was overridden.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowSpec {
    pub total_span_ms: i64,
    pub sub_span_ms: i64,
    pub n_steps: usize,
    pub mode: WindowMode,
}

fn secs_to_ms(s: f64) -> Result<i64, SegmentError> {
    let ms = s * 1000.0;
    if !ms.is_finite() || ms <= 0.0 || (ms - ms.round()).abs() > 1e-6 {
        return Err(SegmentError::InvalidWindow(format!(
            "{s} s is not a positive whole number of milliseconds"
        )));
    }
    Ok(ms.round() as i64)
}

impl WindowSpec {
    pub fn new(total_s: f64, sub_s: f64, mode: WindowMode) -> Result<Self, SegmentError> {
        Self::from_ms(secs_to_ms(total_s)?, secs_to_ms(sub_s)?, mode)
    }

    pub fn from_ms(total_span_ms: i64, sub_span_ms: i64, mode: WindowMode) -> Result<Self, SegmentError> {
        if total_span_ms <= 0 || sub_span_ms <= 0 {
            return Err(SegmentError::InvalidWindow("spans must be positive".into()));
        }
        if total_span_ms % sub_span_ms != 0 {
            return Err(SegmentError::InvalidWindow(format!(
                "total span {total_span_ms} ms is not a multiple of sub-window {sub_span_ms} ms"
            )));
        }
        Ok(Self {
            total_span_ms,
            sub_span_ms,
            n_steps: (total_span_ms / sub_span_ms) as usize,
            mode,
        })
    }

    /// Overrides the step count; the covered span becomes `n * sub_span`.
    pub fn with_steps(mut self, n_steps: usize) -> Result<Self, SegmentError> {
        if n_steps == 0 {
            return Err(SegmentError::InvalidWindow("n_steps must be positive".into()));
        }
        self.n_steps = n_steps;
        Ok(self)
    }

    pub fn covered_span_ms(&self) -> i64 {
        self.sub_span_ms * self.n_steps as i64
    }

    pub fn past_steps(&self) -> usize {
        match self.mode {
            WindowMode::OnlyPast => self.n_steps,
            WindowMode::PastAndFuture => self.n_steps.div_ceil(2),
        }
    }

    pub fn future_steps(&self) -> usize {
        self.n_steps - self.past_steps()
    }

    /// How far past `t*` the window reaches.
    pub fn lookahead_ms(&self) -> i64 {
        self.future_steps() as i64 * self.sub_span_ms
    }

    /// Half-open sub-intervals `[lo, hi)` in step order; consecutive ones tile.
    pub fn intervals(&self, t_star_ms: i64) -> Vec<(i64, i64)> {
        let start = t_star_ms - self.past_steps() as i64 * self.sub_span_ms;
        (0..self.n_steps as i64)
            .map(|k| {
                let lo = start + k * self.sub_span_ms;
                (lo, lo + self.sub_span_ms)
            })
            .collect()
    }

    pub fn total_span_s(&self) -> f64 {
        self.total_span_ms as f64 / 1000.0
    }

    pub fn sub_span_s(&self) -> f64 {
        self.sub_span_ms as f64 / 1000.0
    }
}

/// Mean, max and min over one sub-window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub max: f64,
    pub min: f64,
}

/// Aggregates readings with `lo <= t_ms < hi`. `readings` must be time
/// sorted. `None` means no reading fell in the interval.
pub fn aggregate_window(readings: &[Reading], lo: i64, hi: i64) -> Option<Aggregate> {
    let start = readings.partition_point(|r| r.t_ms < lo);
    let end = readings.partition_point(|r| r.t_ms < hi).max(start);
    aggregate_values(readings[start..end].iter().map(|r| r.rssi_dbm))
}

pub(crate) fn aggregate_values<I: Iterator<Item = f64>>(values: I) -> Option<Aggregate> {
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for v in values {
        n += 1;
        sum += v;
        max = max.max(v);
        min = min.min(v);
    }
    (n > 0).then(|| Aggregate {
        // clamp guards the last-ulp rounding of sum / n for near-equal values
        mean: (sum / n as f64).clamp(min, max),
        max,
        min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn readings(vals: &[(i64, f64)]) -> Vec<Reading> {
        vals.iter()
            .map(|&(t_ms, rssi_dbm)| Reading { t_ms, rssi_dbm })
            .collect()
    }

    #[test]
    fn singleton() {
        let r = readings(&[(1500, -95.53)]);
        let a = aggregate_window(&r, 1000, 2000).unwrap();
        assert_eq!((a.mean, a.max, a.min), (-95.53, -95.53, -95.53));
    }

    #[test]
    fn three_samples() {
        let r = readings(&[(1000, -90.0), (1200, -82.0), (1900, -86.0)]);
        let a = aggregate_window(&r, 1000, 2000).unwrap();
        assert_eq!((a.mean, a.max, a.min), (-86.0, -82.0, -90.0));
    }

    #[test]
    fn empty_and_boundary() {
        let r = readings(&[(2000, -90.0)]);
        assert!(aggregate_window(&r, 1000, 2000).is_none());
        assert!(aggregate_window(&r, 2000, 3000).is_some());
    }

    #[test]
    fn step_counts() {
        let w = WindowSpec::new(12.0, 1.0, WindowMode::PastAndFuture).unwrap();
        assert_eq!(w.n_steps, 12);
        assert_eq!(WindowSpec::new(20.0, 2.0, WindowMode::OnlyPast).unwrap().n_steps, 10);
        assert_eq!(WindowSpec::new(30.0, 2.0, WindowMode::OnlyPast).unwrap().n_steps, 15);
        assert!(WindowSpec::new(5.0, 2.0, WindowMode::OnlyPast).is_err());
        let o = WindowSpec::new(20.0, 2.0, WindowMode::OnlyPast)
            .unwrap()
            .with_steps(16)
            .unwrap();
        assert_eq!(o.covered_span_ms(), 32_000);
    }

    #[test]
    fn placement() {
        let past = WindowSpec::new(4.0, 1.0, WindowMode::OnlyPast).unwrap();
        assert_eq!(
            past.intervals(10_000),
            vec![(6000, 7000), (7000, 8000), (8000, 9000), (9000, 10_000)]
        );
        let odd = WindowSpec::new(3.0, 1.0, WindowMode::PastAndFuture).unwrap();
        assert_eq!(odd.past_steps(), 2);
        assert_eq!(odd.future_steps(), 1);
        assert_eq!(
            odd.intervals(10_000),
            vec![(8000, 9000), (9000, 10_000), (10_000, 11_000)]
        );
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("past+future".parse::<WindowMode>().unwrap(), WindowMode::PastAndFuture);
        assert_eq!("only_past".parse::<WindowMode>().unwrap(), WindowMode::OnlyPast);
        assert!("future".parse::<WindowMode>().is_err());
    }
}
