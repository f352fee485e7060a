use crate::ingest::LabelSample;

/// Labels further apart than this bracket a labeling break.
pub const DEFAULT_MAX_GAP_MS: i64 = 5000;

/// Ground-truth position at `t_star_ms` by linear interpolation between the
/// bracketing labels. `labels` must be sorted by time.
///
/// Returns `None` (a gap) when `t_star_ms` lies outside the labeled span or
/// the bracketing labels are more than `max_gap_ms` apart. When several
/// labels share `t_star_ms` the last one is returned.
pub fn interpolate_label(labels: &[LabelSample], t_star_ms: i64, max_gap_ms: i64) -> Option<(f64, f64)> {
    let after = labels.partition_point(|l| l.t_ms <= t_star_ms);
    if after > 0 && labels[after - 1].t_ms == t_star_ms {
        let l = &labels[after - 1];
        return Some((l.x_px, l.y_px));
    }
    if after == 0 || after == labels.len() {
        return None;
    }
    let prev = &labels[after - 1];
    let next = &labels[after];
    let span = next.t_ms - prev.t_ms;
    if span > max_gap_ms {
        return None;
    }
    let frac = (t_star_ms - prev.t_ms) as f64 / span as f64;
    Some((
        prev.x_px + (next.x_px - prev.x_px) * frac,
        prev.y_px + (next.y_px - prev.y_px) * frac,
    ))
}
