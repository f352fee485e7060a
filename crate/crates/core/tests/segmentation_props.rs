//! Window aggregation, feature frames and training-set generation checked
//! against brute-force oracles.

use homeloc_core::ingest::{LabelSample, Reading, RssiSample, StreamSet, Tech};
use homeloc_core::segmentation::{
    aggregate_window, build_feature_frame, generate_training_set, SegmentConfig, SegmentError, AGG_MAX, AGG_MEAN,
    AGG_MIN, MISSING_FILL_DBM,
};
use homeloc_core::{FloorPlan, WindowMode, WindowSpec};
use proptest::prelude::*;
use proptest::test_runner::Config;

/// Filter by a linear scan, then fold. Returns (mean, max, min).
fn oracle(readings: &[(i64, f64)], lo: i64, hi: i64) -> Option<(f64, f64, f64)> {
    let inside: Vec<f64> = readings
        .iter()
        .filter(|(t, _)| lo <= *t && *t < hi)
        .map(|(_, v)| *v)
        .collect();
    if inside.is_empty() {
        return None;
    }
    let sum: f64 = inside.iter().sum();
    let max = inside.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = inside.iter().copied().fold(f64::INFINITY, f64::min);
    Some((sum / inside.len() as f64, max, min))
}

fn mode() -> impl Strategy<Value = WindowMode> {
    prop_oneof![Just(WindowMode::OnlyPast), Just(WindowMode::PastAndFuture)]
}

fn spec() -> impl Strategy<Value = WindowSpec> {
    (prop::sample::select(vec![250i64, 500, 1000, 2000]), 1usize..16, mode())
        .prop_map(|(sub, n, m)| WindowSpec::from_ms(sub * n as i64, sub, m).unwrap())
}

/// Quarter-dB values keep every partial sum exact, so sums do not depend on order.
fn quarter_db() -> impl Strategy<Value = f64> {
    (-480i32..-120).prop_map(|q| f64::from(q) / 4.0)
}

fn readings() -> impl Strategy<Value = Vec<(i64, f64)>> {
    prop::collection::vec((0i64..20_000, quarter_db()), 0..60)
}

proptest! {
    #![proptest_config(Config::with_cases(1000))]

    #[test]
    fn aggregate_matches_oracle(mut rs in readings(), lo in -1000i64..21_000, len in 1i64..5000) {
        rs.sort_by_key(|r| r.0);
        let readings: Vec<Reading> = rs.iter().map(|&(t_ms, rssi_dbm)| Reading { t_ms, rssi_dbm }).collect();
        let got = aggregate_window(&readings, lo, lo + len).map(|a| (a.mean, a.max, a.min));
        prop_assert_eq!(got, oracle(&rs, lo, lo + len));
    }

    #[test]
    fn frame_matches_oracle(
        per_source in prop::collection::vec(readings(), 1..5),
        spec in spec(),
        t_star in 0i64..20_000,
        extra_roster in 0usize..2,
    ) {
        let samples: Vec<RssiSample> = per_source
            .iter()
            .enumerate()
            .flat_map(|(s, rs)| rs.iter().map(move |&(t_ms, rssi_dbm)| RssiSample {
                t_ms,
                source_id: format!("a{s}"),
                tech: Tech::Uwb,
                rssi_dbm,
                tag_id: "tag0".into(),
            }))
            .collect();
        let streams = StreamSet::from_samples(samples);
        // silent roster entries must come out fully missing
        let roster: Vec<String> = (0..per_source.len() + extra_roster).map(|s| format!("a{s}")).collect();

        let start = t_star - spec.past_steps() as i64 * spec.sub_span_ms;
        let mut expected = Vec::new();
        for s in 0..roster.len() {
            for k in 0..spec.n_steps {
                let lo = start + k as i64 * spec.sub_span_ms;
                let rs = per_source.get(s).map(Vec::as_slice).unwrap_or(&[]);
                expected.push((s, k, oracle(rs, lo, lo + spec.sub_span_ms)));
            }
        }
        let all_missing = expected.iter().all(|e| e.2.is_none());

        match build_feature_frame(&streams, "tag0", &roster, &spec, t_star) {
            Err(SegmentError::AllMissing { t_star_ms }) => {
                prop_assert!(all_missing);
                prop_assert_eq!(t_star_ms, t_star);
            }
            Err(e) => prop_assert!(false, "unexpected error {e}"),
            Ok(f) => {
                prop_assert!(!all_missing);
                prop_assert_eq!(f.shape(), (roster.len(), 3, spec.n_steps));
                for (s, k, agg) in expected {
                    match agg {
                        None => for a in [AGG_MEAN, AGG_MAX, AGG_MIN] {
                            prop_assert!(f.is_missing(s, a, k));
                            prop_assert_eq!(f.value(s, a, k), MISSING_FILL_DBM);
                        },
                        Some((mean, max, min)) => {
                            prop_assert!(!f.is_missing(s, AGG_MEAN, k));
                            prop_assert_eq!(f.value(s, AGG_MEAN, k), mean);
                            prop_assert_eq!(f.value(s, AGG_MAX, k), max);
                            prop_assert_eq!(f.value(s, AGG_MIN, k), min);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn intervals_tile_the_window(spec in spec(), t_star in -50_000i64..50_000) {
        let iv = spec.intervals(t_star);
        prop_assert_eq!(iv.len(), spec.n_steps);
        for w in iv.windows(2) {
            prop_assert_eq!(w[0].1, w[1].0);
        }
        prop_assert!(iv.iter().all(|(lo, hi)| hi - lo == spec.sub_span_ms));
        let past = match spec.mode {
            WindowMode::OnlyPast => spec.n_steps,
            WindowMode::PastAndFuture => spec.n_steps.div_ceil(2),
        };
        prop_assert_eq!(iv[0].0, t_star - past as i64 * spec.sub_span_ms);
        prop_assert_eq!(iv[spec.n_steps - 1].1, t_star + (spec.n_steps - past) as i64 * spec.sub_span_ms);
        prop_assert_eq!(iv[spec.n_steps - 1].1 - iv[0].0, spec.covered_span_ms());
    }
}

fn labels_strategy() -> impl Strategy<Value = Vec<LabelSample>> {
    prop::collection::vec((500i64..9000, 0.0f64..100.0, 0.0f64..100.0), 2..12).prop_map(|steps| {
        let mut t = 0;
        steps
            .into_iter()
            .map(|(dt, x, y)| {
                t += dt;
                LabelSample {
                    t_ms: t,
                    x_px: x,
                    y_px: y,
                    session_id: "s".into(),
                }
            })
            .collect()
    })
}

fn dense_streams(end_ms: i64) -> StreamSet {
    StreamSet::from_samples((0..end_ms / 300).flat_map(|k| {
        (0..2).map(move |s| RssiSample {
            t_ms: k * 300 + s * 70,
            source_id: format!("a{s}"),
            tech: Tech::Uwb,
            rssi_dbm: -70.0 - (k % 9) as f64,
            tag_id: "tag0".into(),
        })
    }))
}

proptest! {
    #![proptest_config(Config::with_cases(100))]

    #[test]
    fn wider_gap_tolerance_keeps_more(labels in labels_strategy(), g1 in 500i64..9000, g2 in 500i64..9000) {
        let (lo, hi) = (g1.min(g2), g1.max(g2));
        let fp = FloorPlan::bare("p", 100, 100, 1000.0, 1000.0);
        let streams = dense_streams(labels.last().unwrap().t_ms + 5000);
        let spec = WindowSpec::new(2.0, 1.0, WindowMode::OnlyPast).unwrap();
        let roster = vec!["a0".to_string(), "a1".to_string()];
        let run = |gap| {
            let mut cfg = SegmentConfig::new(spec, roster.clone(), "tag0");
            cfg.max_gap_ms = gap;
            match generate_training_set(&streams, &labels, &fp, &cfg) {
                Ok(set) => (set.len(), set.discards.gap_dropped, set.discards.grid_points),
                Err(SegmentError::EmptyTrainingSet) => (0, usize::MAX, 0),
                Err(e) => panic!("{e}"),
            }
        };
        let (kept_lo, gap_lo, grid_lo) = run(lo);
        let (kept_hi, gap_hi, grid_hi) = run(hi);
        prop_assert!(kept_hi >= kept_lo);
        if grid_lo > 0 && grid_hi > 0 {
            prop_assert!(gap_hi <= gap_lo);
            prop_assert_eq!(grid_lo, grid_hi);
        }
    }

    #[test]
    fn input_order_does_not_matter(
        rs in prop::collection::vec((0i64..8000, quarter_db(), 0usize..3), 1..80),
        seed in any::<u64>(),
        t_star in 0i64..8000,
    ) {
        let samples: Vec<RssiSample> = rs.iter().map(|&(t_ms, v, s)| RssiSample {
            t_ms,
            source_id: format!("a{s}"),
            tech: Tech::Ble,
            rssi_dbm: v,
            tag_id: "tag0".into(),
        }).collect();
        let mut shuffled = samples.clone();
        // deterministic Fisher-Yates driven by the case seed
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let a = StreamSet::from_samples(samples);
        let b = StreamSet::from_samples(shuffled);
        prop_assert_eq!(&a, &b);
        let spec = WindowSpec::new(4.0, 1.0, WindowMode::PastAndFuture).unwrap();
        let roster: Vec<String> = (0..3).map(|s| format!("a{s}")).collect();
        let fa = build_feature_frame(&a, "tag0", &roster, &spec, t_star).ok();
        let fb = build_feature_frame(&b, "tag0", &roster, &spec, t_star).ok();
        prop_assert_eq!(fa, fb);
    }
}

#[test]
fn two_decimal_readings_agree_to_rounding() {
    // recorded RSSI has two decimals; sums are then inexact and only the mean may differ by rounding
    let rs: Vec<(i64, f64)> = (0..200)
        .map(|i| (i * 37 % 5000, -95.53 + (i % 17) as f64 * 1.01))
        .collect();
    let mut sorted = rs.clone();
    sorted.sort_by_key(|r| r.0);
    let readings: Vec<Reading> = sorted
        .iter()
        .map(|&(t_ms, rssi_dbm)| Reading { t_ms, rssi_dbm })
        .collect();
    for lo in (0..5000).step_by(250) {
        let got = aggregate_window(&readings, lo, lo + 1000);
        let want = oracle(&rs, lo, lo + 1000);
        match (got, want) {
            (None, None) => {}
            (Some(g), Some((mean, max, min))) => {
                assert_eq!((g.max, g.min), (max, min));
                assert!((g.mean - mean).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }
}
