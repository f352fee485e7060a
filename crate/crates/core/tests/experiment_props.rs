//! Metric arithmetic, fold partitions and the external-estimate scorer.

use homeloc_core::experiment::{
    kfold_split, regression_metrics, score_external_estimates, EvalReport, EvalRow, ExternalEstimate, RowStatus,
};
use homeloc_core::ingest::{normalize_epoch, EpochUnit, LabelSample};
use homeloc_core::FloorPlan;
use proptest::prelude::*;

fn flat_a() -> FloorPlan {
    FloorPlan::bare("A", 460, 753, 5800.0, 9500.0)
}

fn flat_b() -> FloorPlan {
    FloorPlan::bare("B", 536, 621, 9500.0, 11100.0)
}

#[test]
fn flat_canvases_map_to_their_floor_areas() {
    assert_eq!(flat_a().px_to_mm(460.0, 753.0), (5800.0, 9500.0));
    assert_eq!(flat_b().px_to_mm(536.0, 621.0), (9500.0, 11100.0));
    assert_eq!(flat_a().px_to_mm(0.0, 0.0), (0.0, 0.0));
    assert_eq!(flat_a().px_to_mm(230.0, 376.5), (2900.0, 4750.0));
}

proptest! {
    #[test]
    fn px_to_mm_is_linear(ax in -500.0f64..1000.0, ay in -500.0f64..1000.0, bx in -500.0f64..1000.0, by in -500.0f64..1000.0, k in -3.0f64..3.0) {
        for fp in [flat_a(), flat_b()] {
            let (sx, sy) = fp.px_to_mm(ax + bx, ay + by);
            let (pa, pb) = (fp.px_to_mm(ax, ay), fp.px_to_mm(bx, by));
            prop_assert!((sx - (pa.0 + pb.0)).abs() < 1e-9 * (1.0 + sx.abs()));
            prop_assert!((sy - (pa.1 + pb.1)).abs() < 1e-9 * (1.0 + sy.abs()));
            let (kx, ky) = fp.px_to_mm(k * ax, k * ay);
            prop_assert!((kx - k * pa.0).abs() < 1e-9 * (1.0 + kx.abs()));
            prop_assert!((ky - k * pa.1).abs() < 1e-9 * (1.0 + ky.abs()));
        }
    }

    #[test]
    fn kfold_partitions(n in 2usize..400, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let folds = kfold_split(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![0u32; n];
        for f in &folds {
            for &i in &f.test {
                seen[i] += 1;
            }
            let mut all: Vec<usize> = f.train.iter().chain(&f.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(kfold_split(n, k, seed).unwrap(), folds);
    }

    #[test]
    fn combined_mae_is_mean_of_axes(errs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..100)) {
        let pairs: Vec<_> = errs.iter().map(|&(dx, dy)| ([100.0 + dx, 200.0 + dy], [100.0, 200.0])).collect();
        let m = regression_metrics(&pairs, &flat_a()).unwrap();
        prop_assert_eq!(m.mae_m, (m.mae_x_m + m.mae_y_m) / 2.0);
        let row = EvalRow {
            flat: "A".into(),
            tech: None,
            windowing: None,
            model: "x".into(),
            window_s: None,
            sub_window_s: None,
            k_folds: 0,
            n_samples: pairs.len(),
            mae_x_m: Some(m.mae_x_m),
            mae_y_m: Some(m.mae_y_m),
            mae_m: Some(m.mae_m),
            fold_std_m: None,
            room_accuracy: None,
            lost_fraction: None,
            status: RowStatus::Ok,
            wall_time_s: 0.0,
        };
        let back = EvalReport::from_csv(&EvalReport { rows: vec![row] }.to_csv()).unwrap();
        let r = &back.rows[0];
        prop_assert_eq!(r.mae_m.unwrap(), (r.mae_x_m.unwrap() + r.mae_y_m.unwrap()) / 2.0);
    }

    #[test]
    fn lost_and_scored_partition_matches(
        present in prop::collection::vec(any::<bool>(), 1..200),
        offsets in prop::collection::vec(-3000i64..3000, 1..200),
    ) {
        let labels: Vec<LabelSample> = (0..=100)
            .map(|k| LabelSample { t_ms: 10_000 + k * 1000, x_px: k as f64, y_px: 5.0, session_id: "s".into() })
            .collect();
        let est: Vec<ExternalEstimate> = present
            .iter()
            .zip(offsets.iter().cycle())
            .enumerate()
            .map(|(i, (&p, &o))| ExternalEstimate {
                t_ms: 10_000 + (i as i64) * 600 + o,
                position: p.then_some((1.0, 2.0)),
            })
            .collect();
        match score_external_estimates(&est, &labels, &flat_b(), 5000) {
            Ok(s) => {
                prop_assert_eq!(s.n_scored + s.n_lost, s.n_matched);
                prop_assert_eq!(s.n_matched + s.n_outside, est.len());
                let scored_fraction = s.n_scored as f64 / s.n_matched as f64;
                prop_assert!((s.lost_fraction + scored_fraction - 1.0).abs() < 1e-12);
            }
            Err(e) => prop_assert!(matches!(e, homeloc_core::experiment::ExperimentError::NoOverlap)),
        }
    }

    #[test]
    fn auto_epoch_rule(secs in 1_000_000_000i64..2_000_000_000, ms in 0i64..1000) {
        let as_ms = secs * 1000 + ms;
        prop_assert_eq!(normalize_epoch(&secs.to_string(), EpochUnit::Auto).unwrap(), secs * 1000);
        prop_assert_eq!(normalize_epoch(&as_ms.to_string(), EpochUnit::Auto).unwrap(), as_ms);
    }
}
