use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::floorplan::FloorPlan;
use crate::model::{Prediction, TrainedModel};
use crate::segmentation::TrainingSet;

/// Mean absolute errors in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae_x_m: f64,
    pub mae_y_m: f64,
    /// Always `(mae_x_m + mae_y_m) / 2`.
    pub mae_m: f64,
}

impl RegressionMetrics {
    pub fn new(mae_x_m: f64, mae_y_m: f64) -> Self {
        Self {
            mae_x_m,
            mae_y_m,
            mae_m: (mae_x_m + mae_y_m) / 2.0,
        }
    }
}

/// Metric MAE from `(predicted, truth)` pixel pairs.
pub fn regression_metrics(
    pairs: &[([f64; 2], [f64; 2])],
    floorplan: &FloorPlan,
) -> Result<RegressionMetrics, ExperimentError> {
    if pairs.is_empty() {
        return Err(ExperimentError::EmptyTestSet);
    }
    let n = pairs.len() as f64;
    let (sx, sy) = pairs.iter().fold((0.0, 0.0), |(ax, ay), (p, t)| {
        (ax + (p[0] - t[0]).abs(), ay + (p[1] - t[1]).abs())
    });
    Ok(RegressionMetrics::new(
        sx / n * floorplan.scale_x() / 1000.0,
        sy / n * floorplan.scale_y() / 1000.0,
    ))
}

pub fn evaluate_regression(model: &TrainedModel, test: &TrainingSet) -> Result<RegressionMetrics, ExperimentError> {
    if test.is_empty() {
        return Err(ExperimentError::EmptyTestSet);
    }
    let frames: Vec<_> = test.samples.iter().map(|s| &s.frame).collect();
    let preds = model.predict(&frames)?;
    let pairs: Vec<_> = preds
        .iter()
        .zip(&test.samples)
        .filter_map(|(p, s)| p.position().map(|p| ([p.x_px, p.y_px], [s.target.x_px, s.target.y_px])))
        .collect();
    regression_metrics(&pairs, &test.floorplan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomMetrics {
    pub accuracy: f64,
    /// `confusion[truth][predicted]`; predictions outside every room are not tabulated.
    pub confusion: Vec<Vec<usize>>,
    pub n_scored: usize,
    /// Targets that lie in no room.
    pub n_excluded: usize,
}

/// Accuracy over targets that have a room. A prediction of no room counts as wrong.
pub fn room_metrics(
    predicted: &[Option<usize>],
    truth: &[Option<usize>],
    n_rooms: usize,
) -> Result<RoomMetrics, ExperimentError> {
    let mut confusion = vec![vec![0; n_rooms]; n_rooms];
    let (mut correct, mut scored, mut excluded) = (0, 0, 0);
    for (p, t) in predicted.iter().zip(truth) {
        let Some(t) = *t else {
            excluded += 1;
            continue;
        };
        scored += 1;
        if let Some(p) = *p {
            if p < n_rooms && t < n_rooms {
                confusion[t][p] += 1;
            }
            if p == t {
                correct += 1;
            }
        }
    }
    if scored == 0 {
        return Err(ExperimentError::EmptyTestSet);
    }
    Ok(RoomMetrics {
        accuracy: correct as f64 / scored as f64,
        confusion,
        n_scored: scored,
        n_excluded: excluded,
    })
}

/// Room accuracy for either head: coordinate outputs are mapped through the
/// floor plan's rooms, room outputs use their most probable class.
pub fn evaluate_rooms(model: &TrainedModel, test: &TrainingSet) -> Result<RoomMetrics, ExperimentError> {
    let frames: Vec<_> = test.samples.iter().map(|s| &s.frame).collect();
    let preds = model.predict(&frames)?;
    let predicted: Vec<Option<usize>> = preds.iter().map(|p| predicted_room(p, &test.floorplan)).collect();
    let truth: Vec<Option<usize>> = test
        .samples
        .iter()
        .map(|s| s.target.room.as_ref().map(|r| r.index))
        .collect();
    room_metrics(&predicted, &truth, test.floorplan.rooms.len())
}

pub fn predicted_room(p: &Prediction, floorplan: &FloorPlan) -> Option<usize> {
    match p {
        Prediction::Position(p) => floorplan.room_of(p.x_px, p.y_px).map(|r| r.index),
        Prediction::Rooms(r) => Some(r.argmax()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_a() -> FloorPlan {
        FloorPlan::bare("A", 460, 753, 5800.0, 9500.0)
    }

    #[test]
    fn combined_is_mean_of_axes() {
        let m = RegressionMetrics::new(0.14, 0.23);
        assert!((m.mae_m - 0.185).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let pairs = vec![([10.0, 20.0], [10.0, 20.0]); 5];
        assert_eq!(
            regression_metrics(&pairs, &flat_a()).unwrap(),
            RegressionMetrics::new(0.0, 0.0)
        );
    }

    #[test]
    fn constant_x_error_in_metres() {
        let pairs: Vec<_> = (0..7).map(|i| ([100.0 + 46.0, i as f64], [100.0, i as f64])).collect();
        let m = regression_metrics(&pairs, &flat_a()).unwrap();
        // 46 px * 5800/460 mm/px = 580 mm
        assert!((m.mae_x_m - 0.580).abs() < 1e-12);
        assert_eq!(m.mae_y_m, 0.0);
        assert!(matches!(
            regression_metrics(&[], &flat_a()),
            Err(ExperimentError::EmptyTestSet)
        ));
    }

    #[test]
    fn room_accuracy() {
        let m = room_metrics(
            &[Some(0), Some(1), None, Some(1)],
            &[Some(0), Some(0), Some(1), None],
            2,
        )
        .unwrap();
        assert_eq!(m.n_scored, 3);
        assert_eq!(m.n_excluded, 1);
        assert!((m.accuracy - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.confusion, vec![vec![1, 1], vec![0, 0]]);
        let all = room_metrics(&[Some(1), Some(0)], &[Some(1), Some(0)], 2).unwrap();
        assert_eq!(all.accuracy, 1.0);
    }
}
