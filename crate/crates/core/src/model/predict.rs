use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Head;
use super::train::{ModelBody, TrainedModel};
use super::ModelError;
use crate::segmentation::FeatureFrame;

const PREDICT_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub t_star_ms: i64,
    pub x_norm: f64,
    pub y_norm: f64,
    pub x_px: f64,
    pub y_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomDistribution {
    pub t_star_ms: i64,
    pub probabilities: Vec<f64>,
}

impl RoomDistribution {
    /// Most probable room; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Prediction {
    Position(PositionEstimate),
    Rooms(RoomDistribution),
}

impl Prediction {
    pub fn position(&self) -> Option<&PositionEstimate> {
        match self {
            Prediction::Position(p) => Some(p),
            Prediction::Rooms(_) => None,
        }
    }

    pub fn rooms(&self) -> Option<&RoomDistribution> {
        match self {
            Prediction::Rooms(r) => Some(r),
            Prediction::Position(_) => None,
        }
    }
}

impl TrainedModel {
    fn position(&self, t_star_ms: i64, x_norm: f64, y_norm: f64) -> Prediction {
        Prediction::Position(PositionEstimate {
            t_star_ms,
            x_norm,
            y_norm,
            x_px: x_norm * self.norm.width_px,
            y_px: y_norm * self.norm.height_px,
        })
    }

    fn predict_chunk(&self, frames: &[&FeatureFrame]) -> Result<Vec<Prediction>, ModelError> {
        match &self.body {
            ModelBody::Network { net, params } => {
                let x = self.norm.sequence_batch(&self.input, frames)?;
                let out = net.infer(params, x);
                Ok(frames
                    .iter()
                    .zip(out.axis_iter(Axis(0)))
                    .map(|(f, row)| match self.config.head {
                        Head::RegressionXy => self.position(f.t_star_ms, row[0], row[1]),
                        Head::ClassifyRoom { .. } => Prediction::Rooms(RoomDistribution {
                            t_star_ms: f.t_star_ms,
                            probabilities: row.to_vec(),
                        }),
                    })
                    .collect())
            }
            ModelBody::Knn(index) => {
                let x = self.norm.flat_batch(&self.input, frames)?;
                frames
                    .iter()
                    .zip(x.rows())
                    .map(|(f, row)| {
                        let xy = index.predict(row, self.config.knn_k.min(index.len()))?;
                        Ok(self.position(f.t_star_ms, xy[0], xy[1]))
                    })
                    .collect()
            }
            ModelBody::Forest { x: fx, y: fy } => {
                let x = self.norm.flat_batch(&self.input, frames)?;
                Ok(frames
                    .iter()
                    .zip(x.rows())
                    .map(|(f, row)| self.position(f.t_star_ms, fx.predict(row), fy.predict(row)))
                    .collect())
            }
        }
    }

    /// Inference over many frames. Work is split into fixed chunks so the
    /// result does not depend on the thread count.
    pub fn predict(&self, frames: &[&FeatureFrame]) -> Result<Vec<Prediction>, ModelError> {
        let chunks: Vec<Vec<Prediction>> = frames
            .par_chunks(PREDICT_CHUNK)
            .map(|c| self.predict_chunk(c))
            .collect::<Result<_, _>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    pub fn predict_one(&self, frame: &FeatureFrame) -> Result<Prediction, ModelError> {
        Ok(self.predict_chunk(&[frame])?.remove(0))
    }
}
