use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::segmentation::{FeatureFrame, MISSING_FILL_DBM, N_AGG};

/// Frame geometry a model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub n_sources: usize,
    pub n_steps: usize,
    pub mask_channels: bool,
}

impl InputShape {
    pub fn channels(&self) -> usize {
        let c = self.n_sources * N_AGG;
        if self.mask_channels {
            2 * c
        } else {
            c
        }
    }

    /// Length of the flattened feature vector used by the baselines.
    pub fn flat_len(&self) -> usize {
        self.channels() * self.n_steps
    }

    pub fn check(&self, frame: &FeatureFrame) -> Result<(), ModelError> {
        if frame.n_sources != self.n_sources
            || frame.n_steps != self.n_steps
            || frame.values.len() != self.n_sources * N_AGG * self.n_steps
        {
            return Err(ModelError::ShapeMismatch(format!(
                "frame is {}x{}x{}, model expects {}x{}x{}",
                frame.n_sources, N_AGG, frame.n_steps, self.n_sources, N_AGG, self.n_steps
            )));
        }
        Ok(())
    }
}

/// Affine RSSI map from `[floor, max]` to `[0, 1]` and the canvas size used
/// to normalize targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub rssi_floor: f64,
    pub rssi_max: f64,
    pub width_px: f64,
    pub height_px: f64,
}

impl Normalization {
    /// Fits the RSSI range on the observed (non-imputed) cells.
    pub fn fit<'a>(frames: impl IntoIterator<Item = &'a FeatureFrame>, width_px: f64, height_px: f64) -> Self {
        let mut max = f64::NEG_INFINITY;
        for f in frames {
            for (v, m) in f.values.iter().zip(&f.missing) {
                if !m {
                    max = max.max(*v);
                }
            }
        }
        let floor = MISSING_FILL_DBM;
        if !max.is_finite() || max <= floor {
            max = floor + 1.0;
        }
        Self {
            rssi_floor: floor,
            rssi_max: max,
            width_px,
            height_px,
        }
    }

    #[inline]
    pub fn rssi(&self, dbm: f64) -> f64 {
        (dbm - self.rssi_floor) / (self.rssi_max - self.rssi_floor)
    }

    /// Writes one frame as a `[n_steps, channels]` block into `out`.
    fn fill(&self, shape: &InputShape, frame: &FeatureFrame, mut out: ndarray::ArrayViewMut2<'_, f64>) {
        let c = shape.n_sources * N_AGG;
        for ch in 0..c {
            for k in 0..shape.n_steps {
                let i = ch * shape.n_steps + k;
                out[[k, ch]] = self.rssi(frame.values[i]);
                if shape.mask_channels {
                    out[[k, c + ch]] = f64::from(u8::from(frame.missing[i]));
                }
            }
        }
    }

    /// Batch tensor `[batch, n_steps, channels]`.
    pub fn sequence_batch(&self, shape: &InputShape, frames: &[&FeatureFrame]) -> Result<Array3<f64>, ModelError> {
        let mut x = Array3::zeros((frames.len(), shape.n_steps, shape.channels()));
        for (b, f) in frames.iter().enumerate() {
            shape.check(f)?;
            self.fill(shape, f, x.index_axis_mut(ndarray::Axis(0), b));
        }
        Ok(x)
    }

    /// Flattened features `[batch, n_steps * channels]` for the baselines.
    pub fn flat_batch(&self, shape: &InputShape, frames: &[&FeatureFrame]) -> Result<Array2<f64>, ModelError> {
        let seq = self.sequence_batch(shape, frames)?;
        let n = seq.dim().0;
        Ok(seq
            .into_shape_with_order((n, shape.flat_len()))
            .expect("contiguous batch"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> FeatureFrame {
        FeatureFrame {
            t_star_ms: 0,
            tag_id: "t".into(),
            n_sources: 1,
            n_steps: 2,
            values: vec![-80.0, -100.0, -70.0, -100.0, -90.0, -100.0],
            missing: vec![false, true, false, true, false, true],
        }
    }

    #[test]
    fn affine_map_endpoints() {
        let n = Normalization::fit([&frame()], 10.0, 10.0);
        assert_eq!(n.rssi_max, -70.0);
        assert_eq!(n.rssi(-100.0), 0.0);
        assert_eq!(n.rssi(-70.0), 1.0);
    }

    #[test]
    fn layout_is_time_by_channel() {
        let f = frame();
        let n = Normalization::fit([&f], 10.0, 10.0);
        let shape = InputShape {
            n_sources: 1,
            n_steps: 2,
            mask_channels: true,
        };
        let x = n.sequence_batch(&shape, &[&f]).unwrap();
        assert_eq!(x.dim(), (1, 2, 6));
        // channel 1 is max; step 0 holds -70
        assert_eq!(x[[0, 0, 1]], 1.0);
        assert_eq!(x[[0, 1, 1]], 0.0);
        assert_eq!(x[[0, 1, 4]], 1.0);
        assert_eq!(x[[0, 0, 4]], 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let shape = InputShape {
            n_sources: 2,
            n_steps: 2,
            mask_channels: false,
        };
        let n = Normalization::fit([&frame()], 1.0, 1.0);
        assert!(matches!(
            n.sequence_batch(&shape, &[&frame()]),
            Err(ModelError::ShapeMismatch(_))
        ));
    }
}
