use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Head, ModelConfig};
use super::layers::ParamStore;
use super::network::{Network, Targets};
use super::normalize::{InputShape, Normalization};
use super::ModelError;
use crate::segmentation::FeatureFrame;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter tensor and flat element index of the worst entry.
    pub worst: (String, usize),
    pub n_scalars: usize,
}

/// Compares analytic gradients with central differences for every scalar
/// parameter of `config` built for `frame`'s shape. Dropout masks are drawn
/// from the same stream for every evaluation so the loss is a fixed function
/// of the parameters.
///
/// Freshly built networks have zero biases, which puts ReLU inputs fed only by
/// padding or dead units exactly on the kink. Every parameter is jittered
/// first so the check runs at a point where the loss is differentiable.
pub fn grad_check(config: &ModelConfig, frame: &FeatureFrame, eps: f64) -> Result<GradCheckReport, ModelError> {
    let shape = InputShape {
        n_sources: frame.n_sources,
        n_steps: frame.n_steps,
        mask_channels: config.mask_channels,
    };
    let norm = Normalization::fit([frame], 1.0, 1.0);
    let x = norm.sequence_batch(&shape, &[frame])?;
    let (net, mut params) = Network::build(config, &shape)?;
    let mut jitter = ChaCha8Rng::seed_from_u64(config.seed ^ 0x717e);
    for v in &mut params.values {
        v.mapv_inplace(|p| p + jitter.random_range(-0.05..0.05));
    }

    let mut target_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let targets = match config.head {
        Head::RegressionXy => Targets::Xy(Array2::from_shape_fn((1, 2), |_| target_rng.random_range(0.1..0.9))),
        Head::ClassifyRoom { n_rooms } => Targets::Rooms(vec![target_rng.random_range(0..n_rooms)]),
    };
    let dropout_rng = || {
        let mut r = ChaCha8Rng::seed_from_u64(config.seed);
        r.set_stream(7);
        r
    };
    let loss_at = |p: &ParamStore| -> Result<f64, ModelError> {
        let (out, _) = net.forward(p, x.clone(), Some(&mut dropout_rng()));
        Ok(net.loss(&out, &targets)?.0)
    };

    let (_, analytic) = net.loss_and_grads(&params, x.clone(), &targets, Some(&mut dropout_rng()))?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        n_scalars: params.n_scalars(),
    };
    for i in 0..params.len() {
        for j in 0..params.values[i].len() {
            let orig = params.values[i].as_slice().expect("standard layout")[j];
            params.values[i].as_slice_mut().expect("standard layout")[j] = orig + eps;
            let plus = loss_at(&params)?;
            params.values[i].as_slice_mut().expect("standard layout")[j] = orig - eps;
            let minus = loss_at(&params)?;
            params.values[i].as_slice_mut().expect("standard layout")[j] = orig;
            let cd = (plus - minus) / (2.0 * eps);
            let a = analytic[i].as_slice().expect("standard layout")[j];
            let rel = (a - cd).abs() / a.abs().max(cd.abs()).max(1e-8);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (params.names[i].clone(), j);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;

    fn frame() -> FeatureFrame {
        FeatureFrame {
            t_star_ms: 0,
            tag_id: "t".into(),
            n_sources: 2,
            n_steps: 4,
            values: (0..24).map(|i| -95.0 + ((i * 7) % 13) as f64 * 2.5).collect(),
            missing: vec![false; 24],
        }
    }

    #[test]
    fn dense_only_head() {
        let mut c = ModelConfig::regression(ModelKind::Cnn, 3);
        c.conv_kernels = vec![2];
        c.conv_filters = 3;
        c.mlp_widths = vec![5];
        let r = grad_check(&c, &frame(), 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }
}
