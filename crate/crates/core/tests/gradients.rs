//! Analytic gradients against central finite differences.

use homeloc_core::model::{grad_check, DropoutPlacement, Head, ModelConfig, ModelKind};
use homeloc_core::FeatureFrame;

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-3;

fn frame(n_sources: usize, n_steps: usize) -> FeatureFrame {
    let len = n_sources * 3 * n_steps;
    FeatureFrame {
        t_star_ms: 0,
        tag_id: "t".into(),
        n_sources,
        n_steps,
        values: (0..len).map(|i| -97.0 + ((i * 11) % 17) as f64 * 2.25).collect(),
        missing: (0..len).map(|i| i % 9 == 4).collect(),
    }
}

fn tiny(kind: ModelKind, seed: u64) -> ModelConfig {
    let mut c = ModelConfig::regression(kind, seed);
    c.conv_kernels = vec![2, 3];
    c.conv_filters = 3;
    c.lstm_layers = 2;
    c.lstm_units = 4;
    c.attention_dim = 3;
    c.mlp_widths = vec![6, 5];
    c.dropout = 0.0;
    c
}

fn check(c: &ModelConfig, f: &FeatureFrame) {
    let r = grad_check(c, f, EPS).unwrap();
    assert!(r.n_scalars > 0);
    assert!(r.max_rel_error < TOL, "{:?} {:?}: {r:?}", c.kind, c.head);
}

#[test]
fn cnn() {
    check(&tiny(ModelKind::Cnn, 1), &frame(2, 5));
}

#[test]
fn lstm() {
    check(&tiny(ModelKind::Lstm, 2), &frame(2, 5));
}

#[test]
fn cnn_lstm() {
    check(&tiny(ModelKind::CnnLstm, 3), &frame(3, 4));
}

#[test]
fn attention() {
    let mut c = tiny(ModelKind::CnnLstmAttention, 4);
    c.conv_kernels = vec![1];
    c.lstm_layers = 1;
    c.mlp_widths = vec![];
    check(&c, &frame(2, 6));
}

#[test]
fn full_attention_model_with_dropout() {
    let mut c = tiny(ModelKind::CnnLstmAttention, 5);
    c.conv_kernels = vec![2, 3, 3];
    c.dropout = 0.3;
    c.dropout_placement = DropoutPlacement::Both;
    check(&c, &frame(3, 6));
}

#[test]
fn room_heads() {
    for binary in [false, true] {
        let mut c = tiny(ModelKind::CnnLstm, 6);
        c.head = Head::ClassifyRoom { n_rooms: 4 };
        c.binary_cross_entropy = binary;
        check(&c, &frame(2, 4));
    }
}

#[test]
fn mask_channels() {
    let mut c = tiny(ModelKind::Lstm, 7);
    c.mask_channels = true;
    check(&c, &frame(2, 4));
}
