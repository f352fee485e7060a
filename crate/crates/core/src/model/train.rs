use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::{debug, info};

use super::adam::{adam_step, AdamHyper, AdamState};
use super::config::{Head, ModelConfig, ModelKind, TrainConfig};
use super::forest::RegressionForest;
use super::knn::KnnIndex;
use super::layers::ParamStore;
use super::network::{Network, Targets};
use super::normalize::{InputShape, Normalization};
use super::ModelError;
use crate::ingest::Tech;
use crate::segmentation::{TrainingSet, WindowSpec};

/// Fitted weights or stored data, depending on the model kind.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelBody {
    Network { net: Network, params: ParamStore },
    Knn(KnnIndex),
    Forest { x: RegressionForest, y: RegressionForest },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub final_train_loss: Option<f64>,
    pub best_val_loss: Option<f64>,
    pub n_train: usize,
    pub n_val: usize,
    /// Samples left out because they had no usable target (room head only).
    pub n_skipped: usize,
    pub window: WindowSpec,
    pub roster: Vec<String>,
    pub tech: Option<Tech>,
    pub tag_id: String,
    pub floorplan: String,
    pub room_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub train_config: TrainConfig,
    pub input: InputShape,
    pub norm: Normalization,
    pub metadata: TrainingMetadata,
    pub body: ModelBody,
}

impl TrainedModel {
    pub fn window(&self) -> &WindowSpec {
        &self.metadata.window
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }
}

fn targets_for(config: &ModelConfig, set: &TrainingSet) -> Result<(Vec<usize>, Targets), ModelError> {
    match config.head {
        Head::RegressionXy => {
            let mut y = Array2::zeros((set.len(), 2));
            for (i, s) in set.samples.iter().enumerate() {
                y[[i, 0]] = s.target.x_norm;
                y[[i, 1]] = s.target.y_norm;
            }
            Ok(((0..set.len()).collect(), Targets::Xy(y)))
        }
        Head::ClassifyRoom { n_rooms } => {
            let mut keep = Vec::new();
            let mut rooms = Vec::new();
            for (i, s) in set.samples.iter().enumerate() {
                if let Some(room) = &s.target.room {
                    if room.index >= n_rooms {
                        return Err(ModelError::IndexOutOfRange {
                            index: room.index,
                            n_classes: n_rooms,
                        });
                    }
                    keep.push(i);
                    rooms.push(room.index);
                }
            }
            Ok((keep, Targets::Rooms(rooms)))
        }
    }
}

fn mean_loss(
    net: &Network,
    params: &ParamStore,
    x: &Array3<f64>,
    targets: &Targets,
    idx: &[usize],
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for chunk in idx.chunks(256) {
        let out = net.infer(params, x.select(Axis(0), chunk));
        let (loss, _) = net.loss(&out, &targets.select(chunk))?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

struct FitOutcome {
    params: ParamStore,
    epochs_run: usize,
    best_epoch: usize,
    final_train_loss: Option<f64>,
    best_val_loss: Option<f64>,
    n_val: usize,
}

fn fit_network(
    net: &Network,
    mut params: ParamStore,
    x: &Array3<f64>,
    targets: &Targets,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<FitOutcome, ModelError> {
    let n = targets.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = if n >= 10 {
        ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let (val, train) = order.split_at(n_val);
    let mut train = train.to_vec();
    let hyper = AdamHyper {
        lr: cfg.learning_rate,
        ..AdamHyper::default()
    };
    let mut state = AdamState::new(&params.values);
    let batch = cfg.batch_size.max(1);

    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut wait = 0;
    let mut epochs_run = 0;
    let mut last_finite = None;
    let mut final_train_loss = None;
    for epoch in 0..cfg.max_epochs {
        epochs_run = epoch + 1;
        train.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in train.chunks(batch).enumerate() {
            let xb = x.select(Axis(0), chunk);
            let (loss, grads) = net.loss_and_grads(&params, xb, &targets.select(chunk), Some(&mut rng))?;
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    last_finite,
                });
            }
            last_finite = Some(loss);
            epoch_loss += loss * chunk.len() as f64;
            adam_step(&mut params.values, &grads, &mut state, &hyper);
        }
        let train_loss = epoch_loss / train.len() as f64;
        final_train_loss = Some(train_loss);
        let monitored = if val.is_empty() {
            train_loss
        } else {
            mean_loss(net, &params, x, targets, val)?
        };
        debug!(epoch, train_loss, monitored, "epoch done");
        if monitored < best.0 {
            best = (monitored, params.clone(), epoch + 1);
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience {
                debug!(epoch, "early stop");
                break;
            }
        }
    }
    let (best_loss, best_params, best_epoch) = best;
    Ok(FitOutcome {
        params: best_params,
        epochs_run,
        best_epoch,
        final_train_loss,
        best_val_loss: (!val.is_empty() && best_loss.is_finite()).then_some(best_loss),
        n_val,
    })
}

/// Fits `config` on `set`. Results are fully determined by the config
/// (including its seed), the training config and the data.
pub fn train(config: &ModelConfig, train_cfg: &TrainConfig, set: &TrainingSet) -> Result<TrainedModel, ModelError> {
    config.validate()?;
    if set.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let (n_sources, n_steps) = set.frame_shape();
    let input = InputShape {
        n_sources,
        n_steps,
        mask_channels: config.mask_channels,
    };
    let (keep, targets) = targets_for(config, set)?;
    if keep.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let frames: Vec<_> = keep.iter().map(|&i| &set.samples[i].frame).collect();
    let norm = Normalization::fit(
        frames.iter().copied(),
        f64::from(set.floorplan.width_px),
        f64::from(set.floorplan.height_px),
    );
    let mut metadata = TrainingMetadata {
        seed: config.seed,
        epochs_run: 0,
        best_epoch: 0,
        final_train_loss: None,
        best_val_loss: None,
        n_train: keep.len(),
        n_val: 0,
        n_skipped: set.len() - keep.len(),
        window: set.config.spec,
        roster: set.config.roster.clone(),
        tech: set.config.tech,
        tag_id: set.config.tag_id.clone(),
        floorplan: set.floorplan.name.clone(),
        room_names: set.floorplan.room_names(),
    };
    let body = match config.kind {
        ModelKind::Knn => {
            let Targets::Xy(y) = targets else {
                unreachable!("validated head")
            };
            ModelBody::Knn(KnnIndex::new(norm.flat_batch(&input, &frames)?, y)?)
        }
        ModelKind::Rf => {
            let Targets::Xy(y) = targets else {
                unreachable!("validated head")
            };
            let x = norm.flat_batch(&input, &frames)?;
            let fx = RegressionForest::fit(x.view(), &y.column(0).to_vec(), &config.forest, config.seed, 0)?;
            let fy = RegressionForest::fit(x.view(), &y.column(1).to_vec(), &config.forest, config.seed, 1 << 32)?;
            ModelBody::Forest { x: fx, y: fy }
        }
        _ => {
            let (net, params) = Network::build(config, &input)?;
            let x = norm.sequence_batch(&input, &frames)?;
            let out = fit_network(&net, params, &x, &targets, train_cfg, config.seed)?;
            metadata.n_train = keep.len() - out.n_val;
            metadata.n_val = out.n_val;
            metadata.epochs_run = out.epochs_run;
            metadata.best_epoch = out.best_epoch;
            metadata.final_train_loss = out.final_train_loss;
            metadata.best_val_loss = out.best_val_loss;
            ModelBody::Network {
                net,
                params: out.params,
            }
        }
    };
    info!(
        kind = %config.kind,
        samples = keep.len(),
        epochs = metadata.epochs_run,
        best_val = ?metadata.best_val_loss,
        "model trained"
    );
    Ok(TrainedModel {
        config: config.clone(),
        train_config: train_cfg.clone(),
        input,
        norm,
        metadata,
        body,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floorplan::{FloorPlan, Room, RoomLabel};
    use crate::segmentation::{DiscardReport, FeatureFrame, SegmentConfig, TargetPoint, TrainingSample, WindowMode};

    fn tiny(kind: ModelKind, head: Head) -> ModelConfig {
        let mut c = ModelConfig::new(kind, head, 11);
        c.conv_filters = 4;
        c.lstm_units = 6;
        c.lstm_layers = 1;
        c.attention_dim = 4;
        c.mlp_widths = vec![8];
        c.knn_k = 3;
        c
    }

    fn plan() -> FloorPlan {
        let mut fp = FloorPlan::bare("toy", 100, 100, 1000.0, 1000.0);
        for (i, (name, x0)) in [("west", 0.0), ("east", 50.0)].into_iter().enumerate() {
            fp.rooms.push(Room {
                label: RoomLabel {
                    name: name.into(),
                    index: i,
                },
                polygon: vec![[x0, 0.0], [x0 + 50.0, 0.0], [x0 + 50.0, 100.0], [x0, 100.0]],
            });
        }
        fp
    }

    /// Two sources, three steps. Source 0 is strong in the west room, source 1 in the east.
    fn set(n: usize, constant_target: bool) -> TrainingSet {
        let fp = plan();
        let spec = WindowSpec::new(3.0, 1.0, WindowMode::OnlyPast).unwrap();
        let samples = (0..n)
            .map(|i| {
                let west = i % 2 == 0;
                let jitter = (i % 7) as f64;
                let (a, b) = if west {
                    (-60.0 - jitter, -95.0)
                } else {
                    (-95.0, -60.0 - jitter)
                };
                let values = (0..2 * 3 * 3).map(|k| if k < 9 { a } else { b }).collect();
                let x = if constant_target {
                    30.0
                } else if west {
                    20.0 + jitter
                } else {
                    75.0 - jitter
                };
                TrainingSample {
                    frame: FeatureFrame {
                        t_star_ms: i as i64 * 1000,
                        tag_id: "tag0".into(),
                        n_sources: 2,
                        n_steps: 3,
                        values,
                        missing: vec![false; 18],
                    },
                    target: TargetPoint::new(x, if constant_target { 70.0 } else { 50.0 }, &fp),
                    session_id: "s".into(),
                }
            })
            .collect();
        TrainingSet {
            config: SegmentConfig::new(spec, vec!["a".into(), "b".into()], "tag0"),
            floorplan: fp,
            samples,
            discards: DiscardReport::default(),
        }
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            max_epochs: 150,
            patience: 30,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn constant_target_is_learned() {
        let m = train(&tiny(ModelKind::CnnLstm, Head::RegressionXy), &quick(), &set(64, true)).unwrap();
        let ds = set(8, true);
        let frames: Vec<_> = ds.samples.iter().map(|s| &s.frame).collect();
        for p in m.predict(&frames).unwrap() {
            let p = p.position().unwrap();
            assert!((p.x_norm - 0.3).abs() < 0.02, "{p:?}");
            assert!((p.y_norm - 0.7).abs() < 0.02, "{p:?}");
        }
    }

    #[test]
    fn separable_rooms_are_classified() {
        let m = train(
            &tiny(ModelKind::Cnn, Head::ClassifyRoom { n_rooms: 2 }),
            &quick(),
            &set(60, false),
        )
        .unwrap();
        let ds = set(20, false);
        let frames: Vec<_> = ds.samples.iter().map(|s| &s.frame).collect();
        for (p, s) in m.predict(&frames).unwrap().iter().zip(&ds.samples) {
            assert_eq!(p.rooms().unwrap().argmax(), s.target.room.as_ref().unwrap().index);
        }
    }

    #[test]
    fn same_seed_same_model() {
        let cfg = tiny(ModelKind::CnnLstmAttention, Head::RegressionXy);
        let tc = TrainConfig {
            max_epochs: 5,
            ..quick()
        };
        let a = train(&cfg, &tc, &set(40, false)).unwrap();
        let b = train(&cfg, &tc, &set(40, false)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_set_rejected() {
        let mut s = set(4, false);
        s.samples.clear();
        assert!(matches!(
            train(&tiny(ModelKind::Lstm, Head::RegressionXy), &quick(), &s),
            Err(ModelError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn baselines_fit() {
        let ds = set(30, false);
        let frames: Vec<_> = ds.samples.iter().map(|s| &s.frame).collect();
        for kind in [ModelKind::Knn, ModelKind::Rf] {
            let mut cfg = tiny(kind, Head::RegressionXy);
            cfg.forest.n_trees = 10;
            let m = train(&cfg, &quick(), &ds).unwrap();
            for (p, s) in m.predict(&frames).unwrap().iter().zip(&ds.samples) {
                let p = p.position().unwrap();
                assert!((p.x_px - s.target.x_px).abs() < 15.0, "{kind}: {p:?}");
            }
        }
    }
}
