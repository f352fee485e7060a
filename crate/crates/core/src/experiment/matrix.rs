use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use super::kfold::{kfold_split, kfold_split_grouped};
use super::metrics::{evaluate_regression, evaluate_rooms};
use super::report::{EvalReport, EvalRow, RowStatus};
use super::ExperimentError;
use crate::floorplan::FloorPlan;
use crate::ingest::{LabelSample, StreamSet, Tech};
use crate::model::{train, Head, ModelConfig, ModelKind, TrainConfig};
use crate::segmentation::{generate_training_set, SegmentConfig, TrainingSet, WindowMode, WindowSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub flat: String,
    pub tech: Tech,
    pub window: WindowSpec,
    /// Its `seed` is ignored; each fold derives its own from the cell seed.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub k_folds: usize,
    pub seed: u64,
    /// Keep whole recording sessions inside one fold.
    pub grouped_folds: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.k_folds < 2 {
            return Err(ExperimentError::DatasetTooSmall { n: 0, k: self.k_folds });
        }
        self.model.validate()?;
        Ok(())
    }
}

fn digest_seed<T: Serialize>(value: &T) -> u64 {
    let bytes = serde_json::to_vec(value).expect("plain data serializes");
    let d = Sha256::digest(&bytes);
    u64::from_le_bytes(d.as_slice()[..8].try_into().expect("32-byte digest"))
}

/// Seed for one matrix cell, derived from the base seed and the whole
/// configuration so cells never share random streams.
pub fn cell_seed(cfg: &ExperimentConfig) -> u64 {
    let mut model = cfg.model.clone();
    model.seed = 0;
    digest_seed(&(
        "cell",
        cfg.seed,
        &cfg.flat,
        cfg.tech,
        cfg.window,
        &model,
        &cfg.train,
        cfg.k_folds,
        cfg.grouped_folds,
    ))
}

/// Shared by every model on the same data, so models are compared on identical folds.
fn fold_seed(cfg: &ExperimentConfig) -> u64 {
    digest_seed(&("folds", cfg.seed, &cfg.flat, cfg.tech, cfg.window))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixPreset {
    /// Every model over 4, 12, 20 and 30 s windows in both modes, 10 folds.
    Default,
    /// A small, fast subset for smoke runs.
    Quick,
}

impl std::str::FromStr for MatrixPreset {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "default" | "full" => Ok(MatrixPreset::Default),
            "quick" => Ok(MatrixPreset::Quick),
            _ => Err(ExperimentError::Parse(format!("unknown matrix preset `{s}`"))),
        }
    }
}

/// A model x window x mode grid sharing one model template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSpec {
    pub models: Vec<ModelKind>,
    /// `(total_s, sub_s)` pairs.
    pub windows: Vec<(f64, f64)>,
    pub modes: Vec<WindowMode>,
    pub k_folds: usize,
    pub train: TrainConfig,
    /// Layer sizes and baseline settings; `kind` and `seed` are overwritten.
    pub template: ModelConfig,
    pub grouped_folds: bool,
}

impl MatrixSpec {
    pub fn preset(p: MatrixPreset) -> Self {
        match p {
            MatrixPreset::Default => Self {
                models: ModelKind::ALL.to_vec(),
                windows: vec![(4.0, 1.0), (12.0, 1.0), (20.0, 2.0), (30.0, 2.0)],
                modes: vec![WindowMode::OnlyPast, WindowMode::PastAndFuture],
                k_folds: 10,
                train: TrainConfig::default(),
                template: ModelConfig::regression(ModelKind::CnnLstm, 0),
                grouped_folds: false,
            },
            MatrixPreset::Quick => {
                let mut template = ModelConfig::regression(ModelKind::CnnLstm, 0);
                template.lstm_units = 16;
                template.mlp_widths = vec![64, 32];
                template.forest.n_trees = 20;
                Self {
                    models: vec![ModelKind::CnnLstm, ModelKind::Knn, ModelKind::Rf],
                    windows: vec![(4.0, 1.0), (12.0, 1.0)],
                    modes: vec![WindowMode::PastAndFuture],
                    k_folds: 3,
                    train: TrainConfig {
                        max_epochs: 8,
                        patience: 3,
                        ..TrainConfig::default()
                    },
                    template,
                    grouped_folds: false,
                }
            }
        }
    }

    /// Cells in report order: windowing mode, then model, then window size.
    pub fn configs(&self, flat: &str, tech: Tech, seed: u64) -> Result<Vec<ExperimentConfig>, ExperimentError> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            for &kind in &self.models {
                for &(total_s, sub_s) in &self.windows {
                    let mut model = self.template.clone();
                    model.kind = kind;
                    model.seed = 0;
                    out.push(ExperimentConfig {
                        flat: flat.to_owned(),
                        tech,
                        window: WindowSpec::new(total_s, sub_s, mode)?,
                        model,
                        train: self.train.clone(),
                        k_folds: self.k_folds,
                        seed,
                        grouped_folds: self.grouped_folds,
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Recorded data the matrix is evaluated on.
#[derive(Debug, Clone, Copy)]
pub struct MatrixData<'a> {
    pub floorplan: &'a FloorPlan,
    pub streams: &'a StreamSet,
    pub labels: &'a [LabelSample],
    pub tag_id: &'a str,
}

impl MatrixData<'_> {
    /// Anchors declared for `tech`, or every source seen for it when the
    /// floor plan declares none.
    pub fn roster(&self, tech: Tech) -> Vec<String> {
        let declared = self.floorplan.roster(tech);
        if !declared.is_empty() {
            return declared;
        }
        let mut seen: Vec<String> = self
            .streams
            .iter()
            .filter(|s| s.tech == tech && s.key.tag_id == self.tag_id)
            .map(|s| s.key.source_id.clone())
            .collect();
        seen.sort();
        seen.dedup();
        seen
    }

    pub fn training_set(&self, tech: Tech, window: WindowSpec) -> Result<TrainingSet, ExperimentError> {
        let cfg = SegmentConfig::new(window, self.roster(tech), self.tag_id).with_tech(tech);
        Ok(generate_training_set(
            &self.streams.with_tech(tech),
            self.labels,
            self.floorplan,
            &cfg,
        )?)
    }
}

struct FoldResult {
    mae: Option<(f64, f64)>,
    room_accuracy: Option<f64>,
}

fn run_fold(
    cfg: &ExperimentConfig,
    set: &TrainingSet,
    train_idx: &[usize],
    test_idx: &[usize],
    seed: u64,
) -> Result<FoldResult, ExperimentError> {
    let mut model_cfg = cfg.model.clone();
    model_cfg.seed = seed;
    let model = train(&model_cfg, &cfg.train, &set.subset(train_idx))?;
    let test = set.subset(test_idx);
    let mae = match model_cfg.head {
        Head::RegressionXy => {
            let m = evaluate_regression(&model, &test)?;
            Some((m.mae_x_m, m.mae_y_m))
        }
        Head::ClassifyRoom { .. } => None,
    };
    let room_accuracy = if set.floorplan.rooms.is_empty() {
        None
    } else {
        match evaluate_rooms(&model, &test) {
            Ok(r) => Some(r.accuracy),
            Err(ExperimentError::EmptyTestSet) => None,
            Err(e) => return Err(e),
        }
    };
    Ok(FoldResult { mae, room_accuracy })
}

/// K-fold evaluation of one configuration on an already segmented set.
pub fn run_cell(cfg: &ExperimentConfig, set: &TrainingSet) -> Result<EvalRow, ExperimentError> {
    cfg.validate()?;
    let start = Instant::now();
    let folds = if cfg.grouped_folds {
        let groups: Vec<String> = set.samples.iter().map(|s| s.session_id.clone()).collect();
        kfold_split_grouped(&groups, cfg.k_folds, fold_seed(cfg))?
    } else {
        kfold_split(set.len(), cfg.k_folds, fold_seed(cfg))?
    };
    let base = cell_seed(cfg);
    let results: Vec<FoldResult> = folds
        .par_iter()
        .enumerate()
        .map(|(i, f)| run_fold(cfg, set, &f.train, &f.test, digest_seed(&(base, i))))
        .collect::<Result<_, _>>()?;

    let k = results.len() as f64;
    let maes: Vec<(f64, f64)> = results.iter().filter_map(|r| r.mae).collect();
    let (mae_x, mae_y, mae, fold_std) = if maes.len() == results.len() {
        let mx = maes.iter().map(|m| m.0).sum::<f64>() / k;
        let my = maes.iter().map(|m| m.1).sum::<f64>() / k;
        let combined: Vec<f64> = maes.iter().map(|m| (m.0 + m.1) / 2.0).collect();
        let mean = combined.iter().sum::<f64>() / k;
        let var = combined.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / k;
        (Some(mx), Some(my), Some((mx + my) / 2.0), Some(var.sqrt()))
    } else {
        (None, None, None, None)
    };
    let rooms: Vec<f64> = results.iter().filter_map(|r| r.room_accuracy).collect();
    let room_accuracy = (!rooms.is_empty()).then(|| rooms.iter().sum::<f64>() / rooms.len() as f64);
    let wall_time_s = start.elapsed().as_secs_f64();
    info!(
        model = cfg.model.kind.label(),
        window_s = cfg.window.total_span_s(),
        mode = cfg.window.mode.label(),
        mae_m = ?mae,
        wall_time_s,
        "cell evaluated"
    );
    Ok(EvalRow {
        flat: cfg.flat.clone(),
        tech: Some(cfg.tech),
        windowing: Some(cfg.window.mode),
        model: cfg.model.kind.label().to_owned(),
        window_s: Some(cfg.window.total_span_s()),
        sub_window_s: Some(cfg.window.sub_span_s()),
        k_folds: cfg.k_folds,
        n_samples: set.len(),
        mae_x_m: mae_x,
        mae_y_m: mae_y,
        mae_m: mae,
        fold_std_m: fold_std,
        room_accuracy,
        lost_fraction: None,
        status: RowStatus::Ok,
        wall_time_s,
    })
}

fn failed_row(cfg: &ExperimentConfig, reason: String) -> EvalRow {
    EvalRow::failed(
        &cfg.flat,
        cfg.tech,
        cfg.window.mode,
        cfg.model.kind,
        cfg.window.total_span_s(),
        cfg.window.sub_span_s(),
        cfg.k_folds,
        reason,
    )
}

/// Evaluates every configuration, one row each, in the given order. A
/// failing cell becomes a failed row and the remaining cells still run.
/// Cells run in parallel; results do not depend on scheduling.
pub fn run_matrix(configs: &[ExperimentConfig], data: MatrixData<'_>) -> EvalReport {
    let mut keys: Vec<(Tech, WindowSpec)> = Vec::new();
    for c in configs {
        if !keys.contains(&(c.tech, c.window)) {
            keys.push((c.tech, c.window));
        }
    }
    let sets: HashMap<(Tech, WindowSpec), Result<TrainingSet, String>> = keys
        .par_iter()
        .map(|&(tech, w)| ((tech, w), data.training_set(tech, w).map_err(|e| e.to_string())))
        .collect();
    let rows = configs
        .par_iter()
        .map(|cfg| {
            let set = match &sets[&(cfg.tech, cfg.window)] {
                Ok(s) => s,
                Err(e) => return failed_row(cfg, e.clone()),
            };
            run_cell(cfg, set).unwrap_or_else(|e| {
                warn!(model = cfg.model.kind.label(), error = %e, "cell failed");
                failed_row(cfg, e.to_string())
            })
        })
        .collect();
    EvalReport { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_cell_counts() {
        let d = MatrixSpec::preset(MatrixPreset::Default)
            .configs("A", Tech::Uwb, 7)
            .unwrap();
        assert_eq!(d.len(), 6 * 4 * 2);
        let mut spec = MatrixSpec::preset(MatrixPreset::Default);
        spec.models = vec![ModelKind::Cnn, ModelKind::Lstm, ModelKind::CnnLstm];
        spec.windows = vec![(4.0, 1.0), (12.0, 1.0)];
        spec.modes = vec![WindowMode::PastAndFuture];
        assert_eq!(spec.configs("A", Tech::Uwb, 7).unwrap().len(), 6);
    }

    #[test]
    fn seeds_depend_on_config() {
        let c = MatrixSpec::preset(MatrixPreset::Quick)
            .configs("A", Tech::Uwb, 7)
            .unwrap();
        assert_eq!(cell_seed(&c[0]), cell_seed(&c[0].clone()));
        assert_ne!(cell_seed(&c[0]), cell_seed(&c[1]));
        // models on the same window share folds
        let same_window: Vec<_> = c.iter().filter(|x| x.window == c[0].window).collect();
        assert!(same_window.len() > 1);
        assert!(same_window.iter().all(|x| fold_seed(x) == fold_seed(&c[0])));
    }

    #[test]
    fn k_below_two_rejected() {
        let mut c = MatrixSpec::preset(MatrixPreset::Quick)
            .configs("A", Tech::Uwb, 7)
            .unwrap()
            .remove(0);
        c.k_folds = 1;
        assert!(c.validate().is_err());
    }
}
