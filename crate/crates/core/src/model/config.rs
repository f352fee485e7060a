use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cnn,
    Lstm,
    CnnLstm,
    CnnLstmAttention,
    Knn,
    Rf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Cnn,
        ModelKind::Lstm,
        ModelKind::CnnLstm,
        ModelKind::CnnLstmAttention,
        ModelKind::Knn,
        ModelKind::Rf,
    ];

    pub fn is_network(self) -> bool {
        !matches!(self, ModelKind::Knn | ModelKind::Rf)
    }

    pub fn has_cnn(self) -> bool {
        matches!(self, ModelKind::Cnn | ModelKind::CnnLstm | ModelKind::CnnLstmAttention)
    }

    pub fn has_lstm(self) -> bool {
        matches!(self, ModelKind::Lstm | ModelKind::CnnLstm | ModelKind::CnnLstmAttention)
    }

    /// Name used in reports.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Cnn => "CNN",
            ModelKind::Lstm => "LSTM",
            ModelKind::CnnLstm => "LSTM+CNN",
            ModelKind::CnnLstmAttention => "LSTM+CNN+ATT",
            ModelKind::Knn => "KNN",
            ModelKind::Rf => "RF",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::Cnn => "cnn",
            ModelKind::Lstm => "lstm",
            ModelKind::CnnLstm => "cnn_lstm",
            ModelKind::CnnLstmAttention => "cnn_lstm_attention",
            ModelKind::Knn => "knn",
            ModelKind::Rf => "rf",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '+', ' '], "_").as_str() {
            "cnn" => Ok(ModelKind::Cnn),
            "lstm" => Ok(ModelKind::Lstm),
            "cnn_lstm" | "lstm_cnn" => Ok(ModelKind::CnnLstm),
            "cnn_lstm_attention" | "cnn_lstm_att" | "attention" => Ok(ModelKind::CnnLstmAttention),
            "knn" => Ok(ModelKind::Knn),
            "rf" | "random_forest" => Ok(ModelKind::Rf),
            _ => Err(ModelError::InvalidConfig(format!("unknown model kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    RegressionXy,
    ClassifyRoom { n_rooms: usize },
}

impl Head {
    pub fn n_outputs(self) -> usize {
        match self {
            Head::RegressionXy => 2,
            Head::ClassifyRoom { n_rooms } => n_rooms,
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Head::RegressionXy => f.write_str("regression_xy"),
            Head::ClassifyRoom { n_rooms } => write!(f, "classify_room({n_rooms})"),
        }
    }
}

/// Where dropout layers sit in the recurrent variants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutPlacement {
    #[default]
    AfterLstm,
    BetweenCnnLstm,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means a third of them.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 3,
            max_features: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub head: Head,
    pub seed: u64,
    pub conv_kernels: Vec<usize>,
    pub conv_filters: usize,
    pub lstm_layers: usize,
    pub lstm_units: usize,
    pub attention_dim: usize,
    pub mlp_widths: Vec<usize>,
    pub dropout: f64,
    pub dropout_placement: DropoutPlacement,
    /// Feed the missing-cell mask as extra input channels.
    pub mask_channels: bool,
    /// Per-class binary cross-entropy instead of categorical for the room head.
    pub binary_cross_entropy: bool,
    pub knn_k: usize,
    pub forest: ForestConfig,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, head: Head, seed: u64) -> Self {
        Self {
            kind,
            head,
            seed,
            conv_kernels: vec![2, 3, 3],
            conv_filters: 16,
            lstm_layers: 2,
            lstm_units: 32,
            attention_dim: 32,
            mlp_widths: vec![512, 256],
            dropout: 0.2,
            dropout_placement: DropoutPlacement::AfterLstm,
            mask_channels: false,
            binary_cross_entropy: false,
            knn_k: 5,
            forest: ForestConfig::default(),
        }
    }

    pub fn regression(kind: ModelKind, seed: u64) -> Self {
        Self::new(kind, Head::RegressionXy, seed)
    }

    /// True when the layer sizes are the reference architecture
    /// (kernels 2, 3, 3 and two 32-unit LSTM layers).
    pub fn is_reference_architecture(&self) -> bool {
        (!self.kind.has_cnn() || self.conv_kernels == [2, 3, 3])
            && (!self.kind.has_lstm() || (self.lstm_layers == 2 && self.lstm_units == 32))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_owned()));
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.kind.has_cnn() && (self.conv_kernels.is_empty() || self.conv_filters == 0) {
            return bad("CNN variants need at least one conv layer with filters");
        }
        if self.conv_kernels.contains(&0) {
            return bad("conv kernel size must be positive");
        }
        if self.kind.has_lstm() && (self.lstm_layers == 0 || self.lstm_units == 0) {
            return bad("LSTM variants need at least one layer with units");
        }
        if self.kind == ModelKind::CnnLstmAttention && self.attention_dim == 0 {
            return bad("attention dimension must be positive");
        }
        if self.mlp_widths.contains(&0) {
            return bad("MLP widths must be positive");
        }
        if let Head::ClassifyRoom { n_rooms } = self.head {
            if n_rooms < 2 {
                return bad("room head needs at least two rooms");
            }
            if !self.kind.is_network() {
                return Err(ModelError::UnsupportedHead {
                    kind: self.kind.to_string(),
                    head: self.head.to_string(),
                });
            }
        }
        if self.kind == ModelKind::Knn && self.knn_k == 0 {
            return bad("k must be positive");
        }
        if self.kind == ModelKind::Rf && (self.forest.n_trees == 0 || self.forest.min_leaf == 0) {
            return bad("forest needs trees and a positive leaf size");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_epochs: 200,
            patience: 20,
            val_fraction: 0.1,
            learning_rate: 1e-3,
        }
    }
}
