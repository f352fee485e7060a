use ndarray::{Array2, Array3, ArrayD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DropoutPlacement, Head, ModelConfig, ModelKind};
use super::layers::{Act, Activation, Attention, Cache, Conv1d, Dense, Layer, Lstm, ParamStore};
use super::loss::{cross_entropy_batch, mse_batch};
use super::normalize::InputShape;
use super::ModelError;

/// Supervision for one batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Normalized `[batch, 2]` coordinates.
    Xy(Array2<f64>),
    Rooms(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Xy(a) => a.dim().0,
            Targets::Rooms(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Xy(a) => Targets::Xy(a.select(Axis(0), idx)),
            Targets::Rooms(r) => Targets::Rooms(idx.iter().map(|&i| r[i]).collect()),
        }
    }
}

/// Layer stack plus output activation (sigmoid for coordinates, softmax for rooms).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub head: Head,
    pub binary_cross_entropy: bool,
}

impl Network {
    /// Builds the layers for `config` and initializes their parameters from `config.seed`.
    pub fn build(config: &ModelConfig, shape: &InputShape) -> Result<(Network, ParamStore), ModelError> {
        config.validate()?;
        if !config.kind.is_network() {
            return Err(ModelError::InvalidConfig(format!("{} is not a network", config.kind)));
        }
        if shape.n_steps == 0 || shape.n_sources == 0 {
            return Err(ModelError::ShapeMismatch("empty input shape".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::default();
        let mut layers = Vec::new();
        let mut c = shape.channels();
        let dropout = Layer::Dropout { rate: config.dropout };
        if config.kind.has_cnn() {
            for (i, &k) in config.conv_kernels.iter().enumerate() {
                let conv = Conv1d::init(&mut params, &format!("conv{i}"), k, c, config.conv_filters, &mut rng);
                layers.push(Layer::Conv1d(conv));
                c = config.conv_filters;
            }
            if config.kind.has_lstm()
                && matches!(
                    config.dropout_placement,
                    DropoutPlacement::BetweenCnnLstm | DropoutPlacement::Both
                )
            {
                layers.push(dropout.clone());
            }
        }
        if config.kind.has_lstm() {
            for i in 0..config.lstm_layers {
                let lstm = Lstm::init(&mut params, &format!("lstm{i}"), c, config.lstm_units, &mut rng);
                layers.push(Layer::Lstm(lstm));
                c = config.lstm_units;
                if matches!(
                    config.dropout_placement,
                    DropoutPlacement::AfterLstm | DropoutPlacement::Both
                ) {
                    layers.push(dropout.clone());
                }
            }
        }
        match config.kind {
            ModelKind::CnnLstmAttention => {
                let att = Attention::init(&mut params, "attention", c, config.attention_dim, &mut rng);
                layers.push(Layer::Attention(att));
            }
            ModelKind::Cnn => {
                layers.push(Layer::Flatten);
                c *= shape.n_steps;
            }
            _ => layers.push(Layer::LastStep),
        }
        for (i, &w) in config.mlp_widths.iter().enumerate() {
            let dense = Dense::init(&mut params, &format!("mlp{i}"), c, w, Activation::Relu, &mut rng);
            layers.push(Layer::Dense(dense));
            c = w;
        }
        let out = Dense::init(
            &mut params,
            "head",
            c,
            config.head.n_outputs(),
            Activation::Identity,
            &mut rng,
        );
        layers.push(Layer::Dense(out));
        Ok((
            Network {
                layers,
                head: config.head,
                binary_cross_entropy: config.binary_cross_entropy,
            },
            params,
        ))
    }

    fn activate(&self, mut z: Array2<f64>) -> Array2<f64> {
        match self.head {
            Head::RegressionXy => z.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp())),
            Head::ClassifyRoom { .. } => {
                for mut row in z.rows_mut() {
                    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|v| (v - m).exp());
                    let s = row.sum();
                    row /= s;
                }
            }
        }
        z
    }

    /// Forward pass; `rng` enables training-mode dropout.
    pub fn forward<R: Rng>(
        &self,
        params: &ParamStore,
        x: Array3<f64>,
        mut rng: Option<&mut R>,
    ) -> (Array2<f64>, Vec<Cache>) {
        let mut act = Act::Seq(x);
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(params, act, rng.as_deref_mut());
            act = next;
            caches.push(cache);
        }
        let Act::Flat(z) = act else {
            unreachable!("the head is always dense")
        };
        (self.activate(z), caches)
    }

    pub fn infer(&self, params: &ParamStore, x: Array3<f64>) -> Array2<f64> {
        self.forward::<ChaCha8Rng>(params, x, None).0
    }

    /// Gradients of the loss with respect to every parameter, given the
    /// loss gradient `d_out` on the activated outputs `out`.
    pub fn backward(
        &self,
        params: &ParamStore,
        caches: Vec<Cache>,
        out: &Array2<f64>,
        d_out: Array2<f64>,
    ) -> Vec<ArrayD<f64>> {
        let dz = match self.head {
            Head::RegressionXy => d_out * &out.mapv(|p| p * (1.0 - p)),
            Head::ClassifyRoom { .. } => {
                let mut dz = d_out;
                for (mut drow, prow) in dz.rows_mut().into_iter().zip(out.rows()) {
                    let inner = drow.dot(&prow);
                    drow.zip_mut_with(&prow, |d, &p| *d = p * (*d - inner));
                }
                dz
            }
        };
        let mut grads = params.zeros_like();
        let mut d = Act::Flat(dz);
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            d = layer.backward(params, &mut grads, cache, d);
        }
        grads
    }

    pub fn loss(&self, out: &Array2<f64>, targets: &Targets) -> Result<(f64, Array2<f64>), ModelError> {
        match (self.head, targets) {
            (Head::RegressionXy, Targets::Xy(t)) => mse_batch(out.view(), t.view()),
            (Head::ClassifyRoom { .. }, Targets::Rooms(r)) => {
                cross_entropy_batch(out.view(), r, self.binary_cross_entropy)
            }
            _ => Err(ModelError::ShapeMismatch("targets do not match the model head".into())),
        }
    }

    /// Loss and parameter gradients for one batch.
    pub fn loss_and_grads<R: Rng>(
        &self,
        params: &ParamStore,
        x: Array3<f64>,
        targets: &Targets,
        rng: Option<&mut R>,
    ) -> Result<(f64, Vec<ArrayD<f64>>), ModelError> {
        let (out, caches) = self.forward(params, x, rng);
        let (loss, d_out) = self.loss(&out, targets)?;
        Ok((loss, self.backward(params, caches, &out, d_out)))
    }
}
