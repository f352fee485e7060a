//! Model file.
//!
//! ```text
//! magic      4 bytes  "HLMD"
//! version    u32 LE
//! header_len u32 LE
//! header     JSON     {body, config, train_config, input, norm, metadata, tensors: [{name, shape}]}
//! tensors    f64 LE, row-major, in header order
//! checksum   32 bytes SHA-256 of everything above
//! ```

use std::path::Path;

use ndarray::{ArrayD, Ix1, Ix2, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ModelConfig, TrainConfig};
use super::forest::RegressionForest;
use super::knn::KnnIndex;
use super::network::Network;
use super::normalize::{InputShape, Normalization};
use super::train::{ModelBody, TrainedModel, TrainingMetadata};
use super::ModelError;

pub const MODEL_MAGIC: &[u8; 4] = b"HLMD";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum BodyKind {
    Network,
    Knn,
    Forest,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    body: BodyKind,
    config: ModelConfig,
    train_config: TrainConfig,
    input: InputShape,
    norm: Normalization,
    metadata: TrainingMetadata,
    tensors: Vec<TensorInfo>,
}

fn fmt_err(m: impl Into<String>) -> ModelError {
    ModelError::Format(m.into())
}

fn named_tensors(model: &TrainedModel) -> (BodyKind, Vec<(String, ArrayD<f64>)>) {
    match &model.body {
        ModelBody::Network { params, .. } => (
            BodyKind::Network,
            params
                .names
                .iter()
                .cloned()
                .zip(params.values.iter().cloned())
                .collect(),
        ),
        ModelBody::Knn(idx) => (
            BodyKind::Knn,
            vec![
                ("knn.features".into(), idx.features.clone().into_dyn()),
                ("knn.targets".into(), idx.targets.clone().into_dyn()),
            ],
        ),
        ModelBody::Forest { x, y } => {
            let mut out = Vec::new();
            for (axis, f) in [("x", x), ("y", y)] {
                let (nodes, counts) = f.to_tensors();
                out.push((format!("forest.{axis}.nodes"), nodes.into_dyn()));
                out.push((
                    format!("forest.{axis}.counts"),
                    ndarray::Array1::from(counts).into_dyn(),
                ));
            }
            (BodyKind::Forest, out)
        }
    }
}

pub fn encode_model(model: &TrainedModel) -> Result<Vec<u8>, ModelError> {
    let (body, tensors) = named_tensors(model);
    let header = Header {
        body,
        config: model.config.clone(),
        train_config: model.train_config.clone(),
        input: model.input,
        norm: model.norm,
        metadata: model.metadata.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorInfo {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| fmt_err(e.to_string()))?;
    let data_len: usize = tensors.iter().map(|(_, t)| t.len() * 8).sum();
    let mut buf = Vec::with_capacity(12 + json.len() + data_len + 32);
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(digest.as_slice());
    Ok(buf)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8], ModelError> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| fmt_err("truncated"))?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32, ModelError> {
    Ok(u32::from_le_bytes(take(bytes, pos, 4)?.try_into().expect("4 bytes")))
}

pub fn decode_model(bytes: &[u8]) -> Result<TrainedModel, ModelError> {
    if bytes.len() < 12 + 32 {
        return Err(fmt_err("truncated"));
    }
    let (content, checksum) = bytes.split_at(bytes.len() - 32);
    if &bytes[..4] != MODEL_MAGIC {
        return Err(fmt_err("not a model file (bad magic)"));
    }
    if Sha256::digest(content).as_slice() != checksum {
        return Err(ModelError::Checksum);
    }
    let mut pos = 4;
    let version = read_u32(content, &mut pos)?;
    if version != MODEL_VERSION {
        return Err(fmt_err(format!("unsupported model version {version}")));
    }
    let header_len = read_u32(content, &mut pos)? as usize;
    let header: Header =
        serde_json::from_slice(take(content, &mut pos, header_len)?).map_err(|e| fmt_err(e.to_string()))?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for info in &header.tensors {
        let n: usize = info.shape.iter().product();
        let raw = take(content, &mut pos, n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = ArrayD::from_shape_vec(IxDyn(&info.shape), data).map_err(|e| fmt_err(e.to_string()))?;
        tensors.push((info.name.clone(), t));
    }
    if pos != content.len() {
        return Err(fmt_err("trailing bytes after tensors"));
    }
    let get = |name: &str| -> Result<ArrayD<f64>, ModelError> {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| fmt_err(format!("missing tensor {name}")))
    };
    let body = match header.body {
        BodyKind::Network => {
            let (net, mut params) = Network::build(&header.config, &header.input)?;
            if params.len() != tensors.len() {
                return Err(fmt_err("parameter count does not match the config"));
            }
            for (i, name) in params.names.clone().iter().enumerate() {
                let t = get(name)?;
                if t.shape() != params.values[i].shape() {
                    return Err(fmt_err(format!("tensor {name} has the wrong shape")));
                }
                params.values[i] = t;
            }
            ModelBody::Network { net, params }
        }
        BodyKind::Knn => {
            let as2 = |t: ArrayD<f64>| t.into_dimensionality::<Ix2>().map_err(|e| fmt_err(e.to_string()));
            ModelBody::Knn(KnnIndex::new(as2(get("knn.features")?)?, as2(get("knn.targets")?)?)?)
        }
        BodyKind::Forest => {
            let forest = |axis: &str| -> Result<RegressionForest, ModelError> {
                let nodes = get(&format!("forest.{axis}.nodes"))?
                    .into_dimensionality::<Ix2>()
                    .map_err(|e| fmt_err(e.to_string()))?;
                let counts = get(&format!("forest.{axis}.counts"))?
                    .into_dimensionality::<Ix1>()
                    .map_err(|e| fmt_err(e.to_string()))?;
                RegressionForest::from_tensors(nodes.view(), &counts.to_vec())
            };
            ModelBody::Forest {
                x: forest("x")?,
                y: forest("y")?,
            }
        }
    };
    Ok(TrainedModel {
        config: header.config,
        train_config: header.train_config,
        input: header.input,
        norm: header.norm,
        metadata: header.metadata,
        body,
    })
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<(), ModelError> {
    let bytes = encode_model(model)?;
    std::fs::write(path, bytes).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<TrainedModel, ModelError> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_model(&bytes)
}
