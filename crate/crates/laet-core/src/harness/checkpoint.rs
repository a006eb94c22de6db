//! Single-file binary checkpoints: an 8-byte magic, a little-endian manifest
//! length, a JSON manifest mapping tensor names to shapes, byte offsets and
//! element counts, then raw little-endian f64 tensor data in manifest order.
//! Loading reconstructs bitwise-identical parameters.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerParams, LayeredModel, ModelConfig, LAYER_TENSOR_NAMES};
use crate::numerics::Tensor;
use crate::probe::ProbeClassifier;

pub const MAGIC: &[u8; 8] = b"LAETCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    layers: usize,
    dim: usize,
    heads: usize,
    context: usize,
    vocab: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassifierMeta {
    input: usize,
    output: usize,
    regression: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    count: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    model: ModelMeta,
    classifier: ClassifierMeta,
    trainable_mask: Vec<bool>,
    tensors: Vec<TensorEntry>,
}

/// Serialize the model and classifier into checkpoint bytes.
pub fn checkpoint_bytes(model: &LayeredModel, classifier: &ProbeClassifier) -> Vec<u8> {
    let mut tensors: Vec<(String, &Tensor)> = model.named_tensors();
    tensors.extend(classifier.named_tensors());

    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in &tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            count: t.len() as u64,
        });
        offset += t.len() as u64 * 8;
    }
    let manifest = Manifest {
        format: FORMAT_VERSION,
        model: ModelMeta {
            layers: model.config().layers,
            dim: model.config().dim,
            heads: model.config().heads,
            context: model.config().context,
            vocab: model.tokenizer().vocab_size(),
        },
        classifier: ClassifierMeta {
            input: classifier.input_dim(),
            output: classifier.output_dim(),
            regression: classifier.is_regression(),
        },
        trainable_mask: model.trainable_mask().to_vec(),
        tensors: entries,
    };
    let manifest_json = serde_json::to_vec(&manifest).expect("manifest serializes");

    let mut out = Vec::with_capacity(16 + manifest_json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_json);
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Write a checkpoint file.
pub fn save_checkpoint(
    model: &LayeredModel,
    classifier: &ProbeClassifier,
    path: &Path,
) -> Result<()> {
    fs::write(path, checkpoint_bytes(model, classifier))?;
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

/// Parse checkpoint bytes back into a model and classifier.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(LayeredModel, ProbeClassifier)> {
    if bytes.len() < 16 {
        return Err(corrupt("file shorter than header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let data_start = 16 + manifest_len;
    if bytes.len() < data_start {
        return Err(corrupt("truncated manifest"));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..data_start])
        .map_err(|e| corrupt(format!("manifest does not parse: {e}")))?;
    if manifest.format != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format {}", manifest.format)));
    }

    // Offsets must be strictly increasing and gap-free, and the data section
    // must end exactly at the file end.
    let mut expected_offset = 0u64;
    for e in &manifest.tensors {
        if e.offset != expected_offset {
            return Err(corrupt(format!(
                "tensor '{}' at offset {}, expected {}",
                e.name, e.offset, expected_offset
            )));
        }
        let numel: usize = e.shape.iter().product();
        if numel as u64 != e.count {
            return Err(corrupt(format!(
                "tensor '{}' shape {:?} disagrees with count {}",
                e.name, e.shape, e.count
            )));
        }
        expected_offset += e.count * 8;
    }
    if bytes.len() as u64 != data_start as u64 + expected_offset {
        return Err(corrupt(format!(
            "data section is {} bytes, manifest implies {}",
            bytes.len() - data_start,
            expected_offset
        )));
    }

    let data = &bytes[data_start..];
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    for e in &manifest.tensors {
        let start = e.offset as usize;
        let end = start + e.count as usize * 8;
        let values: Vec<f64> = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(e.shape.clone(), values)
            .map_err(|e2| corrupt(format!("tensor '{}' invalid: {e2}", e.name)))?;
        if tensors.insert(e.name.clone(), tensor).is_some() {
            return Err(corrupt(format!("duplicate tensor '{}'", e.name)));
        }
    }

    let config = ModelConfig {
        layers: manifest.model.layers,
        dim: manifest.model.dim,
        heads: manifest.model.heads,
        context: manifest.model.context,
    };
    config
        .validate()
        .map_err(|e| corrupt(format!("bad model hyperparameters: {e}")))?;
    if manifest.trainable_mask.len() != config.layers {
        return Err(corrupt("trainable mask length disagrees with layer count"));
    }

    let mut take = |name: String| tensors.remove(&name).ok_or_else(|| corrupt(format!("missing tensor '{name}'")));
    let embedding = take("embedding".into())?;
    let positional = take("positional".into())?;
    if embedding.shape() != [manifest.model.vocab, config.dim] {
        return Err(corrupt("embedding shape disagrees with hyperparameters"));
    }
    if positional.shape() != [config.context, config.dim] {
        return Err(corrupt("positional shape disagrees with hyperparameters"));
    }
    let mut layers = Vec::with_capacity(config.layers);
    for l in 1..=config.layers {
        let mut grab = |tn: &str| take(format!("layer.{l}.{tn}"));
        let layer = LayerParams {
            w_q: grab(LAYER_TENSOR_NAMES[0])?,
            w_k: grab(LAYER_TENSOR_NAMES[1])?,
            w_v: grab(LAYER_TENSOR_NAMES[2])?,
            w_o: grab(LAYER_TENSOR_NAMES[3])?,
            w_ff1: grab(LAYER_TENSOR_NAMES[4])?,
            w_ff2: grab(LAYER_TENSOR_NAMES[5])?,
            ln1_gamma: grab(LAYER_TENSOR_NAMES[6])?,
            ln1_beta: grab(LAYER_TENSOR_NAMES[7])?,
            ln2_gamma: grab(LAYER_TENSOR_NAMES[8])?,
            ln2_beta: grab(LAYER_TENSOR_NAMES[9])?,
        };
        layers.push(layer);
    }
    let model = LayeredModel::restore_from_parts(
        config,
        embedding,
        positional,
        layers,
        manifest.trainable_mask.clone(),
    );
    let classifier = ProbeClassifier::restore(
        manifest.classifier.input,
        manifest.classifier.output,
        manifest.classifier.regression,
        tensors,
    )?;
    Ok((model, classifier))
}

/// Load a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<(LayeredModel, ProbeClassifier)> {
    let bytes = fs::read(path)?;
    checkpoint_from_bytes(&bytes)
}
