//! Model checkpoints: an 8-byte little-endian header length, a UTF-8 JSON
//! header, then every tensor as little-endian f64 in header order.

use std::path::Path;

use ndarray::Array2;
use optimux::decoder::{DiffractiveStack, OpticsConfig};
use optimux::encoder::{EncoderConfig, EncoderParams};
use optimux::model::HybridModel;
use optimux::muxlayout::{LayoutConfig, MuxLayout};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const FORMAT: &str = "optimux-hybrid";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub format_version: u32,
    pub config_hash: String,
    pub layout: LayoutConfig,
    pub encoder: EncoderConfig,
    pub optics: OpticsConfig,
    pub distances: Vec<f64>,
    pub trained_steps: u64,
    pub tensors: Vec<TensorEntry>,
}

fn fail(path: &Path, reason: impl Into<String>) -> CliError {
    CliError::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn encode(model: &HybridModel, config_hash: &str) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload: Vec<f64> = Vec::new();
    for (name, shape, data) in model.encoder.tensors() {
        tensors.push(TensorEntry { name: format!("encoder.{name}"), shape });
        payload.extend_from_slice(data);
    }
    for (k, layer) in model.stack.layers().iter().enumerate() {
        let (r, c) = layer.dim();
        tensors.push(TensorEntry { name: format!("stack.layer.{k}"), shape: vec![r, c] });
        payload.extend(layer.iter());
    }
    let header = CheckpointHeader {
        format: FORMAT.into(),
        format_version: FORMAT_VERSION,
        config_hash: config_hash.into(),
        layout: model.layout.config().clone(),
        encoder: model.encoder.config().clone(),
        optics: model.optics.clone(),
        distances: model.stack.distances().to_vec(),
        trained_steps: model.trained_steps,
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + 8 * payload.len());
    out.extend((json.len() as u64).to_le_bytes());
    out.extend(json);
    for v in payload {
        out.extend(v.to_le_bytes());
    }
    Ok(out)
}

pub fn save(path: &Path, model: &HybridModel, config_hash: &str) -> Result<()> {
    std::fs::write(path, encode(model, config_hash)?).map_err(CliError::io(path))
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(CheckpointHeader, HybridModel)> {
    if bytes.len() < 8 {
        return Err(fail(path, "file too short"));
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(8..8usize.saturating_add(len)).ok_or_else(|| fail(path, "header length exceeds file"))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| fail(path, format!("header: {e}")))?;
    if header.format != FORMAT || header.format_version != FORMAT_VERSION {
        return Err(fail(
            path,
            format!("unsupported format {} v{}", header.format, header.format_version),
        ));
    }
    let raw = &bytes[8 + len..];
    if raw.len() % 8 != 0 {
        return Err(fail(path, "payload is not a whole number of f64 values"));
    }
    let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let declared: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if declared != values.len() {
        return Err(fail(path, format!("header declares {declared} values, payload holds {}", values.len())));
    }

    let layout = MuxLayout::new(header.layout.clone())?;
    let mut encoder = EncoderParams::zeros(header.encoder.clone())?;
    let expected: Vec<(String, Vec<usize>)> = encoder
        .tensors()
        .into_iter()
        .map(|(n, s, _)| (format!("encoder.{n}"), s))
        .collect();
    let k = header.distances.len().saturating_sub(1);
    if header.tensors.len() != expected.len() + k {
        return Err(fail(path, "tensor list does not match the encoder and stack shapes"));
    }
    let mut offset = 0;
    for ((want_name, want_shape), (entry, dst)) in expected.iter().zip(header.tensors.iter().zip(encoder.tensors_mut())) {
        if &entry.name != want_name || &entry.shape != want_shape {
            return Err(fail(path, format!("unexpected tensor {} {:?}", entry.name, entry.shape)));
        }
        dst.copy_from_slice(&values[offset..offset + dst.len()]);
        offset += dst.len();
    }
    let mut layers = Vec::with_capacity(k);
    for entry in &header.tensors[expected.len()..] {
        let [r, c] = entry.shape[..] else {
            return Err(fail(path, format!("layer {} must be 2-D", entry.name)));
        };
        layers.push(Array2::from_shape_vec((r, c), values[offset..offset + r * c].to_vec()).expect("sized"));
        offset += r * c;
    }
    let stack = DiffractiveStack::new(layers, header.distances.clone())?;
    let mut model = HybridModel::new(layout, encoder, stack, header.optics.clone())?;
    model.trained_steps = header.trained_steps;
    Ok((header, model))
}

pub fn load(path: &Path) -> Result<(CheckpointHeader, HybridModel)> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    decode(&bytes, path)
}
