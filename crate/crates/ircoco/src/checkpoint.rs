//! Binary model files.
//!
//! Layout: a 4-byte little-endian header length, a UTF-8 JSON header with
//! the format version, model configuration and tensor directory, then the
//! raw little-endian `f32` data.

use std::fs;
use std::path::Path;

use ircoco_core::lm::{param_layout, DecoderLM, ModelConfig};
use ircoco_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes(model: &DecoderLM) -> Vec<u8> {
    let mut data = Vec::with_capacity(model.num_parameters() * 4);
    let mut tensors = Vec::new();
    for (name, t) in model.named_params() {
        let offset = data.len();
        for v in &t.data {
            data.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
            len: data.len() - offset,
        });
    }
    let header = Header {
        version: FORMAT_VERSION,
        config: *model.config(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(4 + json.len() + data.len());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    out
}

/// Parses a checkpoint. When `expected` is given, every configuration field
/// must match it.
pub fn from_bytes(bytes: &[u8], expected: Option<&ModelConfig>, path: &Path) -> Result<DecoderLM> {
    let bad = |detail: String| Error::format(path, None, detail);
    let header_len = bytes
        .get(..4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("four bytes")) as usize)
        .ok_or_else(|| bad("truncated: missing header length".into()))?;
    let json = bytes
        .get(4..4 + header_len)
        .ok_or_else(|| bad("truncated: header shorter than declared".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| bad(format!("bad header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(bad(format!(
            "format version {} (expected {FORMAT_VERSION})",
            header.version
        )));
    }
    if let Some(want) = expected {
        check_config(&header.config, want).map_err(bad)?;
    }
    let layout = param_layout(&header.config);
    if layout.len() != header.tensors.len() {
        return Err(bad(format!(
            "{} tensors listed, configuration needs {}",
            header.tensors.len(),
            layout.len()
        )));
    }
    let data = &bytes[4 + header_len..];
    let mut params = Vec::with_capacity(layout.len());
    for ((name, shape), entry) in layout.iter().zip(&header.tensors) {
        if &entry.name != name || &entry.shape != shape {
            return Err(bad(format!(
                "tensor {} {:?} does not match expected {} {:?}",
                entry.name, entry.shape, name, shape
            )));
        }
        let n: usize = shape.iter().product();
        if entry.len != 4 * n {
            return Err(bad(format!("tensor {} has {} bytes, expected {}", name, entry.len, 4 * n)));
        }
        let raw = data
            .get(entry.offset..entry.offset + entry.len)
            .ok_or_else(|| bad(format!("truncated: data for tensor {name} missing")))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        params.push(Tensor::new(shape, values)?);
    }
    Ok(DecoderLM::from_parts(header.config, params)?)
}

fn check_config(found: &ModelConfig, want: &ModelConfig) -> std::result::Result<(), String> {
    let fields = [
        ("layers", found.layers, want.layers),
        ("heads", found.heads, want.heads),
        ("d_model", found.d_model, want.d_model),
        ("vocab_size", found.vocab_size, want.vocab_size),
        ("max_len", found.max_len, want.max_len),
    ];
    for (name, f, w) in fields {
        if f != w {
            return Err(format!("config mismatch: {name} is {f}, expected {w}"));
        }
    }
    if found.head_kind != want.head_kind {
        return Err(format!(
            "config mismatch: head_kind is {:?}, expected {:?}",
            found.head_kind, want.head_kind
        ));
    }
    Ok(())
}

pub fn save(path: &Path, model: &DecoderLM) -> Result<()> {
    // Write then rename so an interrupted save never leaves a partial file.
    let tmp = path.with_extension("partial");
    fs::write(&tmp, to_bytes(model)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<DecoderLM> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, expected, path)
}
