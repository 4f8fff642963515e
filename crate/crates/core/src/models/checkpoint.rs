//! Binary checkpoint format.
//!
//! `b"GSMO"`, one version byte, a u64 little-endian header length, the JSON
//! header, then every parameter's values as little-endian f32 in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{layout, GsmoConfig, HeadKind, ModelParams};
use crate::error::{CheckpointError, Error, Result};
use crate::labels::JointLabelSpace;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GSMO";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct Descriptor {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: HeadKind,
    config: GsmoConfig,
    spaces: JointLabelSpace,
    params: Vec<Descriptor>,
}

pub fn encode_checkpoint(model: &ModelParams) -> Result<Vec<u8>> {
    let header = Header {
        kind: model.kind,
        config: model.config.clone(),
        spaces: model.spaces.clone(),
        params: model
            .params
            .iter()
            .map(|p| Descriptor {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let values: usize = model.params.iter().map(|p| p.value.numel()).sum();
    let mut out = Vec::with_capacity(13 + json.len() + 4 * values);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &model.params {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, field: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(CheckpointError::Truncated {
            field: field.into(),
        }
        .into());
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut rest = bytes;
    let magic = take(&mut rest, 4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic {
            found: magic.to_vec(),
        }
        .into());
    }
    let version = take(&mut rest, 1, "version")?[0];
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        }
        .into());
    }
    let len = u64::from_le_bytes(take(&mut rest, 8, "header length")?.try_into().unwrap());
    let len = usize::try_from(len)
        .map_err(|_| CheckpointError::Header(format!("header length {len}")))?;
    let json = take(&mut rest, len, "header")?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| CheckpointError::Header(e.to_string()))?;
    header
        .config
        .validate()
        .map_err(|e| CheckpointError::ConfigMismatch {
            field: "config".into(),
            detail: e.to_string(),
        })?;

    let expected = layout(header.kind, &header.config, &header.spaces);
    if expected.len() != header.params.len() {
        return Err(CheckpointError::Header(format!(
            "{} parameter descriptors, a {} model needs {}",
            header.params.len(),
            header.kind.name(),
            expected.len()
        ))
        .into());
    }
    let mut values = Vec::with_capacity(expected.len());
    for (slot, desc) in expected.iter().zip(&header.params) {
        if slot.name != desc.name {
            return Err(CheckpointError::MissingParameter(slot.name.clone()).into());
        }
        if slot.shape != desc.shape {
            return Err(CheckpointError::ShapeMismatch {
                group: slot.group.name().into(),
                name: slot.name.clone(),
                expected: slot.shape.clone(),
                found: desc.shape.clone(),
            }
            .into());
        }
        let n: usize = desc.shape.iter().product();
        let raw = take(&mut rest, 4 * n, &desc.name)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        values.push((Tensor::new(desc.shape.clone(), data)?, desc.trainable));
    }
    if !rest.is_empty() {
        return Err(CheckpointError::Header(format!(
            "{} trailing bytes after parameters",
            rest.len()
        ))
        .into());
    }
    ModelParams::from_parts(header.kind, header.config, header.spaces, values)
}

pub fn save_checkpoint(model: &ModelParams, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_checkpoint(&bytes)
}
