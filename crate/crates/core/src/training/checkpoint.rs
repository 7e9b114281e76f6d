//! Checkpoint files: an ASCII header (format version, model configuration,
//! training state, tensor manifest) followed by little-endian `f64` payloads
//! in manifest order.
//!
//! ```text
//! graphfit-checkpoint
//! version=1
//! [model]
//! jet_order=3
//! ...
//! [state]
//! epoch=12
//! adam_step=480
//! seed=7
//! [tensors]
//! param/stn.mlp.0.conv.weight 3,64 0
//! ...
//! [payload]
//! <bytes>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::adam::Adam;
use super::trainer::TrainState;
use crate::error::{Error, Result};
use crate::network::{GraphFitModel, ModelConfig};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "graphfit-checkpoint";
const PAYLOAD_MARKER: &[u8] = b"\n[payload]\n";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    VersionMismatch { found: String, expected: u32 },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("tensor {name:?} has shape {found:?} in the header but the model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// A model together with the optimizer state needed to resume training.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: GraphFitModel,
    pub state: TrainState,
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &GraphFitModel, state: &TrainState) -> Result<()> {
    let path = path.as_ref();
    let mut tensors: Vec<(String, &Tensor)> = Vec::new();
    for (id, p) in model.params.iter() {
        tensors.push((format!("param/{}", p.name), &p.value));
        tensors.push((format!("adam.m/{}", p.name), &state.adam.m[id.index()]));
        tensors.push((format!("adam.v/{}", p.name), &state.adam.v[id.index()]));
    }

    let mut header = String::new();
    let mut line = |s: String| {
        header.push_str(&s);
        header.push('\n');
    };
    line(MAGIC.into());
    line(format!("version={FORMAT_VERSION}"));
    line("[model]".into());
    for (k, v) in model.config().to_pairs() {
        line(format!("{k}={v}"));
    }
    line("[state]".into());
    line(format!("epoch={}", state.epoch));
    line(format!("adam_step={}", state.adam.step));
    line(format!("seed={}", state.seed));
    line("[tensors]".into());
    let mut offset = 0usize;
    for (name, t) in &tensors {
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let shape = if shape.is_empty() { "-".to_string() } else { shape.join(",") };
        line(format!("{name} {shape} {offset}"));
        offset += t.len() * 8;
    }
    header.push_str("[payload]\n");

    let mut bytes = header.into_bytes();
    bytes.reserve(offset);
    for (_, t) in &tensors {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_checkpoint(&bytes)?)
}

fn malformed(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Malformed(msg.into())
}

fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if !bytes.starts_with(MAGIC.as_bytes()) {
        return Err(if MAGIC.as_bytes().starts_with(bytes) {
            CheckpointError::Truncated("file ends inside the header".into())
        } else {
            malformed("missing checkpoint signature")
        });
    }
    let split = bytes
        .windows(PAYLOAD_MARKER.len())
        .position(|w| w == PAYLOAD_MARKER)
        .ok_or_else(|| CheckpointError::Truncated("file ends inside the header".into()))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| malformed("header is not UTF-8"))?;
    let payload = &bytes[split + PAYLOAD_MARKER.len()..];

    let mut lines = header.lines();
    lines.next();
    let version = lines
        .next()
        .and_then(|l| l.strip_prefix("version="))
        .ok_or_else(|| malformed("missing version line"))?;
    if version.trim() != FORMAT_VERSION.to_string() {
        return Err(CheckpointError::VersionMismatch {
            found: version.trim().to_string(),
            expected: FORMAT_VERSION,
        });
    }

    let mut section = "";
    let mut model_pairs = BTreeMap::new();
    let mut state_pairs = BTreeMap::new();
    let mut entries = Vec::new();
    for line in lines {
        if line.starts_with('[') {
            section = match line {
                "[model]" => "model",
                "[state]" => "state",
                "[tensors]" => "tensors",
                other => return Err(malformed(format!("unknown section {other}"))),
            };
            continue;
        }
        match section {
            "model" | "state" => {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| malformed(format!("expected key=value, got {line:?}")))?;
                let map = if section == "model" { &mut model_pairs } else { &mut state_pairs };
                map.insert(k.to_string(), v.to_string());
            }
            "tensors" => entries.push(parse_entry(line)?),
            _ => return Err(malformed(format!("line outside any section: {line:?}"))),
        }
    }

    let config = ModelConfig::from_pairs(&model_pairs).map_err(|e| malformed(e.to_string()))?;
    let state_value = |key: &str| -> Result<u64, CheckpointError> {
        state_pairs
            .get(key)
            .ok_or_else(|| malformed(format!("missing state key {key:?}")))?
            .parse()
            .map_err(|_| malformed(format!("bad value for state key {key:?}")))
    };
    let epoch = state_value("epoch")? as usize;
    let adam_step = state_value("adam_step")?;
    let seed = state_value("seed")?;

    let mut model = GraphFitModel::new(config, 0).map_err(|e| malformed(e.to_string()))?;
    let mut adam = Adam::new(&model.params);
    adam.step = adam_step;
    let mut expected: BTreeMap<String, (usize, Vec<usize>)> = BTreeMap::new();
    for (id, p) in model.params.iter() {
        for prefix in ["param", "adam.m", "adam.v"] {
            expected.insert(format!("{prefix}/{}", p.name), (id.index(), p.value.shape().to_vec()));
        }
    }
    if entries.len() != expected.len() {
        return Err(malformed(format!(
            "manifest lists {} tensors, the model needs {}",
            entries.len(),
            expected.len()
        )));
    }

    let mut cursor = 0usize;
    let mut loaded = Vec::with_capacity(entries.len());
    for e in &entries {
        let (index, shape) = expected
            .get(&e.name)
            .ok_or_else(|| malformed(format!("unexpected tensor {:?}", e.name)))?;
        if &e.shape != shape {
            return Err(CheckpointError::ShapeMismatch {
                name: e.name.clone(),
                found: e.shape.clone(),
                expected: shape.clone(),
            });
        }
        if e.offset != cursor {
            return Err(malformed(format!("tensor {:?} starts at {}, expected {cursor}", e.name, e.offset)));
        }
        let len: usize = shape.iter().product();
        cursor += len * 8;
        loaded.push((e.name.as_str(), *index, shape.clone(), len));
    }
    if payload.len() < cursor {
        return Err(CheckpointError::Truncated(format!(
            "payload has {} bytes, manifest needs {cursor}",
            payload.len()
        )));
    }
    if payload.len() > cursor {
        return Err(malformed(format!("{} trailing bytes after the payload", payload.len() - cursor)));
    }

    let mut offset = 0;
    let ids: Vec<_> = model.params.iter().map(|(id, _)| id).collect();
    for (name, index, shape, len) in loaded {
        let data: Vec<f64> = payload[offset..offset + len * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        offset += len * 8;
        let tensor = Tensor::new(shape, data).expect("length matches shape");
        match name.split_once('/').map(|(p, _)| p) {
            Some("param") => model.params.get_mut(ids[index]).value = tensor,
            Some("adam.m") => adam.m[index] = tensor,
            _ => adam.v[index] = tensor,
        }
    }
    Ok(Checkpoint {
        model,
        state: TrainState { epoch, adam, seed },
    })
}

fn parse_entry(line: &str) -> Result<Entry, CheckpointError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let [name, shape, offset] = fields[..] else {
        return Err(malformed(format!("bad manifest line {line:?}")));
    };
    let shape = if shape == "-" {
        Vec::new()
    } else {
        shape
            .split(',')
            .map(|d| d.parse().map_err(|_| malformed(format!("bad shape in {line:?}"))))
            .collect::<Result<_, _>>()?
    };
    Ok(Entry {
        name: name.to_string(),
        shape,
        offset: offset.parse().map_err(|_| malformed(format!("bad offset in {line:?}")))?,
    })
}
