//! Versioned checkpoint container.
//!
//! Layout: an 8-byte magic, a little-endian `u32` format version, a
//! little-endian `u64` header length, a JSON header, then raw tensor data.
//! The header carries the full config text (and its hash), the step
//! counters, the rng state, the noise-retention table, and a manifest
//! naming every tensor with its shape and role; the payload is the
//! manifest's tensors concatenated in order as little-endian `f32`.  The
//! header is human-readable with `tail -c +21 file | head -c <len>`; the
//! payload layout is fully determined by the header, which keeps the format
//! diff-able and portable.
//!
//! A loaded checkpoint reproduces training bit-exactly: parameters,
//! optimizer moments, EMA shadow, rng state, and step counters all pass
//! through save/load unchanged.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use soda_core::model::TrainState;
use soda_numerics::{Array, EmaState, ParamStore};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

const MAGIC: &[u8; 8] = b"SODACKPT";
const VERSION: u32 = 1;

/// What a payload tensor is, which decides where it lands on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TensorRole {
    /// Live training parameter.
    Param,
    /// Adam first moment.
    AdamM,
    /// Adam second moment.
    AdamV,
    /// EMA shadow parameter.
    Ema,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    role: TensorRole,
    shape: Vec<usize>,
    /// Forward multiplier of the parameter entry (1.0 for non-param roles).
    forward_scale: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config_text: String,
    config_hash: String,
    /// Completed training steps.
    step: u64,
    /// Optimizer update count (tracked separately from `step` so a resumed
    /// run continues the bias correction exactly).
    adam_step: u64,
    ema_decay: f64,
    rng: ChaCha8Rng,
    /// Cumulative noise-retention table of the run's schedule; empty for
    /// models that train without one.
    alpha_bar: Vec<f64>,
    tensors: Vec<TensorMeta>,
}

fn corrupt(path: &Path, msg: impl Into<String>) -> CliError {
    CliError::Checkpoint(format!("{}: {}", path.display(), msg.into()))
}

/// Write `state` (en route to or past `step`) plus the run config and
/// schedule table to `path`.
pub fn save(
    path: &Path,
    config: &RunConfig,
    state: &TrainState<f32>,
    alpha_bar: &[f64],
) -> Result<()> {
    let mut tensors = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut push = |name: &str, role: TensorRole, array: &Array<f32>, forward_scale: f64| {
        tensors.push(TensorMeta {
            name: name.to_string(),
            role,
            shape: array.shape().to_vec(),
            forward_scale,
        });
        for v in array.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, entry) in state.store.iter() {
        push(name, TensorRole::Param, &entry.value, entry.forward_scale);
    }
    for (name, m) in &state.adam.m {
        push(name, TensorRole::AdamM, m, 1.0);
    }
    for (name, v) in &state.adam.v {
        push(name, TensorRole::AdamV, v, 1.0);
    }
    for (name, shadow) in &state.ema.shadow {
        push(name, TensorRole::Ema, shadow, 1.0);
    }
    let header = Header {
        version: VERSION,
        config_text: config.to_text(),
        config_hash: config.hash(),
        step: state.step,
        adam_step: state.adam.step,
        ema_decay: state.ema.decay,
        rng: state.rng.clone(),
        alpha_bar: alpha_bar.to_vec(),
        tensors,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| CliError::Runtime(format!("cannot serialize checkpoint header: {e}")))?;
    let file = std::fs::File::create(path)
        .map_err(|e| CliError::Checkpoint(format!("cannot create {}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e: std::io::Error| CliError::Checkpoint(format!("write {}: {e}", path.display()));
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(header_json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&header_json).map_err(io)?;
    w.write_all(&payload).map_err(io)?;
    w.flush().map_err(io)?;
    Ok(())
}

/// Everything a checkpoint restores.
#[derive(Debug)]
pub struct Loaded {
    pub config: RunConfig,
    pub state: TrainState<f32>,
    pub alpha_bar: Vec<f64>,
}

/// Read and verify a checkpoint.  Refuses files with the wrong magic or
/// version, truncated payloads, or a header whose config hash does not
/// match its config text.
pub fn load(path: &Path) -> Result<Loaded> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    let mut r = std::io::BufReader::new(file);
    let mut fixed = [0u8; 20];
    r.read_exact(&mut fixed)
        .map_err(|_| corrupt(path, "not a checkpoint: shorter than the fixed preamble"))?;
    if &fixed[0..8] != MAGIC {
        return Err(corrupt(
            path,
            format!("bad magic {:?} (expected {:?})", &fixed[0..8], MAGIC),
        ));
    }
    let version = u32::from_le_bytes(fixed[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(
            path,
            format!("format version {version} not supported (this build reads version {VERSION})"),
        ));
    }
    let header_len = u64::from_le_bytes(fixed[12..20].try_into().unwrap()) as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json)
        .map_err(|_| corrupt(path, format!("truncated header (expected {header_len} bytes)")))?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| corrupt(path, format!("unreadable header: {e}")))?;
    if header.version != version {
        return Err(corrupt(
            path,
            format!("header version {} disagrees with preamble {version}", header.version),
        ));
    }
    let config = RunConfig::parse(&header.config_text)
        .map_err(|e| corrupt(path, format!("embedded config no longer parses: {e}")))?;
    if config.hash() != header.config_hash {
        return Err(corrupt(path, "config hash does not match the embedded config text"));
    }

    let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)
        .map_err(|e| corrupt(path, format!("cannot read payload: {e}")))?;
    if payload.len() != expected * 4 {
        return Err(corrupt(
            path,
            format!("payload is {} bytes, manifest declares {}", payload.len(), expected * 4),
        ));
    }

    let mut store = ParamStore::<f32>::new();
    let mut adam_m = BTreeMap::new();
    let mut adam_v = BTreeMap::new();
    let mut shadow = BTreeMap::new();
    let mut offset = 0usize;
    for meta in &header.tensors {
        let count: usize = meta.shape.iter().product();
        let mut values = Vec::with_capacity(count);
        for i in 0..count {
            let at = (offset + i) * 4;
            values.push(f32::from_le_bytes(payload[at..at + 4].try_into().unwrap()));
        }
        offset += count;
        let array = Array::from_vec(&meta.shape, values)
            .map_err(|e| corrupt(path, format!("tensor '{}': {e}", meta.name)))?;
        match meta.role {
            TensorRole::Param => {
                store
                    .register(&meta.name, array)
                    .map_err(|e| corrupt(path, format!("duplicate tensor '{}': {e}", meta.name)))?;
                store.entry_mut(&meta.name).expect("just registered").forward_scale =
                    meta.forward_scale;
            }
            TensorRole::AdamM => {
                adam_m.insert(meta.name.clone(), array);
            }
            TensorRole::AdamV => {
                adam_v.insert(meta.name.clone(), array);
            }
            TensorRole::Ema => {
                shadow.insert(meta.name.clone(), array);
            }
        }
    }
    for name in shadow.keys() {
        if !store.contains(name) {
            return Err(corrupt(path, format!("EMA shadow '{name}' has no parameter")));
        }
    }

    let mut state = TrainState::new(store, header.ema_decay, header.rng);
    state.step = header.step;
    state.adam.step = header.adam_step;
    state.adam.m = adam_m;
    state.adam.v = adam_v;
    state.ema = EmaState {
        decay: header.ema_decay,
        shadow,
    };
    Ok(Loaded {
        config,
        state,
        alpha_bar: header.alpha_bar,
    })
}
