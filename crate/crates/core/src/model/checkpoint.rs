//! Binary checkpoint format: JSON header + dense f64 payload with checksum.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndiff::Array;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

use super::{EncoderConfig, ModelParams};

const MAGIC: &[u8; 8] = b"TWCKPT01";
const SCHEMA_VERSION: u32 = 1;

/// First-/second-moment accumulators for the optimizer, one per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Array>,
    pub v: Vec<Array>,
    pub t: u64,
}

impl AdamState {
    pub fn zeros_like(params: &ModelParams) -> AdamState {
        let zero = |a: &Array| Array::new(a.shape().to_vec(), vec![0.0; a.len()]).unwrap();
        AdamState {
            m: params.arrays().iter().map(zero).collect(),
            v: params.arrays().iter().map(zero).collect(),
            t: 0,
        }
    }
}

/// One validation snapshot: named scores at a training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub scores: BTreeMap<String, f64>,
}

/// Full training snapshot; save/load round-trips bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub params: ModelParams,
    pub adam: AdamState,
    pub step: u64,
    pub history: Vec<EvalRecord>,
    pub best_step: Option<u64>,
}

impl Checkpoint {
    pub fn fresh(config: EncoderConfig) -> Result<Checkpoint> {
        let params = ModelParams::init(&config)?;
        let adam = AdamState::zeros_like(&params);
        Ok(Checkpoint {
            config,
            params,
            adam,
            step: 0,
            history: Vec::new(),
            best_step: None,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    config: EncoderConfig,
    step: u64,
    history: Vec<EvalRecord>,
    best_step: Option<u64>,
    param_names: Vec<String>,
    param_shapes: Vec<Vec<usize>>,
    payload_sha256: String,
}

fn payload_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let arrays = ckpt
        .params
        .arrays()
        .iter()
        .chain(&ckpt.adam.m)
        .chain(&ckpt.adam.v);
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&ckpt.adam.t.to_le_bytes());
    for a in arrays {
        for &x in a.data() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    bytes
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let payload = payload_bytes(ckpt);
    let header = Header {
        schema_version: SCHEMA_VERSION,
        config: ckpt.config.clone(),
        step: ckpt.step,
        history: ckpt.history.clone(),
        best_step: ckpt.best_step,
        param_names: ckpt.params.names().to_vec(),
        param_shapes: ckpt
            .params
            .arrays()
            .iter()
            .map(|a| a.shape().to_vec())
            .collect(),
        payload_sha256: sha256_hex(&payload),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let write = |file: &mut fs::File, bytes: &[u8]| -> Result<()> {
        file.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    write(&mut file, MAGIC)?;
    write(&mut file, &(header_json.len() as u32).to_le_bytes())?;
    write(&mut file, &header_json)?;
    write(&mut file, &payload)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let need = |n: usize| -> Result<()> {
        if bytes.len() < n {
            Err(Error::Checkpoint(format!(
                "truncated file: {} bytes, need at least {n}",
                bytes.len()
            )))
        } else {
            Ok(())
        }
    };
    need(12)?;
    if &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            &bytes[..8],
            MAGIC
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    need(12 + header_len)?;
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::Checkpoint(format!(
            "schema version {} unsupported (expected {SCHEMA_VERSION})",
            header.schema_version
        )));
    }
    if header.param_names.len() != header.param_shapes.len() {
        return Err(Error::Checkpoint(
            "param name/shape count mismatch".into(),
        ));
    }

    let payload = &bytes[12 + header_len..];
    let checksum = sha256_hex(payload);
    if checksum != header.payload_sha256 {
        return Err(Error::Checkpoint(format!(
            "payload checksum mismatch: stored {}, computed {checksum}",
            header.payload_sha256
        )));
    }

    let n_values: usize = header.param_shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    let expected = 8 + 3 * n_values * 8;
    if payload.len() != expected {
        return Err(Error::Checkpoint(format!(
            "payload length {} != expected {expected}",
            payload.len()
        )));
    }
    let t = u64::from_le_bytes(payload[..8].try_into().unwrap());
    let mut floats = payload[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take_arrays = |shapes: &[Vec<usize>]| -> Result<Vec<Array>> {
        shapes
            .iter()
            .map(|shape| {
                let len: usize = shape.iter().product();
                let data: Vec<f64> = floats.by_ref().take(len).collect();
                Ok(Array::new(shape.clone(), data)?)
            })
            .collect()
    };
    let params_arrays = take_arrays(&header.param_shapes)?;
    let m = take_arrays(&header.param_shapes)?;
    let v = take_arrays(&header.param_shapes)?;

    Ok(Checkpoint {
        config: header.config,
        params: ModelParams::from_parts(header.param_names, params_arrays),
        adam: AdamState { m, v, t },
        step: header.step,
        history: header.history,
        best_step: header.best_step,
    })
}
