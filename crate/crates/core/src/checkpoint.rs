//! Plain-text checkpoint format, version `G2T-CKPT v1`.
//!
//! Layout, one record per line:
//!
//! ```text
//! G2T-CKPT v1
//! # optional comment lines (e.g. the configuration echo)
//! meta vocab=<n> d_e=<n> hidden=<n> gcn_layers=<n> rng=pcg32
//! param <name> <rows> <cols> <hex>
//! ...
//! adam step=<n> lr=<f> beta1=<f> beta2=<f> eps=<f>
//! adam_m <name> <hex>
//! adam_v <name> <hex>
//! ...
//! end
//! ```
//!
//! `<hex>` is the little-endian bytes of each 64-bit float in row-major
//! order, two lowercase hex digits per byte, so every value round-trips
//! bit-exactly. Parameters are written in sorted name order, which makes
//! saving byte-deterministic. The trailing `end` line guards against
//! truncated files.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::autodiff::{AdamState, ParamTensor};
use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelParams};

pub const MAGIC: &str = "G2T-CKPT v1";

fn encode_hex(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 16);
    for v in values {
        for b in v.to_le_bytes() {
            out.push(char::from_digit((b >> 4) as u32, 16).unwrap());
            out.push(char::from_digit((b & 0xf) as u32, 16).unwrap());
        }
    }
    out
}

fn decode_hex(hex: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    if hex.len() != expected * 16 {
        return Err(Error::Checkpoint(format!(
            "{what}: expected {} hex digits for {expected} values, got {}",
            expected * 16,
            hex.len()
        )));
    }
    let digits: Vec<u8> = hex
        .bytes()
        .map(|b| match b {
            b'0'..=b'9' => Ok(b - b'0'),
            b'a'..=b'f' => Ok(b - b'a' + 10),
            _ => Err(Error::Checkpoint(format!("{what}: invalid hex digit `{}`", b as char))),
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(expected);
    for chunk in digits.chunks_exact(16) {
        let mut bytes = [0u8; 8];
        for (i, b) in bytes.iter_mut().enumerate() {
            *b = (chunk[2 * i] << 4) | chunk[2 * i + 1];
        }
        values.push(f64::from_le_bytes(bytes));
    }
    Ok(values)
}

fn meta_field<T: std::str::FromStr>(fields: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
    let raw = fields
        .get(key)
        .ok_or_else(|| Error::Checkpoint(format!("meta line is missing `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::Checkpoint(format!("meta `{key}` has invalid value `{raw}`")))
}

/// Writes parameters (and optionally optimizer state) as a version-1
/// checkpoint. `comments` become `#` lines right after the header.
pub fn save<W: Write>(
    mut w: W,
    params: &ModelParams,
    adam: Option<&AdamState>,
    comments: &[String],
) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let d = &params.dims;
    writeln!(
        w,
        "meta vocab={} d_e={} hidden={} gcn_layers={} rng=pcg32",
        d.vocab, d.d_e, d.hidden, d.gcn_layers
    )?;
    for (name, tensor) in &params.tensors {
        writeln!(
            w,
            "param {name} {} {} {}",
            tensor.rows,
            tensor.cols,
            encode_hex(&tensor.values)
        )?;
    }
    if let Some(a) = adam {
        writeln!(
            w,
            "adam step={} lr={} beta1={} beta2={} eps={}",
            a.step, a.lr, a.beta1, a.beta2, a.eps
        )?;
        for (name, m) in &a.m {
            writeln!(w, "adam_m {name} {}", encode_hex(m))?;
        }
        for (name, v) in &a.v {
            writeln!(w, "adam_v {name} {}", encode_hex(v))?;
        }
    }
    writeln!(w, "end")?;
    Ok(())
}

/// Reads a version-1 checkpoint back. Comments are skipped; a missing
/// `end` line is treated as truncation.
pub fn load<R: BufRead>(reader: R) -> Result<(ModelParams, Option<AdamState>)> {
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Checkpoint("empty checkpoint".into()))??;
    if first.trim_end() != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad header `{}`, expected `{MAGIC}`",
            first.trim_end()
        )));
    }

    let mut dims: Option<ModelDims> = None;
    let mut tensors: BTreeMap<String, ParamTensor> = BTreeMap::new();
    let mut adam: Option<AdamState> = None;
    let mut saw_end = false;

    for line in lines {
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap_or_default();
        match tag {
            "meta" => {
                let fields: BTreeMap<&str, &str> =
                    parts.filter_map(|p| p.split_once('=')).collect();
                let rng: String = meta_field(&fields, "rng")?;
                if rng != "pcg32" {
                    return Err(Error::Checkpoint(format!(
                        "unsupported rng `{rng}`, expected pcg32"
                    )));
                }
                dims = Some(ModelDims::new(
                    meta_field(&fields, "vocab")?,
                    meta_field(&fields, "d_e")?,
                    meta_field(&fields, "hidden")?,
                    meta_field(&fields, "gcn_layers")?,
                )?);
            }
            "param" => {
                let name = parts
                    .next()
                    .ok_or_else(|| Error::Checkpoint("param line missing name".into()))?;
                let rows: usize = parts
                    .next()
                    .and_then(|p| p.parse().ok())
                    .ok_or_else(|| Error::Checkpoint(format!("param `{name}`: bad row count")))?;
                let cols: usize = parts
                    .next()
                    .and_then(|p| p.parse().ok())
                    .ok_or_else(|| Error::Checkpoint(format!("param `{name}`: bad column count")))?;
                let hex = parts
                    .next()
                    .ok_or_else(|| Error::Checkpoint(format!("param `{name}`: missing values")))?;
                let values = decode_hex(hex, rows * cols, &format!("param `{name}`"))?;
                if tensors
                    .insert(name.to_string(), ParamTensor { rows, cols, values })
                    .is_some()
                {
                    return Err(Error::Checkpoint(format!("duplicate parameter `{name}`")));
                }
            }
            "adam" => {
                let fields: BTreeMap<&str, &str> =
                    parts.filter_map(|p| p.split_once('=')).collect();
                let mut state = AdamState::new(meta_field(&fields, "lr")?);
                state.step = meta_field(&fields, "step")?;
                state.beta1 = meta_field(&fields, "beta1")?;
                state.beta2 = meta_field(&fields, "beta2")?;
                state.eps = meta_field(&fields, "eps")?;
                adam = Some(state);
            }
            "adam_m" | "adam_v" => {
                let name = parts
                    .next()
                    .ok_or_else(|| Error::Checkpoint(format!("{tag} line missing name")))?;
                let hex = parts
                    .next()
                    .ok_or_else(|| Error::Checkpoint(format!("{tag} `{name}`: missing values")))?;
                let tensor = tensors.get(name).ok_or_else(|| {
                    Error::Checkpoint(format!("{tag} for unknown parameter `{name}`"))
                })?;
                let values = decode_hex(hex, tensor.values.len(), &format!("{tag} `{name}`"))?;
                let state = adam.as_mut().ok_or_else(|| {
                    Error::Checkpoint(format!("{tag} line before adam header"))
                })?;
                let table = if tag == "adam_m" { &mut state.m } else { &mut state.v };
                if table.insert(name.to_string(), values).is_some() {
                    return Err(Error::Checkpoint(format!("duplicate {tag} for `{name}`")));
                }
            }
            "end" => {
                saw_end = true;
                break;
            }
            other => {
                return Err(Error::Checkpoint(format!("unrecognized record `{other}`")));
            }
        }
    }

    if !saw_end {
        return Err(Error::Checkpoint("truncated checkpoint: no `end` line".into()));
    }
    let dims = dims.ok_or_else(|| Error::Checkpoint("checkpoint has no meta line".into()))?;
    if tensors.is_empty() {
        return Err(Error::Checkpoint("checkpoint has no parameters".into()));
    }
    match tensors.get("embed") {
        Some(e) if e.rows == dims.vocab && e.cols == dims.d_e => {}
        Some(e) => {
            return Err(Error::Checkpoint(format!(
                "embedding shape ({}, {}) disagrees with meta ({}, {})",
                e.rows, e.cols, dims.vocab, dims.d_e
            )));
        }
        None => return Err(Error::Checkpoint("checkpoint is missing `embed`".into())),
    }
    Ok((ModelParams { dims, tensors }, adam))
}
