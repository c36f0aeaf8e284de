//! Optional loader for text-format word vectors (one `token v1 … v_d`
//! line per word). Tokens found in the vocabulary have their embedding
//! rows overwritten; everything else keeps its random initialization.

use std::collections::HashMap;
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::triple::{Vocab, RESERVED_TOKENS};

/// Parses a word-vector file, requiring exactly `dim` components per
/// line. The first occurrence of a token wins (vector files conventionally
/// list frequent words first).
pub fn parse_word_vectors<R: BufRead>(reader: R, dim: usize) -> Result<HashMap<String, Vec<f64>>> {
    let mut out = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let token = parts.next().expect("non-empty line has a first field");
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse().map_err(|_| {
                    Error::parse(idx + 1, format!("invalid vector component `{p}` for `{token}`"))
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::parse(
                idx + 1,
                format!("`{token}` has {} components, expected {dim}", values.len()),
            ));
        }
        out.entry(token.to_string()).or_insert(values);
    }
    Ok(out)
}

/// Copies matching vectors into the embedding table. Reserved rows
/// (pad/unk/bos/eos) are never touched. Returns how many rows were
/// replaced.
pub fn apply_word_vectors(
    params: &mut ModelParams,
    vocab: &Vocab,
    vectors: &HashMap<String, Vec<f64>>,
) -> Result<usize> {
    let d_e = params.dims.d_e;
    let embed = params
        .tensors
        .get_mut("embed")
        .ok_or_else(|| Error::Shape("model has no `embed` table".into()))?;
    if embed.rows != vocab.len() {
        return Err(Error::Shape(format!(
            "embedding table has {} rows, vocabulary has {}",
            embed.rows,
            vocab.len()
        )));
    }
    let mut replaced = 0;
    for row in RESERVED_TOKENS.len()..vocab.len() {
        let token = vocab.token(row as u32)?;
        let Some(vector) = vectors.get(token) else { continue };
        if vector.len() != d_e {
            return Err(Error::Shape(format!(
                "vector for `{token}` has {} components, embedding width is {d_e}",
                vector.len()
            )));
        }
        embed.values[row * d_e..(row + 1) * d_e].copy_from_slice(vector);
        replaced += 1;
    }
    Ok(replaced)
}
