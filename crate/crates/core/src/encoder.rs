//! The two graph encoders: a bidirectional LSTM over extracted meta-paths
//! and a bidirectional graph-convolution stack over the Levi graph. Their
//! pooled summaries are added into the global graph vector that seeds the
//! decoder.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{lstm_step, staged, ModelDims, PreparedExample};

/// Everything the decoder needs from the encoders: per-token meta-path
/// states `r1` (L1×D), per-node graph states `r2` (n×D), and the pooled
/// global vector `z` (1×D).
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub r1: Var,
    pub r2: Var,
    pub z: Var,
}

/// Encodes the concatenated meta-path token sequence with one forward and
/// one backward LSTM per path. Both directions restart from zero state at
/// every path boundary, so a path's encoding never leaks into its
/// neighbours. Rows come back in the original token order, each row the
/// concatenation of the two directions.
pub fn encode_paths(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    meta_ids: &[u32],
    path_ranges: &[Range<usize>],
    dims: ModelDims,
) -> Result<Var> {
    if meta_ids.is_empty() {
        return Err(Error::Graph("meta-path sequence is empty".into()));
    }
    let h = dims.half();
    let embed = staged(vars, "embed")?;
    let ids: Vec<usize> = meta_ids.iter().map(|&i| i as usize).collect();
    let emb = tape.embedding(embed, &ids)?;

    let fw = staged(vars, "gmp.fwd.w")?;
    let fu = staged(vars, "gmp.fwd.u")?;
    let fb = staged(vars, "gmp.fwd.b")?;
    let bw = staged(vars, "gmp.bwd.w")?;
    let bu = staged(vars, "gmp.bwd.u")?;
    let bb = staged(vars, "gmp.bwd.b")?;

    let mut rows: Vec<Var> = Vec::with_capacity(meta_ids.len());
    for range in path_ranges {
        if range.start >= range.end || range.end > meta_ids.len() {
            return Err(Error::Graph(format!(
                "path range {range:?} out of bounds for {} tokens",
                meta_ids.len()
            )));
        }
        let len = range.end - range.start;
        let mut inputs = Vec::with_capacity(len);
        for t in range.clone() {
            inputs.push(tape.slice(emb, t..t + 1, 0..dims.d_e)?);
        }

        let mut h_f = tape.zeros(1, h);
        let mut c_f = tape.zeros(1, h);
        let mut fwd_states = Vec::with_capacity(len);
        for &x in &inputs {
            let (hn, cn) = lstm_step(tape, fw, fu, fb, x, h_f, c_f, h)?;
            h_f = hn;
            c_f = cn;
            fwd_states.push(hn);
        }

        let mut h_b = tape.zeros(1, h);
        let mut c_b = tape.zeros(1, h);
        let mut bwd_states = vec![h_b; len];
        for (k, &x) in inputs.iter().enumerate().rev() {
            let (hn, cn) = lstm_step(tape, bw, bu, bb, x, h_b, c_b, h)?;
            h_b = hn;
            c_b = cn;
            bwd_states[k] = hn;
        }

        for k in 0..len {
            rows.push(tape.concat(&[fwd_states[k], bwd_states[k]], 1)?);
        }
    }
    if rows.len() != meta_ids.len() {
        return Err(Error::Graph(format!(
            "path ranges cover {} of {} tokens",
            rows.len(),
            meta_ids.len()
        )));
    }
    tape.concat(&rows, 0)
}

/// Encodes the Levi graph with a stack of bidirectional graph convolutions:
/// each layer mixes the normalized incoming and outgoing neighbourhoods
/// through separate projections, then fuses the two directions.
pub fn encode_gcn(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    levi_ids: &[u32],
    in_norm: &[f64],
    out_norm: &[f64],
    dims: ModelDims,
) -> Result<Var> {
    let n = levi_ids.len();
    if n == 0 {
        return Err(Error::Graph("graph encoder got an empty node set".into()));
    }
    if in_norm.len() != n * n || out_norm.len() != n * n {
        return Err(Error::Shape(format!(
            "adjacency for {n} nodes needs {} entries, got {} and {}",
            n * n,
            in_norm.len(),
            out_norm.len()
        )));
    }
    let embed = staged(vars, "embed")?;
    let ids: Vec<usize> = levi_ids.iter().map(|&i| i as usize).collect();
    let mut hcur = tape.embedding(embed, &ids)?;

    let a_in = tape.constant(n, n, in_norm.to_vec())?;
    let a_out = tape.constant(n, n, out_norm.to_vec())?;

    for l in 0..dims.gcn_layers {
        let w_in = staged(vars, &format!("gcn.{l}.w_in"))?;
        let w_out = staged(vars, &format!("gcn.{l}.w_out"))?;
        let w_fuse = staged(vars, &format!("gcn.{l}.w_fuse"))?;
        let mixed_in = tape.matmul(a_in, hcur)?;
        let h_in = tape.matmul(mixed_in, w_in)?;
        let mixed_out = tape.matmul(a_out, hcur)?;
        let h_out = tape.matmul(mixed_out, w_out)?;
        let both = tape.concat(&[h_in, h_out], 1)?;
        let fused = tape.matmul(both, w_fuse)?;
        hcur = tape.relu(fused)?;
    }
    Ok(hcur)
}

/// Runs both encoders and pools them into the shared global vector
/// `z = maxpool(R1) + maxpool(R2)`.
pub fn encode(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    prep: &PreparedExample,
    dims: ModelDims,
) -> Result<Encoded> {
    let r1 = encode_paths(tape, vars, &prep.meta_ids, &prep.path_ranges, dims)?;
    let r2 = encode_gcn(
        tape,
        vars,
        &prep.levi_ids,
        &prep.in_norm,
        &prep.out_norm,
        dims,
    )?;
    let z1 = tape.row_maxpool(r1)?;
    let z2 = tape.row_maxpool(r2)?;
    let z = tape.add(z1, z2)?;
    Ok(Encoded { r1, r2, z })
}
