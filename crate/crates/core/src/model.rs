//! Model dimensions, the named-parameter registry, initialization, and the
//! shared LSTM cell used by both encoders and the decoder.

use std::collections::BTreeMap;

use crate::autodiff::{ParamTensor, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{build_entity_graph, build_levi_graph, compute_meta_paths, normalize_adjacency};
use crate::rng::Pcg32;
use crate::triple::{Example, Vocab, EOS};

/// Shape hyperparameters shared by every component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Vocabulary size (including the four reserved tokens).
    pub vocab: usize,
    /// Word-embedding width.
    pub d_e: usize,
    /// Encoder/decoder hidden width `D`; must be even because each
    /// direction of the path encoder carries `D/2`.
    pub hidden: usize,
    /// Number of graph-convolution layers.
    pub gcn_layers: usize,
}

impl ModelDims {
    pub fn new(vocab: usize, d_e: usize, hidden: usize, gcn_layers: usize) -> Result<ModelDims> {
        if vocab < 5 {
            return Err(Error::Config(format!(
                "vocabulary of {vocab} leaves no room beyond the reserved tokens"
            )));
        }
        if d_e == 0 || hidden == 0 || gcn_layers == 0 {
            return Err(Error::Config(
                "embedding width, hidden width, and layer count must be positive".into(),
            ));
        }
        if hidden % 2 != 0 {
            return Err(Error::Config(format!(
                "hidden width must be even to split across path directions, got {hidden}"
            )));
        }
        Ok(ModelDims {
            vocab,
            d_e,
            hidden,
            gcn_layers,
        })
    }

    /// Per-direction hidden width of the path encoder.
    pub fn half(&self) -> usize {
        self.hidden / 2
    }
}

/// All trainable tensors, keyed by stable names. The map is ordered, so
/// iteration (and therefore checkpoints and staging) is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub tensors: BTreeMap<String, ParamTensor>,
}

/// Draws from the Xavier/Glorot uniform range ±√(6/(fan_in+fan_out)).
fn xavier(rng: &mut Pcg32, rows: usize, cols: usize) -> ParamTensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
    ParamTensor {
        rows,
        cols,
        values,
    }
}

/// An LSTM bias: zeros except the forget-gate block, which starts at one so
/// early training does not immediately erase cell state.
fn lstm_bias(hidden: usize) -> ParamTensor {
    let mut values = vec![0.0; 4 * hidden];
    for v in &mut values[hidden..2 * hidden] {
        *v = 1.0;
    }
    ParamTensor {
        rows: 1,
        cols: 4 * hidden,
        values,
    }
}

impl ModelParams {
    /// Initializes every tensor from the given generator. Creation order is
    /// fixed, so a seed fully determines the parameters.
    pub fn init(dims: ModelDims, rng: &mut Pcg32) -> ModelParams {
        let d = dims.hidden;
        let h = dims.half();
        let de = dims.d_e;
        let v = dims.vocab;
        let mut tensors = BTreeMap::new();
        let put = |map: &mut BTreeMap<String, ParamTensor>, name: &str, t: ParamTensor| {
            map.insert(name.to_string(), t);
        };

        put(&mut tensors, "embed", xavier(rng, v, de));

        for dir in ["fwd", "bwd"] {
            put(&mut tensors, &format!("gmp.{dir}.w"), xavier(rng, de, 4 * h));
            put(&mut tensors, &format!("gmp.{dir}.u"), xavier(rng, h, 4 * h));
            put(&mut tensors, &format!("gmp.{dir}.b"), lstm_bias(h));
        }

        for l in 0..dims.gcn_layers {
            let in_dim = if l == 0 { de } else { d };
            put(&mut tensors, &format!("gcn.{l}.w_in"), xavier(rng, in_dim, d));
            put(&mut tensors, &format!("gcn.{l}.w_out"), xavier(rng, in_dim, d));
            put(&mut tensors, &format!("gcn.{l}.w_fuse"), xavier(rng, 2 * d, d));
        }

        put(&mut tensors, "dec.init_h.w", xavier(rng, d, d));
        put(&mut tensors, "dec.init_c.w", xavier(rng, d, d));
        put(&mut tensors, "dec.lstm.w", xavier(rng, de, 4 * d));
        put(&mut tensors, "dec.lstm.u", xavier(rng, d, 4 * d));
        put(&mut tensors, "dec.lstm.b", lstm_bias(d));

        for stream in ["attn1", "attn2"] {
            put(&mut tensors, &format!("{stream}.w_x"), xavier(rng, d, d));
            put(&mut tensors, &format!("{stream}.w_s"), xavier(rng, d, d));
            put(&mut tensors, &format!("{stream}.v"), xavier(rng, d, 1));
        }

        put(&mut tensors, "gate.w", xavier(rng, d + de, 1));
        put(&mut tensors, "gate.b", ParamTensor::zeros(1, 1));
        put(&mut tensors, "fuse.w", xavier(rng, 2 * d, d));
        put(&mut tensors, "fuse.b", ParamTensor::zeros(1, d));
        put(&mut tensors, "out.w", xavier(rng, d, v));
        put(&mut tensors, "out.b", ParamTensor::zeros(1, v));

        ModelParams { dims, tensors }
    }

    /// Records every tensor on a tape as a trainable leaf and returns the
    /// name→variable map for the builders.
    pub fn stage(&self, tape: &mut Tape) -> Result<BTreeMap<String, Var>> {
        let mut staged = BTreeMap::new();
        for (name, t) in &self.tensors {
            let var = tape.leaf(t.rows, t.cols, t.values.clone())?;
            staged.insert(name.clone(), var);
        }
        Ok(staged)
    }

    /// Records every tensor as a constant — used for inference, where no
    /// gradients are needed and the backward bookkeeping would be waste.
    pub fn stage_frozen(&self, tape: &mut Tape) -> Result<BTreeMap<String, Var>> {
        let mut staged = BTreeMap::new();
        for (name, t) in &self.tensors {
            let var = tape.constant(t.rows, t.cols, t.values.clone())?;
            staged.insert(name.clone(), var);
        }
        Ok(staged)
    }

    /// True if any parameter holds a non-finite value.
    pub fn any_non_finite(&self) -> bool {
        self.tensors
            .values()
            .any(|t| t.values.iter().any(|v| !v.is_finite()))
    }
}

/// Fetches a staged variable by name, with a clear error when the caller
/// asks for a tensor the registry does not define.
pub fn staged(vars: &BTreeMap<String, Var>, name: &str) -> Result<Var> {
    vars.get(name)
        .copied()
        .ok_or_else(|| Error::Shape(format!("parameter `{name}` is not staged")))
}

/// One LSTM cell step. `x` is `1×in`, `h` and `c` are `1×H`; the stacked
/// weights are `in×4H` / `H×4H` / `1×4H` with gates laid out as
/// [input, forget, cell, output] along the wide axis.
pub fn lstm_step(
    tape: &mut Tape,
    w: Var,
    u: Var,
    b: Var,
    x: Var,
    h: Var,
    c: Var,
    hidden: usize,
) -> Result<(Var, Var)> {
    let xw = tape.matmul(x, w)?;
    let hu = tape.matmul(h, u)?;
    let pre = tape.add(xw, hu)?;
    let z = tape.add(pre, b)?;
    let zi = tape.slice(z, 0..1, 0..hidden)?;
    let zf = tape.slice(z, 0..1, hidden..2 * hidden)?;
    let zg = tape.slice(z, 0..1, 2 * hidden..3 * hidden)?;
    let zo = tape.slice(z, 0..1, 3 * hidden..4 * hidden)?;
    let i = tape.sigmoid(zi)?;
    let f = tape.sigmoid(zf)?;
    let g = tape.tanh(zg)?;
    let o = tape.sigmoid(zo)?;
    let fc = tape.mul_elem(f, c)?;
    let ig = tape.mul_elem(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let c_act = tape.tanh(c_next)?;
    let h_next = tape.mul_elem(o, c_act)?;
    Ok((h_next, c_next))
}

/// An example converted to the tensors and indices the encoders and decoder
/// consume: meta-path token ids with per-path ranges, Levi node ids with
/// normalized adjacency in both directions, and the teacher-forcing target.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedExample {
    /// Token ids of the concatenated meta-path sequence.
    pub meta_ids: Vec<u32>,
    /// Ranges of the individual paths within `meta_ids`.
    pub path_ranges: Vec<std::ops::Range<usize>>,
    /// One token id per Levi-graph node.
    pub levi_ids: Vec<u32>,
    /// Symmetrically normalized incoming adjacency, row-major `n×n`.
    pub in_norm: Vec<f64>,
    /// Symmetrically normalized outgoing adjacency, row-major `n×n`.
    pub out_norm: Vec<f64>,
    /// Levi node count `n`.
    pub levi_len: usize,
    /// First reference with the end-of-sequence id appended.
    pub target_ids: Vec<u32>,
}

/// Runs the graph pipeline for one example and encodes everything through
/// the vocabulary. The first reference becomes the teacher-forcing target.
pub fn prepare_example(example: &Example, vocab: &Vocab) -> Result<PreparedExample> {
    let entity_graph = build_entity_graph(&example.triples)?;
    let meta = compute_meta_paths(&entity_graph);
    let meta_ids = vocab.encode(&meta.tokens);
    let path_ranges = meta.path_ranges();

    let levi = build_levi_graph(&example.triples)?;
    let levi_ids = vocab.encode(&levi.node_tokens);
    let n = levi.len();
    let in_norm = normalize_adjacency(&levi.in_adjacency(), n)?;
    let out_norm = normalize_adjacency(&levi.out_adjacency(), n)?;

    let reference = example
        .references
        .first()
        .ok_or_else(|| Error::Graph("example has no reference text".into()))?;
    let mut target_ids = vocab.encode(reference);
    target_ids.push(EOS);

    Ok(PreparedExample {
        meta_ids,
        path_ranges,
        levi_ids,
        in_norm,
        out_norm,
        levi_len: n,
        target_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triple::Example;

    fn tiny_dims() -> ModelDims {
        ModelDims::new(12, 6, 8, 2).unwrap()
    }

    #[test]
    fn dims_validate() {
        assert!(ModelDims::new(12, 6, 7, 2).is_err(), "odd hidden");
        assert!(ModelDims::new(4, 6, 8, 2).is_err(), "vocab too small");
        assert!(ModelDims::new(12, 0, 8, 2).is_err());
        assert!(ModelDims::new(12, 6, 8, 0).is_err());
        assert_eq!(tiny_dims().half(), 4);
    }

    #[test]
    fn init_produces_expected_shapes() {
        let dims = tiny_dims();
        let mut rng = Pcg32::seed(1);
        let p = ModelParams::init(dims, &mut rng);
        let t = &p.tensors;
        assert_eq!((t["embed"].rows, t["embed"].cols), (12, 6));
        assert_eq!((t["gmp.fwd.w"].rows, t["gmp.fwd.w"].cols), (6, 16));
        assert_eq!((t["gmp.fwd.u"].rows, t["gmp.fwd.u"].cols), (4, 16));
        assert_eq!((t["gmp.bwd.b"].rows, t["gmp.bwd.b"].cols), (1, 16));
        // First GCN layer consumes embeddings; later layers consume D.
        assert_eq!((t["gcn.0.w_in"].rows, t["gcn.0.w_in"].cols), (6, 8));
        assert_eq!((t["gcn.1.w_in"].rows, t["gcn.1.w_in"].cols), (8, 8));
        assert_eq!((t["gcn.0.w_fuse"].rows, t["gcn.0.w_fuse"].cols), (16, 8));
        assert_eq!((t["dec.lstm.w"].rows, t["dec.lstm.w"].cols), (6, 32));
        assert_eq!((t["dec.lstm.u"].rows, t["dec.lstm.u"].cols), (8, 32));
        assert_eq!((t["attn1.v"].rows, t["attn1.v"].cols), (8, 1));
        assert_eq!((t["gate.w"].rows, t["gate.w"].cols), (14, 1));
        assert_eq!((t["fuse.w"].rows, t["fuse.w"].cols), (16, 8));
        assert_eq!((t["out.w"].rows, t["out.w"].cols), (8, 12));
        assert_eq!(t.len(), 24 + 3 * dims.gcn_layers);
    }

    #[test]
    fn lstm_biases_open_the_forget_gate() {
        let mut rng = Pcg32::seed(2);
        let p = ModelParams::init(tiny_dims(), &mut rng);
        for name in ["gmp.fwd.b", "gmp.bwd.b", "dec.lstm.b"] {
            let b = &p.tensors[name];
            let h = b.cols / 4;
            for (i, v) in b.values.iter().enumerate() {
                let expected = if (h..2 * h).contains(&i) { 1.0 } else { 0.0 };
                assert_eq!(*v, expected, "{name}[{i}]");
            }
        }
    }

    #[test]
    fn xavier_values_stay_in_bound() {
        let mut rng = Pcg32::seed(3);
        let p = ModelParams::init(tiny_dims(), &mut rng);
        let w = &p.tensors["out.w"];
        let bound = (6.0 / (w.rows + w.cols) as f64).sqrt();
        assert!(w.values.iter().all(|v| v.abs() <= bound));
        assert!(w.values.iter().any(|v| v.abs() > bound * 0.1));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = ModelParams::init(tiny_dims(), &mut Pcg32::seed(9));
        let b = ModelParams::init(tiny_dims(), &mut Pcg32::seed(9));
        let c = ModelParams::init(tiny_dims(), &mut Pcg32::seed(10));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn staging_round_trips_values() {
        let p = ModelParams::init(tiny_dims(), &mut Pcg32::seed(4));
        let mut tape = Tape::new();
        let vars = p.stage(&mut tape).unwrap();
        assert_eq!(vars.len(), p.tensors.len());
        let v = staged(&vars, "embed").unwrap();
        assert_eq!(tape.values(v), p.tensors["embed"].values.as_slice());
        assert!(staged(&vars, "missing").is_err());
    }

    #[test]
    fn lstm_step_matches_closed_form() {
        // Zero weights isolate the bias path: i = σ(0), f = σ(0), g = tanh(2),
        // o = σ(0), with c0 = 1.
        let mut tape = Tape::new();
        let h = 1usize;
        let w = tape.constant(2, 4, vec![0.0; 8]).unwrap();
        let u = tape.constant(1, 4, vec![0.0; 4]).unwrap();
        let b = tape.constant(1, 4, vec![0.0, 0.0, 2.0, 0.0]).unwrap();
        let x = tape.constant(1, 2, vec![0.3, -0.7]).unwrap();
        let h0 = tape.constant(1, 1, vec![0.0]).unwrap();
        let c0 = tape.constant(1, 1, vec![1.0]).unwrap();
        let (h1, c1) = lstm_step(&mut tape, w, u, b, x, h0, c0, h).unwrap();
        let sig0 = 0.5;
        let expected_c = sig0 * 1.0 + sig0 * 2.0f64.tanh();
        let expected_h = sig0 * expected_c.tanh();
        assert!((tape.values(c1)[0] - expected_c).abs() < 1e-15);
        assert!((tape.values(h1)[0] - expected_h).abs() < 1e-15);
    }

    #[test]
    fn prepare_example_encodes_graph_and_target() {
        let example = Example::from_raw(
            &[("a", "likes", "b"), ("b", "hates", "c")],
            &["a likes b ."],
        )
        .unwrap();
        let vocab = Vocab::build(std::slice::from_ref(&example), 1);
        let prep = prepare_example(&example, &vocab).unwrap();
        // One chained meta-path a→b→c covers both triples.
        assert_eq!(prep.path_ranges.len(), 1);
        assert_eq!(prep.meta_ids.len(), 5);
        // Levi graph: 3 entities + 2 relation occurrences.
        assert_eq!(prep.levi_len, 5);
        assert_eq!(prep.levi_ids.len(), 5);
        assert_eq!(prep.in_norm.len(), 25);
        assert_eq!(prep.out_norm.len(), 25);
        // Target is the first reference plus the end marker.
        assert_eq!(prep.target_ids.len(), 5);
        assert_eq!(*prep.target_ids.last().unwrap(), EOS);
        let decoded = vocab.decode(&prep.meta_ids).unwrap();
        assert_eq!(decoded, vec!["a", "likes", "b", "hates", "c"]);
    }

    #[test]
    fn non_finite_detection() {
        let mut p = ModelParams::init(tiny_dims(), &mut Pcg32::seed(5));
        assert!(!p.any_non_finite());
        p.tensors.get_mut("embed").unwrap().values[0] = f64::NAN;
        assert!(p.any_non_finite());
    }
}
