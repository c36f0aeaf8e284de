//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation as it executes; [`Tape::backward`]
//! walks the record in reverse topological order (creation order is already
//! topological) and accumulates vector–Jacobian products into per-node
//! gradients. The primitive set is exactly what the encoders, decoder, and
//! losses need — matrix multiplication, elementwise arithmetic and
//! activations, concatenation, slicing, softmax, log, max-pooling over rows,
//! embedding lookup, and scalar reductions. Anything larger (broadcasting,
//! higher-rank tensors) is composed from these.
//!
//! [`grad_check`] verifies analytic gradients against central finite
//! differences and is wired into both the test suite and the `gradcheck`
//! CLI command. [`adam::AdamState`] implements the Adam update with bias
//! correction, plus global-norm gradient clipping.

pub mod adam;
mod tape;

pub use adam::{clip_global_norm, AdamState};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

/// A named, trainable dense matrix living outside any tape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ParamTensor {
    /// Builds a parameter, validating that the value count matches the shape.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<ParamTensor> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "parameter shape {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(ParamTensor { rows, cols, values })
    }

    /// All-zero parameter.
    pub fn zeros(rows: usize, cols: usize) -> ParamTensor {
        ParamTensor {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }
}

/// Maximum relative error between analytic and central-difference gradients
/// of a scalar-valued function of one input tensor.
///
/// `f` must rebuild the computation on the given tape from the supplied
/// input variable; the input is perturbed component-wise with step `eps`
/// (central differences), and each component's error is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, rows: usize, cols: usize, values: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |vals: &[f64]| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(rows, cols, vals.to_vec())?;
        let loss = f(&mut tape, x)?;
        let out = tape.values(loss);
        if out.len() != 1 {
            return Err(Error::Shape(format!(
                "grad_check needs a scalar loss, got {}x{}",
                tape.rows(loss),
                tape.cols(loss)
            )));
        }
        Ok(out[0])
    };

    let mut tape = Tape::new();
    let x = tape.leaf(rows, cols, values.to_vec())?;
    let loss = f(&mut tape, x)?;
    if tape.values(loss).len() != 1 {
        return Err(Error::Shape("grad_check needs a scalar loss".into()));
    }
    let grads = tape.backward(loss)?;
    let analytic = grads
        .get(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; values.len()]);

    let mut worst = 0.0f64;
    let mut perturbed = values.to_vec();
    for i in 0..values.len() {
        perturbed[i] = values[i] + eps;
        let plus = eval(&perturbed)?;
        perturbed[i] = values[i] - eps;
        let minus = eval(&perturbed)?;
        perturbed[i] = values[i];
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Outcome of one named gradient check.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: String,
    pub max_rel_err: f64,
    pub passed: bool,
}

impl CheckRow {
    pub fn new(name: impl Into<String>, max_rel_err: f64, tolerance: f64) -> CheckRow {
        CheckRow {
            name: name.into(),
            max_rel_err,
            passed: max_rel_err < tolerance,
        }
    }
}

/// Gradient tolerance used by the check suites.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Central-difference step used by the check suites.
pub const GRAD_EPS: f64 = 1e-5;

/// Runs a gradient check for every primitive at small random shapes and
/// returns one row per primitive.
pub fn primitive_gradcheck(seed: u64) -> Result<Vec<CheckRow>> {
    use crate::rng::Pcg32;
    let mut rng = Pcg32::seed(seed);
    // Values bounded away from zero so kinked ops (relu, max-pool) are
    // checked at differentiable points.
    let sample = |n: usize, rng: &mut Pcg32| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let mag = rng.uniform(0.2, 1.0);
                if rng.next_f64() < 0.5 {
                    -mag
                } else {
                    mag
                }
            })
            .collect()
    };
    let shape = |rng: &mut Pcg32| -> (usize, usize) {
        (
            1 + (rng.next_u32() % 8) as usize,
            1 + (rng.next_u32() % 8) as usize,
        )
    };

    let mut rows = Vec::new();
    let mut check = |name: &str,
                     r: usize,
                     c: usize,
                     values: &[f64],
                     f: &dyn Fn(&mut Tape, Var) -> Result<Var>|
     -> Result<()> {
        let err = grad_check(f, r, c, values, GRAD_EPS)?;
        rows.push(CheckRow::new(name, err, GRAD_TOLERANCE));
        Ok(())
    };

    // Weighted sums reduce each op's output to a scalar with non-trivial
    // gradients everywhere.
    let (r, c) = shape(&mut rng);
    let k = 1 + (rng.next_u32() % 8) as usize;
    let other = sample(c * k, &mut rng);
    let weight = sample(r * k, &mut rng);
    let x = sample(r * c, &mut rng);
    check("matmul", r, c, &x, &move |t, x| {
        let b = t.constant(c, k, other.clone())?;
        let w = t.constant(r, k, weight.clone())?;
        let y = t.matmul(x, b)?;
        let yw = t.mul_elem(y, w)?;
        t.sum(yw)
    })?;

    let (r, c) = shape(&mut rng);
    let other = sample(r * c, &mut rng);
    let weight = sample(r * c, &mut rng);
    let x = sample(r * c, &mut rng);
    check("add", r, c, &x, &move |t, x| {
        let b = t.constant(r, c, other.clone())?;
        let w = t.constant(r, c, weight.clone())?;
        let y = t.add(x, b)?;
        let yw = t.mul_elem(y, w)?;
        t.sum(yw)
    })?;

    let (r, c) = shape(&mut rng);
    let other = sample(r * c, &mut rng);
    let weight = sample(r * c, &mut rng);
    let x = sample(r * c, &mut rng);
    check("sub", r, c, &x, &move |t, x| {
        let b = t.constant(r, c, other.clone())?;
        let w = t.constant(r, c, weight.clone())?;
        let y = t.sub(x, b)?;
        let yw = t.mul_elem(y, w)?;
        t.sum(yw)
    })?;

    let (r, c) = shape(&mut rng);
    let other = sample(r * c, &mut rng);
    let x = sample(r * c, &mut rng);
    check("mul_elementwise", r, c, &x, &move |t, x| {
        let b = t.constant(r, c, other.clone())?;
        let y = t.mul_elem(x, b)?;
        t.sum(y)
    })?;

    let (r, c) = shape(&mut rng);
    let other = sample(r * c, &mut rng);
    let weight = sample(2 * r * c, &mut rng);
    let x = sample(r * c, &mut rng);
    check("concat", r, c, &x, &move |t, x| {
        let b = t.constant(r, c, other.clone())?;
        let cat = t.concat(&[x, b], 0)?;
        let w = t.constant(2 * r, c, weight.clone())?;
        let yw = t.mul_elem(cat, w)?;
        t.sum(yw)
    })?;

    for (name, op) in [
        ("tanh", (|t: &mut Tape, v: Var| t.tanh(v)) as fn(&mut Tape, Var) -> Result<Var>),
        ("sigmoid", |t, v| t.sigmoid(v)),
        ("relu", |t, v| t.relu(v)),
    ] {
        let (r, c) = shape(&mut rng);
        let weight = sample(r * c, &mut rng);
        let x = sample(r * c, &mut rng);
        check(name, r, c, &x, &move |t, v| {
            let w = t.constant(r, c, weight.clone())?;
            let y = op(t, v)?;
            let yw = t.mul_elem(y, w)?;
            t.sum(yw)
        })?;
    }

    for axis in [0usize, 1] {
        let (r, c) = shape(&mut rng);
        let weight = sample(r * c, &mut rng);
        let x = sample(r * c, &mut rng);
        let name = format!("softmax(axis={axis})");
        check(&name, r, c, &x, &move |t, v| {
            let w = t.constant(r, c, weight.clone())?;
            let y = t.softmax(v, axis)?;
            let yw = t.mul_elem(y, w)?;
            t.sum(yw)
        })?;
    }

    let (r, c) = shape(&mut rng);
    let weight = sample(r * c, &mut rng);
    let x: Vec<f64> = (0..r * c).map(|_| rng.uniform(0.2, 2.0)).collect();
    check("log", r, c, &x, &move |t, v| {
        let w = t.constant(r, c, weight.clone())?;
        let y = t.log(v)?;
        let yw = t.mul_elem(y, w)?;
        t.sum(yw)
    })?;

    let (r, c) = shape(&mut rng);
    let weight = sample(c, &mut rng);
    let x = sample(r * c, &mut rng);
    check("row_maxpool", r, c, &x, &move |t, v| {
        let w = t.constant(1, c, weight.clone())?;
        let y = t.row_maxpool(v)?;
        let yw = t.mul_elem(y, w)?;
        t.sum(yw)
    })?;

    let rows_n = 4 + (rng.next_u32() % 5) as usize;
    let c = 1 + (rng.next_u32() % 8) as usize;
    let ids: Vec<usize> = (0..6).map(|_| (rng.next_u32() as usize) % rows_n).collect();
    let weight = sample(ids.len() * c, &mut rng);
    let x = sample(rows_n * c, &mut rng);
    let id_count = ids.len();
    check("embedding_lookup", rows_n, c, &x, &move |t, v| {
        let w = t.constant(id_count, c, weight.clone())?;
        let y = t.embedding(v, &ids)?;
        let yw = t.mul_elem(y, w)?;
        t.sum(yw)
    })?;

    let (r, c) = (2 + (rng.next_u32() % 7) as usize, 2 + (rng.next_u32() % 7) as usize);
    let r0 = (rng.next_u32() as usize) % (r - 1);
    let c0 = (rng.next_u32() as usize) % (c - 1);
    let weight = sample((r - r0) * (c - c0), &mut rng);
    let x = sample(r * c, &mut rng);
    check("slice", r, c, &x, &move |t, v| {
        let s = t.slice(v, r0..r, c0..c)?;
        let w = t.constant(r - r0, c - c0, weight.clone())?;
        let yw = t.mul_elem(s, w)?;
        t.sum(yw)
    })?;

    let (r, c) = shape(&mut rng);
    let x = sample(r * c, &mut rng);
    check("sum", r, c, &x, &|t, v| t.sum(v))?;

    let (r, c) = shape(&mut rng);
    let x = sample(r * c, &mut rng);
    check("mean", r, c, &x, &|t, v| t.mean(v))?;

    let (r, c) = shape(&mut rng);
    let x = sample(r * c, &mut rng);
    check("scalar_mul", r, c, &x, &|t, v| {
        let y = t.scalar_mul(v, -1.75)?;
        t.sum(y)
    })?;

    Ok(rows)
}
