//! Training loop: cross-entropy pretraining followed by a hybrid
//! objective that mixes self-critical policy gradient with cross-entropy,
//! `L = γ·L_rl + (1−γ)·L_ce`.
//!
//! The policy-gradient term uses the model's own greedy output as the
//! baseline: each example is decoded once by sampling and once greedily,
//! both are scored by the extractor-based reward, and the loss is
//! `−(R(sampled) − R(greedy)) · Σ_t log P(sampled_t)`. The advantage is a
//! constant with respect to the parameters, so a zero advantage yields an
//! exactly zero policy gradient.
//!
//! Examples are visited in dataset order (no shuffling), one optimizer
//! step per batch, so a fixed seed reproduces the entire run bit for bit.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{clip_global_norm, AdamState, Tape, Var};
use crate::config::Config;
use crate::decoder::{
    cross_entropy_loss, decode_step, greedy_decode, init_state, pick_log_prob, sample_decode,
    teacher_forced_steps,
};
use crate::encoder::{encode, Encoded};
use crate::error::{Error, Result};
use crate::eval::corpus_bleu;
use crate::model::{prepare_example, ModelDims, ModelParams, PreparedExample};
use crate::reward::Extractor;
use crate::rng::Pcg32;
use crate::triple::{Example, Vocab, BOS, EOS, PAD};

/// One line of the training report. `seconds` is wall-clock time and is
/// excluded from determinism comparisons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub phase: String,
    pub ce_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rl_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_bleu: Option<f64>,
    pub seconds: f64,
}

impl EpochReport {
    /// Equality on everything except wall-clock time.
    pub fn metrics_eq(&self, other: &EpochReport) -> bool {
        self.epoch == other.epoch
            && self.phase == other.phase
            && self.ce_loss.to_bits() == other.ce_loss.to_bits()
            && opt_bits(self.rl_loss) == opt_bits(other.rl_loss)
            && opt_bits(self.mean_reward) == opt_bits(other.mean_reward)
            && opt_bits(self.val_bleu) == opt_bits(other.val_bleu)
    }
}

fn opt_bits(v: Option<f64>) -> Option<u64> {
    v.map(f64::to_bits)
}

/// Everything `train` hands back: the selected checkpoint, its optimizer
/// state, the per-epoch report, and (when a hybrid phase ran) a snapshot
/// of the parameters as they stood at the end of cross-entropy
/// pretraining.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub adam: AdamState,
    pub reports: Vec<EpochReport>,
    pub ce_params: Option<ModelParams>,
    pub best_val_bleu: Option<f64>,
}

/// Self-critical sequence loss for one sampled sequence:
/// `−advantage · Σ_t log P(y_t)`.
pub fn scst_loss(tape: &mut Tape, picks: &[Var], advantage: f64) -> Result<Var> {
    if picks.is_empty() {
        return Err(Error::Shape("policy-gradient loss needs at least one step".into()));
    }
    let stacked = tape.concat(picks, 0)?;
    let total = tape.sum(stacked)?;
    tape.scalar_mul(total, -advantage)
}

/// Convex mix of the two objectives: `γ·rl + (1−γ)·ce`. Both inputs must
/// be scalars and γ must lie in [0, 1].
pub fn hybrid_loss(tape: &mut Tape, rl: Var, ce: Var, gamma: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma must lie in [0,1], got {gamma}")));
    }
    for (what, v) in [("policy-gradient", rl), ("cross-entropy", ce)] {
        if tape.rows(v) != 1 || tape.cols(v) != 1 {
            return Err(Error::Shape(format!(
                "{what} loss must be a scalar, got {}×{}",
                tape.rows(v),
                tape.cols(v)
            )));
        }
    }
    let rl_term = tape.scalar_mul(rl, gamma)?;
    let ce_term = tape.scalar_mul(ce, 1.0 - gamma)?;
    tape.add(rl_term, ce_term)
}

/// Teacher-forces the decoder over an already-chosen token sequence and
/// returns each step's log probability of that token. Used to rebuild the
/// differentiable score of a sampled sequence.
pub fn score_sequence(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    enc: &Encoded,
    tokens: &[u32],
    dims: ModelDims,
) -> Result<Vec<Var>> {
    if tokens.is_empty() {
        return Err(Error::Shape("cannot score an empty sequence".into()));
    }
    let mut state = init_state(tape, vars, enc.z)?;
    let mut picks = Vec::with_capacity(tokens.len());
    let mut input = BOS;
    for &tok in tokens {
        let step = decode_step(tape, vars, enc, &state, input, dims)?;
        picks.push(pick_log_prob(tape, step.dist, tok)?);
        state = step.state;
        input = tok;
    }
    Ok(picks)
}

/// Decodes ids to tokens, dropping the pad/bos/eos markers.
pub fn strip_special(vocab: &Vocab, ids: &[u32]) -> Result<Vec<String>> {
    let kept: Vec<u32> = ids
        .iter()
        .copied()
        .filter(|&id| id != PAD && id != BOS && id != EOS)
        .collect();
    vocab.decode(&kept)
}

/// Greedy-decodes every example and returns the mean extractor reward
/// against each example's own triples.
pub fn mean_greedy_reward(
    params: &ModelParams,
    examples: &[Example],
    vocab: &Vocab,
    extractor: &Extractor,
    max_len: usize,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Shape("cannot average rewards over zero examples".into()));
    }
    let mut texts = Vec::with_capacity(examples.len());
    let mut gold: Vec<&[crate::triple::Triple]> = Vec::with_capacity(examples.len());
    for ex in examples {
        let prep = prepare_example(ex, vocab)?;
        let decoded = greedy_decode(params, &prep, max_len)?;
        texts.push(strip_special(vocab, &decoded.tokens)?);
        gold.push(&ex.triples);
    }
    let rewards = extractor.rewards(&texts, &gold)?;
    Ok(rewards.iter().sum::<f64>() / rewards.len() as f64)
}

/// Fraction of teacher-forced steps whose argmax equals the target token.
pub fn teacher_forced_accuracy(params: &ModelParams, preps: &[PreparedExample]) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for prep in preps {
        let mut tape = Tape::new();
        let vars = params.stage_frozen(&mut tape)?;
        let enc = encode(&mut tape, &vars, prep, params.dims)?;
        let dists = teacher_forced_steps(&mut tape, &vars, &enc, &prep.target_ids, params.dims)?;
        for (dist, &target) in dists.iter().zip(&prep.target_ids) {
            let row = tape.values(*dist);
            if crate::decoder::argmax_lowest(row) == target as usize {
                hits += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Shape("no teacher-forced steps to score".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Greedy-decodes every example and scores corpus BLEU against all of its
/// references.
pub fn greedy_corpus_bleu(
    params: &ModelParams,
    examples: &[Example],
    vocab: &Vocab,
    max_len: usize,
) -> Result<f64> {
    let mut candidates = Vec::with_capacity(examples.len());
    let mut references: Vec<&[Vec<String>]> = Vec::with_capacity(examples.len());
    for ex in examples {
        let prep = prepare_example(ex, vocab)?;
        let decoded = greedy_decode(params, &prep, max_len)?;
        candidates.push(strip_special(vocab, &decoded.tokens)?);
        references.push(&ex.references);
    }
    Ok(corpus_bleu(&candidates, &references)?.bleu)
}

/// Builds the full differentiable hybrid loss for one example with a
/// fixed sampled sequence and a fixed advantage, runs backward, and
/// returns the loss value and the named parameter gradients. This is the
/// algebraic core of a hybrid step with the stochastic parts pinned.
pub fn forced_hybrid_gradients(
    params: &ModelParams,
    prep: &PreparedExample,
    sampled: &[u32],
    advantage: f64,
    gamma: f64,
) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
    let mut tape = Tape::new();
    let vars = params.stage(&mut tape)?;
    let enc = encode(&mut tape, &vars, prep, params.dims)?;
    let dists = teacher_forced_steps(&mut tape, &vars, &enc, &prep.target_ids, params.dims)?;
    let mask = vec![true; prep.target_ids.len()];
    let ce = cross_entropy_loss(&mut tape, &dists, &prep.target_ids, &mask)?;
    let picks = score_sequence(&mut tape, &vars, &enc, sampled, params.dims)?;
    let rl = scst_loss(&mut tape, &picks, advantage)?;
    let loss = hybrid_loss(&mut tape, rl, ce, gamma)?;
    let value = tape.values(loss)[0];
    let grads = tape.backward(loss)?;
    let mut named = BTreeMap::new();
    for (name, var) in &vars {
        if let Some(g) = grads.get(*var) {
            named.insert(name.clone(), g.to_vec());
        }
    }
    Ok((value, named))
}

/// Forward-only value of the same composed loss, for finite differencing.
fn forced_hybrid_value(
    params: &ModelParams,
    prep: &PreparedExample,
    sampled: &[u32],
    advantage: f64,
    gamma: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = params.stage_frozen(&mut tape)?;
    let enc = encode(&mut tape, &vars, prep, params.dims)?;
    let dists = teacher_forced_steps(&mut tape, &vars, &enc, &prep.target_ids, params.dims)?;
    let mask = vec![true; prep.target_ids.len()];
    let ce = cross_entropy_loss(&mut tape, &dists, &prep.target_ids, &mask)?;
    let picks = score_sequence(&mut tape, &vars, &enc, sampled, params.dims)?;
    let rl = scst_loss(&mut tape, &picks, advantage)?;
    let loss = hybrid_loss(&mut tape, rl, ce, gamma)?;
    Ok(tape.values(loss)[0])
}

/// The micro-model fixture for the composed gradient check: a 12-token
/// vocabulary, two triples, hidden width 8.
pub fn gradcheck_fixture() -> Result<(ModelParams, Vocab, PreparedExample)> {
    let example = Example::from_raw(
        &[("ada", "likes", "tea"), ("tea", "from", "china")],
        &["ada really likes hot tea from china ."],
    )?;
    let vocab = Vocab::build(&[example.clone()], 1);
    if vocab.len() != 12 {
        return Err(Error::Vocab(format!(
            "gradient-check fixture expects 12 vocabulary entries, got {}",
            vocab.len()
        )));
    }
    let dims = ModelDims::new(vocab.len(), 8, 8, 1)?;
    let mut rng = Pcg32::seed(7);
    let params = ModelParams::init(dims, &mut rng);
    let prep = prepare_example(&example, &vocab)?;
    Ok((params, vocab, prep))
}

/// Central-finite-difference check of the composed hybrid loss on the
/// micro-model. Every parameter tensor is checked along a seeded random
/// direction (which exercises all of its entries at once), and a few
/// small tensors are additionally checked entry by entry. Returns the
/// maximum relative error.
pub fn hybrid_loss_gradcheck() -> Result<f64> {
    const EPS: f64 = 1e-5;
    let (params, vocab, prep) = gradcheck_fixture()?;
    // A fixed in-vocabulary sampled sequence (distinct from the target) and
    // a fixed non-zero advantage keep the check deterministic.
    let sampled: Vec<u32> = vocab.encode(
        &["tea", "from", "ada", "likes", "china", "."]
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>(),
    );
    let gamma = 0.3;
    let advantage = 0.7;

    let (_, analytic) = forced_hybrid_gradients(&params, &prep, &sampled, advantage, gamma)?;
    let mut dir_rng = Pcg32::seed(99);
    let mut max_rel = 0.0f64;

    let rel_err = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);

    for (name, tensor) in &params.tensors {
        let grad = analytic
            .get(name)
            .ok_or_else(|| Error::Shape(format!("no gradient reached `{name}`")))?;

        // Directional derivative along a unit random direction.
        let mut dir: Vec<f64> = (0..tensor.values.len())
            .map(|_| dir_rng.uniform(-1.0, 1.0))
            .collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        for d in &mut dir {
            *d /= norm;
        }
        let mut plus = params.clone();
        let mut minus = params.clone();
        {
            let p = plus.tensors.get_mut(name).unwrap();
            let m = minus.tensors.get_mut(name).unwrap();
            for (i, d) in dir.iter().enumerate() {
                p.values[i] += EPS * d;
                m.values[i] -= EPS * d;
            }
        }
        let f_plus = forced_hybrid_value(&plus, &prep, &sampled, advantage, gamma)?;
        let f_minus = forced_hybrid_value(&minus, &prep, &sampled, advantage, gamma)?;
        let numeric = (f_plus - f_minus) / (2.0 * EPS);
        let along: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        max_rel = max_rel.max(rel_err(along, numeric));
    }

    // Exhaustive per-entry check on small, well-conditioned tensors.
    for name in ["gate.w", "gate.b", "attn1.v", "attn2.v", "out.b"] {
        let tensor = &params.tensors[name];
        let grad = &analytic[name];
        for i in 0..tensor.values.len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.tensors.get_mut(name).unwrap().values[i] += EPS;
            minus.tensors.get_mut(name).unwrap().values[i] -= EPS;
            let f_plus = forced_hybrid_value(&plus, &prep, &sampled, advantage, gamma)?;
            let f_minus = forced_hybrid_value(&minus, &prep, &sampled, advantage, gamma)?;
            let numeric = (f_plus - f_minus) / (2.0 * EPS);
            max_rel = max_rel.max(rel_err(grad[i], numeric));
        }
    }
    Ok(max_rel)
}

struct BatchStats {
    ce_sum: f64,
    rl_sum: f64,
    reward_sum: f64,
    sampled: usize,
}

/// Runs the full schedule: cross-entropy pretraining for the first
/// `ce_pretrain()` epochs, the hybrid objective afterwards. Returns the
/// best-validation checkpoint when a validation set is given, otherwise
/// the final parameters.
pub fn train(
    config: &Config,
    vocab: &Vocab,
    train_set: &[Example],
    valid_set: &[Example],
    extractor: &Extractor,
) -> Result<TrainOutcome> {
    run_training(config, vocab, train_set, valid_set, extractor, None)
}

/// `train` with externally prepared initial parameters (e.g. embeddings
/// warm-started from word vectors). The sampling stream is positioned
/// exactly as in `train`, so the two entry points differ only in the
/// starting parameter values.
pub fn train_from(
    config: &Config,
    vocab: &Vocab,
    train_set: &[Example],
    valid_set: &[Example],
    extractor: &Extractor,
    initial: ModelParams,
) -> Result<TrainOutcome> {
    run_training(config, vocab, train_set, valid_set, extractor, Some(initial))
}

fn run_training(
    config: &Config,
    vocab: &Vocab,
    train_set: &[Example],
    valid_set: &[Example],
    extractor: &Extractor,
    initial: Option<ModelParams>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Shape("training set is empty".into()));
    }
    let dims = ModelDims::new(vocab.len(), config.embed_dim, config.hidden, config.gcn_layers)?;
    let mut rng = Pcg32::seed(config.seed);
    let mut params = ModelParams::init(dims, &mut rng);
    if let Some(p) = initial {
        if p.dims != dims {
            return Err(Error::Shape(format!(
                "initial parameters have dims {:?}, configuration implies {:?}",
                p.dims, dims
            )));
        }
        params = p;
    }
    let mut adam = AdamState::new(config.lr);

    let preps: Vec<PreparedExample> = train_set
        .iter()
        .map(|ex| prepare_example(ex, vocab))
        .collect::<Result<_>>()?;

    let ce_epochs = config.ce_pretrain();
    let mut reports = Vec::with_capacity(config.epochs);
    let mut ce_snapshot: Option<ModelParams> = None;
    let mut best: Option<(f64, ModelParams, AdamState)> = None;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let hybrid = epoch > ce_epochs;
        let do_rl = hybrid && config.gamma > 0.0;
        let mut epoch_ce = 0.0;
        let mut epoch_rl = 0.0;
        let mut epoch_reward = 0.0;
        let mut epoch_sampled = 0usize;

        for (batch_idx, batch) in preps.chunks(config.batch_size).enumerate() {
            let offset = batch_idx * config.batch_size;
            let stats = train_batch(
                config,
                &mut params,
                &mut adam,
                vocab,
                extractor,
                train_set,
                batch,
                offset,
                do_rl,
                &mut rng,
            )
            .map_err(|e| {
                Error::Numeric(format!("epoch {epoch}, batch {}: {e}", batch_idx + 1))
            })?;
            epoch_ce += stats.ce_sum;
            epoch_rl += stats.rl_sum;
            epoch_reward += stats.reward_sum;
            epoch_sampled += stats.sampled;
        }

        let n = preps.len() as f64;
        let val_bleu = if valid_set.is_empty() {
            None
        } else {
            Some(greedy_corpus_bleu(&params, valid_set, vocab, config.max_len)?)
        };
        if let Some(v) = val_bleu {
            // Ties keep the latest checkpoint: on a flat validation curve
            // (e.g. BLEU pinned at zero early in training) the most-trained
            // parameters are returned rather than the epoch-1 snapshot.
            let improved = best.as_ref().map_or(true, |(b, _, _)| v >= *b);
            if improved {
                best = Some((v, params.clone(), adam.clone()));
            }
        }
        if epoch == ce_epochs && ce_epochs < config.epochs {
            ce_snapshot = Some(params.clone());
        }
        reports.push(EpochReport {
            epoch,
            phase: if hybrid { "hybrid" } else { "ce" }.to_string(),
            ce_loss: epoch_ce / n,
            rl_loss: do_rl.then(|| epoch_rl / n),
            mean_reward: (epoch_sampled > 0).then(|| epoch_reward / epoch_sampled as f64),
            val_bleu,
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    let best_val_bleu = best.as_ref().map(|(v, _, _)| *v);
    let (params, adam) = match best {
        Some((_, p, a)) => (p, a),
        None => (params, adam),
    };
    Ok(TrainOutcome {
        params,
        adam,
        reports,
        ce_params: ce_snapshot,
        best_val_bleu,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    config: &Config,
    params: &mut ModelParams,
    adam: &mut AdamState,
    vocab: &Vocab,
    extractor: &Extractor,
    train_set: &[Example],
    batch: &[PreparedExample],
    offset: usize,
    do_rl: bool,
    rng: &mut Pcg32,
) -> Result<BatchStats> {
    let dims = params.dims;
    let mut tape = Tape::new();
    let vars = params.stage(&mut tape)?;

    let mut ce_terms = Vec::with_capacity(batch.len());
    let mut sampled_picks: Vec<Vec<Var>> = Vec::new();
    let mut sampled_texts: Vec<Vec<String>> = Vec::new();
    let mut greedy_texts: Vec<Vec<String>> = Vec::new();

    for (i, prep) in batch.iter().enumerate() {
        let enc = encode(&mut tape, &vars, prep, dims)?;
        let dists = teacher_forced_steps(&mut tape, &vars, &enc, &prep.target_ids, dims)?;
        let mask = vec![true; prep.target_ids.len()];
        ce_terms.push(cross_entropy_loss(&mut tape, &dists, &prep.target_ids, &mask)?);

        if do_rl {
            let (decoded, picks) = sample_decode(&mut tape, &vars, &enc, dims, config.max_len, rng)?;
            sampled_texts.push(strip_special(vocab, &decoded.tokens)?);
            sampled_picks.push(picks);
            let baseline = greedy_decode(params, prep, config.max_len)?;
            greedy_texts.push(strip_special(vocab, &baseline.tokens)?);
            // Greedy decoding never touches the sampling stream, so the
            // baseline costs no randomness.
            let _ = i;
        }
    }

    let stacked_ce = tape.concat(&ce_terms, 0)?;
    let batch_ce = tape.mean(stacked_ce)?;

    let mut rl_values_sum = 0.0;
    let mut reward_sum = 0.0;
    let loss = if do_rl {
        let gold: Vec<&[crate::triple::Triple]> = (0..batch.len())
            .map(|i| train_set[offset + i].triples.as_slice())
            .collect();
        let sampled_rewards = extractor.rewards(&sampled_texts, &gold)?;
        let greedy_rewards = extractor.rewards(&greedy_texts, &gold)?;
        let mut rl_terms = Vec::with_capacity(batch.len());
        for (i, picks) in sampled_picks.iter().enumerate() {
            let advantage = sampled_rewards[i] - greedy_rewards[i];
            let term = scst_loss(&mut tape, picks, advantage)?;
            rl_values_sum += tape.values(term)[0];
            rl_terms.push(term);
        }
        reward_sum = sampled_rewards.iter().sum();
        let stacked_rl = tape.concat(&rl_terms, 0)?;
        let batch_rl = tape.mean(stacked_rl)?;
        hybrid_loss(&mut tape, batch_rl, batch_ce, config.gamma)?
    } else {
        batch_ce
    };

    let loss_value = tape.values(loss)[0];
    if !loss_value.is_finite() {
        return Err(Error::Numeric(format!(
            "loss became non-finite ({loss_value}); lower the learning rate"
        )));
    }
    let ce_sum: f64 = ce_terms.iter().map(|v| tape.values(*v)[0]).sum();

    let grads = tape.backward(loss)?;
    let mut named: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (name, var) in &vars {
        if let Some(g) = grads.get(*var) {
            named.insert(name.clone(), g.to_vec());
        }
    }
    clip_global_norm(&mut named, config.clip_norm);
    adam.update(&mut params.tensors, &named)?;
    if params.any_non_finite() {
        return Err(Error::Numeric(
            "parameters became non-finite after the optimizer step; lower the learning rate"
                .into(),
        ));
    }
    Ok(BatchStats {
        ce_sum,
        rl_sum: rl_values_sum,
        reward_sum,
        sampled: sampled_texts.len(),
    })
}
