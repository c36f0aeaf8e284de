//! Corpus evaluation: multi-reference BLEU with n-gram clipping, word-level
//! translation edit rate with greedy block shifts, and the bucketed report
//! that splits scores by triple-set size.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::triple::Example;

/// Corpus BLEU with its components.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuScore {
    pub bleu: f64,
    /// Modified n-gram precisions for n = 1..=4.
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            *counts.entry(&tokens[i..i + n]).or_insert(0) += 1;
        }
    }
    counts
}

/// Reference length closest to the candidate's; ties prefer the shorter.
fn closest_ref_len(cand_len: usize, refs: &[Vec<String>]) -> usize {
    let mut best = refs[0].len();
    for r in &refs[1..] {
        let len = r.len();
        let d_new = len.abs_diff(cand_len);
        let d_old = best.abs_diff(cand_len);
        if d_new < d_old || (d_new == d_old && len < best) {
            best = len;
        }
    }
    best
}

/// Corpus-level BLEU: clipped modified n-gram precision summed over the
/// corpus for n = 1..=4, combined by uniform geometric mean and scaled by
/// the brevity penalty `exp(min(0, 1 − r/c))`. Any zero precision (or a
/// zero-length candidate corpus) zeroes the score.
pub fn corpus_bleu(
    candidates: &[Vec<String>],
    references: &[&[Vec<String>]],
) -> Result<BleuScore> {
    if candidates.is_empty() {
        return Err(Error::Shape("BLEU needs at least one candidate".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Shape(format!(
            "{} candidates but {} reference lists",
            candidates.len(),
            references.len()
        )));
    }
    if references.iter().any(|r| r.is_empty()) {
        return Err(Error::Shape("every candidate needs at least one reference".into()));
    }

    let mut matches = [0usize; 4];
    let mut possible = [0usize; 4];
    let mut cand_total = 0usize;
    let mut ref_total = 0usize;

    for (cand, refs) in candidates.iter().zip(references) {
        cand_total += cand.len();
        ref_total += closest_ref_len(cand.len(), refs);
        for n in 1..=4 {
            let cand_counts = ngram_counts(cand, n);
            if cand_counts.is_empty() {
                continue;
            }
            possible[n - 1] += cand.len() + 1 - n;
            let ref_counts: Vec<HashMap<&[String], usize>> =
                refs.iter().map(|r| ngram_counts(r, n)).collect();
            for (gram, &count) in &cand_counts {
                let best_ref = ref_counts
                    .iter()
                    .map(|rc| rc.get(gram).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                matches[n - 1] += count.min(best_ref);
            }
        }
    }

    let mut precisions = [0.0; 4];
    for n in 0..4 {
        if possible[n] > 0 {
            precisions[n] = matches[n] as f64 / possible[n] as f64;
        }
    }

    if cand_total == 0 {
        return Ok(BleuScore {
            bleu: 0.0,
            precisions,
            brevity_penalty: 0.0,
            candidate_len: 0,
            reference_len: ref_total,
        });
    }

    let brevity_penalty = (1.0 - ref_total as f64 / cand_total as f64).min(0.0).exp();
    let bleu = if precisions.iter().any(|p| *p == 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
        brevity_penalty * log_mean.exp()
    };

    Ok(BleuScore {
        bleu,
        precisions,
        brevity_penalty,
        candidate_len: cand_total,
        reference_len: ref_total,
    })
}

/// Sentence-level BLEU for diagnostics: identical to the corpus formula on
/// one pair, except each precision is smoothed to `(m + ε)/(t + ε)` with
/// ε = 1e-9, so a single missing n-gram order does not zero the score.
pub fn sentence_bleu(candidate: &[String], references: &[Vec<String>]) -> Result<f64> {
    const EPS: f64 = 1e-9;
    if references.is_empty() {
        return Err(Error::Shape("sentence BLEU needs a reference".into()));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand_counts = ngram_counts(candidate, n);
        let total = candidate.len().saturating_sub(n - 1);
        let mut matched = 0usize;
        if !cand_counts.is_empty() {
            let ref_counts: Vec<HashMap<&[String], usize>> =
                references.iter().map(|r| ngram_counts(r, n)).collect();
            for (gram, &count) in &cand_counts {
                let best = ref_counts
                    .iter()
                    .map(|rc| rc.get(gram).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                matched += count.min(best);
            }
        }
        log_sum += ((matched as f64 + EPS) / (total as f64 + EPS)).ln();
    }
    let r = closest_ref_len(candidate.len(), references);
    let bp = (1.0 - r as f64 / candidate.len() as f64).min(0.0).exp();
    Ok(bp * (log_sum / 4.0).exp())
}

/// Longest candidate block the shift search will move.
const MAX_SHIFT_SIZE: usize = 10;
/// Farthest a block may travel.
const MAX_SHIFT_DIST: usize = 50;

/// Word-level Levenshtein distance (insert/delete/substitute, unit costs).
fn edit_distance(a: &[String], b: &[String]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// True when `block` occurs contiguously in `reference`.
fn block_in_reference(block: &[String], reference: &[String]) -> bool {
    if block.len() > reference.len() {
        return false;
    }
    (0..=reference.len() - block.len()).any(|i| reference[i..i + block.len()] == *block)
}

fn apply_shift(tokens: &[String], start: usize, len: usize, dest: usize) -> Vec<String> {
    let mut rest: Vec<String> = Vec::with_capacity(tokens.len());
    rest.extend_from_slice(&tokens[..start]);
    rest.extend_from_slice(&tokens[start + len..]);
    let mut out = Vec::with_capacity(tokens.len());
    out.extend_from_slice(&rest[..dest]);
    out.extend_from_slice(&tokens[start..start + len]);
    out.extend_from_slice(&rest[dest..]);
    out
}

/// Greedy shift search: the best single block move (block must match a
/// contiguous reference span, bounded size and travel) that lowers the edit
/// distance by at least one. Returns the shifted tokens and the new
/// distance.
fn best_shift(tokens: &[String], reference: &[String], base: usize) -> Option<(Vec<String>, usize)> {
    let mut best: Option<(Vec<String>, usize)> = None;
    let n = tokens.len();
    for start in 0..n {
        for len in 1..=MAX_SHIFT_SIZE.min(n - start) {
            let block = &tokens[start..start + len];
            if !block_in_reference(block, reference) {
                continue;
            }
            for dest in 0..=n - len {
                if dest == start {
                    continue;
                }
                if start.abs_diff(dest) > MAX_SHIFT_DIST {
                    continue;
                }
                let shifted = apply_shift(tokens, start, len, dest);
                let dist = edit_distance(&shifted, reference);
                if dist < base && best.as_ref().map_or(true, |(_, d)| dist < *d) {
                    best = Some((shifted, dist));
                }
            }
        }
    }
    best
}

/// Edit count of the translation-edit-rate alignment against one
/// reference: greedy block shifts (cost one each) until no shift lowers the
/// remaining word-level edit distance, plus that distance.
pub fn ter_edits(candidate: &[String], reference: &[String]) -> usize {
    let mut current = candidate.to_vec();
    let mut shifts = 0usize;
    let mut dist = edit_distance(&current, reference);
    while dist > 0 {
        match best_shift(&current, reference, dist) {
            Some((shifted, new_dist)) => {
                current = shifted;
                dist = new_dist;
                shifts += 1;
            }
            None => break,
        }
    }
    shifts + dist
}

/// Translation edit rate of one candidate: the minimum over references of
/// `edits / reference length`.
pub fn ter(candidate: &[String], references: &[Vec<String>]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::Shape("TER needs at least one reference".into()));
    }
    let mut best = f64::INFINITY;
    for r in references {
        if r.is_empty() {
            return Err(Error::Shape("TER against an empty reference".into()));
        }
        let rate = ter_edits(candidate, r) as f64 / r.len() as f64;
        best = best.min(rate);
    }
    Ok(best)
}

/// Mean per-candidate TER over the corpus.
pub fn corpus_ter(candidates: &[Vec<String>], references: &[&[Vec<String>]]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Shape("TER needs at least one candidate".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Shape(format!(
            "{} candidates but {} reference lists",
            candidates.len(),
            references.len()
        )));
    }
    let mut total = 0.0;
    for (c, r) in candidates.iter().zip(references) {
        total += ter(c, r)?;
    }
    Ok(total / candidates.len() as f64)
}

/// Scores for one triple-set-size bucket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketReport {
    pub label: String,
    pub count: usize,
    pub bleu: BleuScore,
    pub ter: f64,
}

/// The full evaluation report: overall scores, per-bucket scores, and notes
/// about anything omitted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
    pub example_count: usize,
    pub bleu: BleuScore,
    pub ter: f64,
    pub buckets: Vec<BucketReport>,
    pub notes: Vec<String>,
}

impl EvalReport {
    /// Renders the human-readable table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>8} {:>8} {:>8}\n",
            "subset", "count", "BLEU", "TER"
        ));
        out.push_str(&format!(
            "{:<16} {:>8} {:>8.4} {:>8.4}\n",
            "all", self.example_count, self.bleu.bleu, self.ter
        ));
        for b in &self.buckets {
            out.push_str(&format!(
                "{:<16} {:>8} {:>8.4} {:>8.4}\n",
                b.label, b.count, b.bleu.bleu, b.ter
            ));
        }
        out.push_str(&format!(
            "BLEU components: P1 {:.4}  P2 {:.4}  P3 {:.4}  P4 {:.4}  BP {:.4}\n",
            self.bleu.precisions[0],
            self.bleu.precisions[1],
            self.bleu.precisions[2],
            self.bleu.precisions[3],
            self.bleu.brevity_penalty
        ));
        for note in &self.notes {
            out.push_str(&format!("note: {note}\n"));
        }
        out
    }
}

/// Default size buckets: small (1–3 triples) and large (4–7 triples).
const BUCKETS: [(&str, usize, usize); 2] = [("1-3 triples", 1, 3), ("4-7 triples", 4, 7)];

/// Scores line-aligned candidates against a dataset, overall and per size
/// bucket. Empty buckets are dropped from the table with a note.
pub fn evaluate_split(examples: &[Example], candidates: &[Vec<String>]) -> Result<EvalReport> {
    if examples.len() != candidates.len() {
        return Err(Error::Shape(format!(
            "{} examples but {} candidate lines",
            examples.len(),
            candidates.len()
        )));
    }
    if examples.is_empty() {
        return Err(Error::Shape("evaluation needs at least one example".into()));
    }
    let refs: Vec<&[Vec<String>]> = examples.iter().map(|e| e.references.as_slice()).collect();
    let bleu = corpus_bleu(candidates, &refs)?;
    let overall_ter = corpus_ter(candidates, &refs)?;

    let mut buckets = Vec::new();
    let mut notes = Vec::new();
    let mut covered = 0usize;
    for (label, lo, hi) in BUCKETS {
        let idx: Vec<usize> = examples
            .iter()
            .enumerate()
            .filter(|(_, e)| (lo..=hi).contains(&e.triples.len()))
            .map(|(i, _)| i)
            .collect();
        covered += idx.len();
        if idx.is_empty() {
            notes.push(format!("bucket {label}: no examples, omitted"));
            continue;
        }
        let sub_c: Vec<Vec<String>> = idx.iter().map(|&i| candidates[i].clone()).collect();
        let sub_r: Vec<&[Vec<String>]> = idx.iter().map(|&i| refs[i]).collect();
        buckets.push(BucketReport {
            label: label.to_string(),
            count: idx.len(),
            bleu: corpus_bleu(&sub_c, &sub_r)?,
            ter: corpus_ter(&sub_c, &sub_r)?,
        });
    }
    if covered < examples.len() {
        notes.push(format!(
            "{} examples fall outside all size buckets",
            examples.len() - covered
        ));
    }

    Ok(EvalReport {
        config: None,
        example_count: examples.len(),
        bleu,
        ter: overall_ter,
        buckets,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triple::tokenize;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn identical_corpus_scores_one() {
        let cands = vec![toks("the cat sat on the mat today")];
        let refs_owned = vec![vec![toks("the cat sat on the mat today")]];
        let refs: Vec<&[Vec<String>]> = refs_owned.iter().map(|r| r.as_slice()).collect();
        let score = corpus_bleu(&cands, &refs).unwrap();
        assert!((score.bleu - 1.0).abs() < 1e-12);
        assert_eq!(score.precisions, [1.0, 1.0, 1.0, 1.0]);
        assert_eq!(score.brevity_penalty, 1.0);
    }

    #[test]
    fn clipping_caps_repeated_unigrams() {
        let cands = vec![toks("the the the the the the the")];
        let refs_owned = vec![vec![toks("the cat is on the mat")]];
        let refs: Vec<&[Vec<String>]> = refs_owned.iter().map(|r| r.as_slice()).collect();
        let score = corpus_bleu(&cands, &refs).unwrap();
        assert!((score.precisions[0] - 2.0 / 7.0).abs() < 1e-12);
        assert_eq!(score.bleu, 0.0, "no higher-order matches");
    }

    #[test]
    fn zero_bigram_overlap_zeroes_bleu() {
        let cands = vec![toks("a c b d e")];
        let refs_owned = vec![vec![toks("a b c d e")]];
        let refs: Vec<&[Vec<String>]> = refs_owned.iter().map(|r| r.as_slice()).collect();
        let score = corpus_bleu(&cands, &refs).unwrap();
        assert!(score.precisions[0] > 0.0);
        assert_eq!(score.precisions[1], 0.25, "only (d,e) survives of four bigrams");
        assert_eq!(score.precisions[2], 0.0);
        assert_eq!(score.bleu, 0.0);
    }

    #[test]
    fn closest_reference_length_prefers_shorter_on_tie() {
        // Candidate length 4 between references of 3 and 5 → r = 3 → no
        // brevity penalty.
        let cands = vec![toks("a b c d")];
        let refs_owned = vec![vec![toks("a b c"), toks("a b c d e")]];
        let refs: Vec<&[Vec<String>]> = refs_owned.iter().map(|r| r.as_slice()).collect();
        let score = corpus_bleu(&cands, &refs).unwrap();
        assert_eq!(score.reference_len, 3);
        assert_eq!(score.brevity_penalty, 1.0);
    }

    #[test]
    fn brevity_penalty_applies_when_short() {
        let cands = vec![toks("a b c d")];
        let refs_owned = vec![vec![toks("a b c d e f g h")]];
        let refs: Vec<&[Vec<String>]> = refs_owned.iter().map(|r| r.as_slice()).collect();
        let score = corpus_bleu(&cands, &refs).unwrap();
        let expected_bp = (1.0f64 - 8.0 / 4.0).exp();
        assert!((score.brevity_penalty - expected_bp).abs() < 1e-12);
        assert!((score.bleu - expected_bp).abs() < 1e-12, "all precisions are 1");
    }

    #[test]
    fn corpus_permutation_leaves_score_unchanged() {
        let cands = vec![toks("a b c d e"), toks("x y z w")];
        let refs_owned = vec![vec![toks("a b c d d")], vec![toks("x y w z")]];
        let refs: Vec<&[Vec<String>]> = refs_owned.iter().map(|r| r.as_slice()).collect();
        let fwd = corpus_bleu(&cands, &refs).unwrap();
        let cands_r: Vec<Vec<String>> = cands.iter().rev().cloned().collect();
        let refs_r: Vec<&[Vec<String>]> = refs.iter().rev().copied().collect();
        let rev = corpus_bleu(&cands_r, &refs_r).unwrap();
        assert!((fwd.bleu - rev.bleu).abs() < 1e-15);
    }

    #[test]
    fn bleu_validates_inputs() {
        let empty_refs: Vec<&[Vec<String>]> = Vec::new();
        assert!(corpus_bleu(&[], &empty_refs).is_err());
        let cands = vec![toks("a")];
        let no_refs_owned: Vec<Vec<Vec<String>>> = vec![vec![]];
        let no_refs: Vec<&[Vec<String>]> = no_refs_owned.iter().map(|r| r.as_slice()).collect();
        assert!(corpus_bleu(&cands, &no_refs).is_err());
    }

    #[test]
    fn empty_candidate_corpus_scores_zero() {
        let cands = vec![Vec::new()];
        let refs_owned = vec![vec![toks("a b")]];
        let refs: Vec<&[Vec<String>]> = refs_owned.iter().map(|r| r.as_slice()).collect();
        let score = corpus_bleu(&cands, &refs).unwrap();
        assert_eq!(score.bleu, 0.0);
        assert_eq!(score.candidate_len, 0);
    }

    #[test]
    fn sentence_bleu_smooths_missing_orders() {
        let cand = toks("a b");
        let refs = vec![toks("a b c d e")];
        let s = sentence_bleu(&cand, &refs).unwrap();
        assert!(s > 0.0, "smoothing keeps short sentences off zero");
        assert!(s < 1.0);
        let exact = sentence_bleu(&toks("a b c d e"), &refs).unwrap();
        assert!((exact - 1.0).abs() < 1e-6);
        assert_eq!(sentence_bleu(&[], &refs).unwrap(), 0.0);
    }

    #[test]
    fn ter_identity_is_zero_and_substitution_counts() {
        let r = vec![toks("a b c d e")];
        assert_eq!(ter(&toks("a b c d e"), &r).unwrap(), 0.0);
        assert!((ter(&toks("a b x d e"), &r).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn empty_candidate_needs_full_insertions() {
        let r = vec![toks("a b c d")];
        assert!((ter(&[], &r).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shifts_are_cheaper_than_their_edits() {
        // Moving one block fixes two word positions for one edit.
        let r = vec![toks("a b c d")];
        assert_eq!(ter_edits(&toks("b a c d"), &r[0]), 1);
        assert!((ter(&toks("b a c d"), &r).unwrap() - 0.25).abs() < 1e-12);
        // A block absent from the reference cannot shift.
        assert_eq!(ter_edits(&toks("x b c d"), &r[0]), 1, "plain substitution");
    }

    #[test]
    fn shifting_a_long_tail_block() {
        let r = vec![toks("e f g a b c d")];
        // The three-token block "e f g" must travel from the back to the
        // front: one shift, no residual edits.
        assert_eq!(ter_edits(&toks("a b c d e f g"), &r[0]), 1);
    }

    #[test]
    fn ter_takes_best_reference_and_validates() {
        let refs = vec![toks("a b c d"), toks("a x c d")];
        assert_eq!(ter(&toks("a x c d"), &refs).unwrap(), 0.0);
        assert!(ter(&toks("a"), &[]).is_err());
        assert!(ter(&toks("a"), &[Vec::new()]).is_err());
    }

    #[test]
    fn corpus_ter_is_the_mean() {
        let cands = vec![toks("a b c d"), toks("a b x d")];
        let refs_owned = vec![vec![toks("a b c d")], vec![toks("a b c d")]];
        let refs: Vec<&[Vec<String>]> = refs_owned.iter().map(|r| r.as_slice()).collect();
        let t = corpus_ter(&cands, &refs).unwrap();
        assert!((t - 0.125).abs() < 1e-12);
    }

    #[test]
    fn evaluate_split_buckets_and_notes() {
        let small = Example::from_raw(&[("a", "r", "b")], &["a r b ."]).unwrap();
        let large = Example::from_raw(
            &[
                ("a", "r", "b"),
                ("a", "s", "c"),
                ("a", "t", "d"),
                ("a", "u", "e"),
            ],
            &["a has many links ."],
        )
        .unwrap();
        let examples = vec![small.clone(), large.clone()];
        let candidates = vec![
            small.references[0].clone(),
            large.references[0].clone(),
        ];
        let report = evaluate_split(&examples, &candidates).unwrap();
        assert!((report.bleu.bleu - 1.0).abs() < 1e-12);
        assert_eq!(report.ter, 0.0);
        assert_eq!(report.buckets.len(), 2);
        assert!(report.notes.is_empty());
        assert!((report.buckets[0].bleu.bleu - 1.0).abs() < 1e-12);

        // Only the small bucket present → the other is noted as omitted.
        let report = evaluate_split(
            std::slice::from_ref(&small),
            std::slice::from_ref(&candidates[0]),
        )
        .unwrap();
        assert_eq!(report.buckets.len(), 1);
        assert_eq!(report.notes.len(), 1);
        assert!(report.notes[0].contains("4-7"));

        let table = report.render_table();
        assert!(table.contains("1-3 triples"));
        assert!(table.contains("note:"));
    }

    #[test]
    fn evaluate_split_checks_alignment() {
        let ex = Example::from_raw(&[("a", "r", "b")], &["a r b ."]).unwrap();
        assert!(evaluate_split(&[ex], &[]).is_err());
        assert!(evaluate_split(&[], &[]).is_err());
    }

    #[test]
    fn oversized_examples_are_noted() {
        let refs = ["big ."];
        let triples: Vec<(&str, &str, &str)> = (0..9)
            .map(|i| {
                let s: &'static str = Box::leak(format!("e{i}").into_boxed_str());
                (s, "r", "hub")
            })
            .collect();
        let ex = Example::from_raw(&triples, &refs).unwrap();
        let report = evaluate_split(std::slice::from_ref(&ex), &[toks("big .")]).unwrap();
        assert!(report.buckets.is_empty());
        assert_eq!(report.notes.len(), 3, "two empty buckets plus the overflow note");
    }
}
