//! Information-extraction reward.
//!
//! The reward for a generated text is the number of input triples an
//! extractor can recover from it. The builtin extractor matches entity
//! spans and relation trigger phrases inside single sentences; an external
//! extractor can be plugged in as a line-oriented subprocess. A trigger
//! lexicon can be bootstrapped from the training references themselves.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};

use crate::error::{Error, Result};
use crate::triple::Triple;

/// A relation trigger: the token sequence that signals the relation, and
/// the argument order it implies (`subject_first` — the subject mention
/// precedes the object mention).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Trigger {
    pub tokens: Vec<String>,
    pub subject_first: bool,
}

/// Trigger lexicon keyed by the relation's token sequence (joined with
/// single spaces, lowercase).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    map: BTreeMap<String, Vec<Trigger>>,
}

/// Canonical lookup key for a relation's tokens.
pub fn relation_key(tokens: &[String]) -> String {
    tokens.join(" ")
}

impl Lexicon {
    pub fn new() -> Lexicon {
        Lexicon::default()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    /// Adds a trigger unless the relation already has an identical one.
    pub fn insert(&mut self, relation: &str, trigger: Trigger) {
        let key = relation.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let entry = self.map.entry(key).or_default();
        if !entry.contains(&trigger) {
            entry.push(trigger);
        }
    }

    pub fn triggers(&self, relation_tokens: &[String]) -> &[Trigger] {
        self.map
            .get(&relation_key(relation_tokens))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Parses the tab-separated format: `relation<TAB>so|os<TAB>trigger`,
    /// with `#` comment lines and blank lines ignored.
    pub fn parse<R: BufRead>(reader: R) -> Result<Lexicon> {
        let mut lex = Lexicon::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(
                    idx + 1,
                    format!("expected 3 tab-separated fields, got {}", fields.len()),
                ));
            }
            let subject_first = match fields[1].trim() {
                "so" => true,
                "os" => false,
                other => {
                    return Err(Error::parse(
                        idx + 1,
                        format!("order flag must be `so` or `os`, got `{other}`"),
                    ));
                }
            };
            let tokens: Vec<String> = fields[2]
                .split_whitespace()
                .map(str::to_lowercase)
                .collect();
            if tokens.is_empty() {
                return Err(Error::parse(idx + 1, "empty trigger phrase".to_string()));
            }
            lex.insert(fields[0], Trigger {
                tokens,
                subject_first,
            });
        }
        Ok(lex)
    }

    /// Writes the tab-separated format, relations sorted, triggers in
    /// insertion order.
    pub fn save<W: Write>(&self, mut writer: W) -> Result<()> {
        for (rel, triggers) in &self.map {
            for t in triggers {
                let flag = if t.subject_first { "so" } else { "os" };
                writeln!(writer, "{rel}\t{flag}\t{}", t.tokens.join(" "))?;
            }
        }
        Ok(())
    }
}

/// Splits a token stream into sentences at `.`, `!`, and `?` tokens. The
/// terminators are dropped; a trailing unterminated segment still counts.
pub fn split_sentences(tokens: &[String]) -> Vec<&[String]> {
    let mut sentences = Vec::new();
    let mut start = 0;
    for (i, tok) in tokens.iter().enumerate() {
        if tok == "." || tok == "!" || tok == "?" {
            if i > start {
                sentences.push(&tokens[start..i]);
            }
            start = i + 1;
        }
    }
    if start < tokens.len() {
        sentences.push(&tokens[start..]);
    }
    sentences
}

/// Start indices of every contiguous occurrence of `needle` in `haystack`.
fn occurrences(haystack: &[String], needle: &[String]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return Vec::new();
    }
    (0..=haystack.len() - needle.len())
        .filter(|&i| haystack[i..i + needle.len()] == *needle)
        .collect()
}

fn triple_in_sentence(sentence: &[String], triple: &Triple, lexicon: &Lexicon) -> bool {
    let s_occ = occurrences(sentence, &triple.subject);
    if s_occ.is_empty() {
        return false;
    }
    let o_occ = occurrences(sentence, &triple.object);
    if o_occ.is_empty() {
        return false;
    }
    for trigger in lexicon.triggers(&triple.relation) {
        if occurrences(sentence, &trigger.tokens).is_empty() {
            continue;
        }
        let ordered = if trigger.subject_first {
            s_occ.iter().any(|s| o_occ.iter().any(|o| s < o))
        } else {
            o_occ.iter().any(|o| s_occ.iter().any(|s| o < s))
        };
        if ordered {
            return true;
        }
    }
    false
}

/// Extracts the candidate triples that are expressed by `tokens`: a
/// candidate counts as expressed when one sentence contains its subject
/// span, its object span, and a trigger for its relation in the trigger's
/// argument order.
pub fn extract(tokens: &[String], candidates: &[Triple], lexicon: &Lexicon) -> Vec<Triple> {
    let sentences = split_sentences(tokens);
    candidates
        .iter()
        .filter(|t| sentences.iter().any(|s| triple_in_sentence(s, t, lexicon)))
        .cloned()
        .collect()
}

/// Number of gold triples present in the extracted set (each gold triple
/// counted at most once).
pub fn match_count(extracted: &[Triple], gold: &[Triple]) -> usize {
    gold.iter().filter(|g| extracted.contains(g)).count()
}

/// The reward of a text against its gold triples under the builtin
/// extractor.
pub fn builtin_reward(tokens: &[String], gold: &[Triple], lexicon: &Lexicon) -> f64 {
    extract(tokens, gold, lexicon).len() as f64
}

/// A line-oriented extraction subprocess: it receives one space-joined
/// text per stdin line and must answer with one JSON line per input, each
/// an array of `[subject, relation, object]` string triples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalExtractor {
    /// Program and arguments.
    pub argv: Vec<String>,
}

impl ExternalExtractor {
    pub fn new(argv: Vec<String>) -> Result<ExternalExtractor> {
        if argv.is_empty() {
            return Err(Error::Extractor("external extractor needs a command".into()));
        }
        Ok(ExternalExtractor { argv })
    }

    /// Runs the subprocess once over a batch of texts.
    pub fn extract_batch(&self, texts: &[Vec<String>]) -> Result<Vec<Vec<Triple>>> {
        let mut child = Command::new(&self.argv[0])
            .args(&self.argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Extractor(format!("failed to spawn `{}`: {e}", self.argv[0])))?;
        {
            let stdin = child
                .stdin
                .take()
                .ok_or_else(|| Error::Extractor("no stdin pipe".into()))?;
            let mut stdin = std::io::BufWriter::new(stdin);
            for text in texts {
                writeln!(stdin, "{}", text.join(" "))
                    .map_err(|e| Error::Extractor(format!("writing to extractor: {e}")))?;
            }
        }
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| Error::Extractor("no stdout pipe".into()))?;
        let mut results = Vec::with_capacity(texts.len());
        for (i, line) in BufReader::new(stdout).lines().enumerate() {
            let line = line.map_err(|e| Error::Extractor(format!("reading extractor: {e}")))?;
            let raw: Vec<[String; 3]> = serde_json::from_str(&line).map_err(|e| {
                Error::Extractor(format!("extractor output line {} is not valid: {e}", i + 1))
            })?;
            let mut triples = Vec::with_capacity(raw.len());
            for [s, r, o] in &raw {
                triples.push(Triple::from_raw(s, r, o)?);
            }
            results.push(triples);
        }
        let status = child
            .wait()
            .map_err(|e| Error::Extractor(format!("waiting for extractor: {e}")))?;
        if !status.success() {
            return Err(Error::Extractor(format!(
                "extractor exited with {status}"
            )));
        }
        if results.len() != texts.len() {
            return Err(Error::Extractor(format!(
                "extractor answered {} of {} lines",
                results.len(),
                texts.len()
            )));
        }
        Ok(results)
    }
}

/// The reward backend: the builtin lexicon matcher or an external process.
#[derive(Debug, Clone, PartialEq)]
pub enum Extractor {
    Builtin(Lexicon),
    External(ExternalExtractor),
}

impl Extractor {
    /// Rewards a batch of texts against per-text gold triples.
    pub fn rewards(&self, texts: &[Vec<String>], gold: &[&[Triple]]) -> Result<Vec<f64>> {
        if texts.len() != gold.len() {
            return Err(Error::Extractor(format!(
                "{} texts but {} gold triple sets",
                texts.len(),
                gold.len()
            )));
        }
        match self {
            Extractor::Builtin(lexicon) => Ok(texts
                .iter()
                .zip(gold)
                .map(|(t, g)| builtin_reward(t, g, lexicon))
                .collect()),
            Extractor::External(ext) => {
                let extracted = ext.extract_batch(texts)?;
                Ok(extracted
                    .iter()
                    .zip(gold)
                    .map(|(e, g)| match_count(e, g) as f64)
                    .collect())
            }
        }
    }

    /// The triples each text yields, for reporting alongside the reward.
    /// The builtin matcher tests each text's own gold triples as
    /// candidates; the external process decides for itself.
    pub fn extractions(
        &self,
        texts: &[Vec<String>],
        candidates: &[&[Triple]],
    ) -> Result<Vec<Vec<Triple>>> {
        if texts.len() != candidates.len() {
            return Err(Error::Extractor(format!(
                "{} texts but {} candidate triple sets",
                texts.len(),
                candidates.len()
            )));
        }
        match self {
            Extractor::Builtin(lexicon) => Ok(texts
                .iter()
                .zip(candidates)
                .map(|(t, c)| extract(t, c, lexicon))
                .collect()),
            Extractor::External(ext) => ext.extract_batch(texts),
        }
    }
}

/// Learns a trigger lexicon from references: for every triple and
/// reference, the tokens strictly between a subject mention and an object
/// mention become a trigger candidate (subject-first or object-first by
/// their order); empty and overlapping spans are skipped. Each relation
/// keeps its `k` most frequent candidates, ties broken by token sequence
/// then order flag.
pub fn bootstrap_lexicon(examples: &[crate::triple::Example], k: usize) -> Lexicon {
    let mut counts: BTreeMap<String, BTreeMap<(Vec<String>, bool), usize>> = BTreeMap::new();
    for example in examples {
        for triple in &example.triples {
            let key = relation_key(&triple.relation);
            for reference in &example.references {
                let s_occ = occurrences(reference, &triple.subject);
                let o_occ = occurrences(reference, &triple.object);
                for &s in &s_occ {
                    let s_end = s + triple.subject.len();
                    for &o in &o_occ {
                        let o_end = o + triple.object.len();
                        let (span, subject_first) = if s_end <= o {
                            (&reference[s_end..o], true)
                        } else if o_end <= s {
                            (&reference[o_end..s], false)
                        } else {
                            continue; // overlapping mentions
                        };
                        if span.is_empty() {
                            continue;
                        }
                        *counts
                            .entry(key.clone())
                            .or_default()
                            .entry((span.to_vec(), subject_first))
                            .or_insert(0) += 1;
                    }
                }
            }
        }
    }
    let mut lex = Lexicon::new();
    for (rel, by_trigger) in counts {
        let mut ranked: Vec<(&(Vec<String>, bool), &usize)> = by_trigger.iter().collect();
        ranked.sort_by(|a, b| {
            b.1.cmp(a.1)
                .then_with(|| a.0 .0.cmp(&b.0 .0))
                .then_with(|| b.0 .1.cmp(&a.0 .1))
        });
        for ((tokens, subject_first), _) in ranked.into_iter().take(k) {
            lex.insert(&rel, Trigger {
                tokens: tokens.clone(),
                subject_first: *subject_first,
            });
        }
    }
    lex
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triple::{tokenize, Example};

    fn lex(lines: &str) -> Lexicon {
        Lexicon::parse(lines.as_bytes()).unwrap()
    }

    #[test]
    fn lexicon_parses_and_round_trips() {
        let input = "# triggers\nbirth place\tso\tborn\nbird\tso\tbird\n\ntime in space\tso\tminutes in space\n";
        let lexicon = lex(input);
        assert_eq!(lexicon.len(), 3);
        let rel: Vec<String> = vec!["birth".into(), "place".into()];
        assert_eq!(
            lexicon.triggers(&rel),
            &[Trigger {
                tokens: vec!["born".into()],
                subject_first: true
            }]
        );
        let mut out = Vec::new();
        lexicon.save(&mut out).unwrap();
        let reparsed = Lexicon::parse(&out[..]).unwrap();
        assert_eq!(lexicon, reparsed);
    }

    #[test]
    fn lexicon_rejects_malformed_lines() {
        assert!(Lexicon::parse("only two\tfields".as_bytes()).is_err());
        assert!(Lexicon::parse("rel\tbad\ttrigger".as_bytes()).is_err());
        assert!(Lexicon::parse("rel\tso\t  ".as_bytes()).is_err());
        let err = Lexicon::parse("ok\tso\tx\nbroken line".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn sentences_split_on_terminators() {
        let toks = tokenize("a b . c d ! e ? f");
        let sents = split_sentences(&toks);
        assert_eq!(sents.len(), 4);
        assert_eq!(sents[0], &toks[0..2]);
        assert_eq!(sents[1], &toks[3..5]);
        assert_eq!(sents[2], &toks[6..7]);
        assert_eq!(sents[3], &toks[8..9]);
        // Terminator-only input yields no sentences.
        assert!(split_sentences(&tokenize(". . .")).is_empty());
    }

    #[test]
    fn astronaut_text_rewards_two_of_three_triples() {
        let text = tokenize(
            "alan shepard was born in new hampshire , where the purple finch is the bird .",
        );
        let gold = vec![
            Triple::from_raw("alan shepard", "timeInSpace", "130170 minutes").unwrap(),
            Triple::from_raw("alan shepard", "birthPlace", "new hampshire").unwrap(),
            Triple::from_raw("new hampshire", "bird", "purple finch").unwrap(),
        ];
        let lexicon = lex(
            "birth place\tso\tborn\nbird\tso\tbird\ntime in space\tso\tminutes in space\n",
        );
        let extracted = extract(&text, &gold, &lexicon);
        assert_eq!(extracted.len(), 2);
        assert!(extracted.contains(&gold[1]));
        assert!(extracted.contains(&gold[2]));
        assert_eq!(builtin_reward(&text, &gold, &lexicon), 2.0);
    }

    #[test]
    fn extraction_requires_same_sentence() {
        let lexicon = lex("likes\tso\tlikes\n");
        let gold = vec![Triple::from_raw("a", "likes", "b").unwrap()];
        let same = tokenize("a likes b .");
        assert_eq!(builtin_reward(&same, &gold, &lexicon), 1.0);
        let split = tokenize("a likes . b .");
        assert_eq!(builtin_reward(&split, &gold, &lexicon), 0.0);
    }

    #[test]
    fn order_flag_is_enforced() {
        let so = lex("made by\tso\tmade by\n");
        let os = lex("made by\tos\tmade by\n");
        let gold = vec![Triple::from_raw("cake", "madeBy", "anna").unwrap()];
        let subject_first = tokenize("cake is made by anna .");
        let object_first = tokenize("anna , who made by cake .");
        assert_eq!(builtin_reward(&subject_first, &gold, &so), 1.0);
        assert_eq!(builtin_reward(&subject_first, &gold, &os), 0.0);
        assert_eq!(builtin_reward(&object_first, &gold, &os), 1.0);
        assert_eq!(builtin_reward(&object_first, &gold, &so), 0.0);
    }

    #[test]
    fn entity_spans_must_be_contiguous() {
        let lexicon = lex("likes\tso\tlikes\n");
        let gold = vec![Triple::from_raw("alan shepard", "likes", "cake").unwrap()];
        let broken = tokenize("alan b. shepard likes cake .");
        assert_eq!(builtin_reward(&broken, &gold, &lexicon), 0.0);
        let fine = tokenize("alan shepard likes cake .");
        assert_eq!(builtin_reward(&fine, &gold, &lexicon), 1.0);
    }

    #[test]
    fn missing_trigger_blocks_extraction() {
        let lexicon = lex("likes\tso\tadores\n");
        let gold = vec![Triple::from_raw("a", "likes", "b").unwrap()];
        let text = tokenize("a likes b .");
        assert_eq!(builtin_reward(&text, &gold, &lexicon), 0.0);
    }

    #[test]
    fn match_count_ignores_duplicates_and_extras() {
        let gold = vec![
            Triple::from_raw("a", "r", "b").unwrap(),
            Triple::from_raw("c", "s", "d").unwrap(),
        ];
        let extracted = vec![
            Triple::from_raw("a", "r", "b").unwrap(),
            Triple::from_raw("a", "r", "b").unwrap(),
            Triple::from_raw("x", "y", "z").unwrap(),
        ];
        assert_eq!(match_count(&extracted, &gold), 1);
    }

    #[test]
    fn bootstrap_counts_and_ranks_triggers() {
        let examples = vec![
            Example::from_raw(&[("a", "rel", "b")], &["a loves b .", "a loves b ."]).unwrap(),
            Example::from_raw(&[("a", "rel", "b")], &["a adores b ."]).unwrap(),
            Example::from_raw(&[("c", "rel", "d")], &["d is loved by c ."]).unwrap(),
        ];
        let lexicon = bootstrap_lexicon(&examples, 2);
        let rel: Vec<String> = vec!["rel".into()];
        let triggers = lexicon.triggers(&rel);
        assert_eq!(triggers.len(), 2);
        // "loves" appears twice, so it outranks the singletons; the tie
        // between "adores" (so) and "is loved by" (os) is broken by token
        // order — "adores" sorts first.
        assert_eq!(triggers[0].tokens, vec!["loves".to_string()]);
        assert!(triggers[0].subject_first);
        assert_eq!(triggers[1].tokens, vec!["adores".to_string()]);
    }

    #[test]
    fn bootstrap_skips_empty_and_overlapping_spans() {
        let examples = vec![
            // Adjacent mentions → empty span.
            Example::from_raw(&[("a", "rel", "b")], &["a b ."]).unwrap(),
            // Overlapping mentions → skipped.
            Example::from_raw(&[("x y", "rel", "y z")], &["x y z ."]).unwrap(),
        ];
        let lexicon = bootstrap_lexicon(&examples, 5);
        assert!(lexicon.is_empty());
    }

    #[test]
    fn bootstrap_respects_k() {
        let examples = vec![Example::from_raw(
            &[("a", "rel", "b")],
            &["a p b .", "a q b .", "a r b .", "a s b ."],
        )
        .unwrap()];
        let lexicon = bootstrap_lexicon(&examples, 2);
        assert_eq!(lexicon.triggers(&["rel".to_string()]).len(), 2);
    }

    #[test]
    fn external_extractor_round_trip() {
        // A tiny shell program that answers every line with one fixed triple.
        let ext = ExternalExtractor::new(vec![
            "sh".into(),
            "-c".into(),
            r#"while read -r line; do echo '[["a","r","b"]]'; done"#.into(),
        ])
        .unwrap();
        let texts = vec![tokenize("first text"), tokenize("second text")];
        let out = ext.extract_batch(&texts).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], vec![Triple::from_raw("a", "r", "b").unwrap()]);

        let gold_owned = vec![Triple::from_raw("a", "r", "b").unwrap()];
        let gold: Vec<&[Triple]> = vec![&gold_owned, &gold_owned];
        let extractor = Extractor::External(ext);
        let rewards = extractor.rewards(&texts, &gold).unwrap();
        assert_eq!(rewards, vec![1.0, 1.0]);
    }

    #[test]
    fn external_extractor_flags_bad_output_and_short_answers() {
        let echo = ExternalExtractor::new(vec![
            "sh".into(),
            "-c".into(),
            "cat".into(),
        ])
        .unwrap();
        assert!(echo.extract_batch(&[tokenize("not json")]).is_err());

        let silent = ExternalExtractor::new(vec![
            "sh".into(),
            "-c".into(),
            "cat > /dev/null".into(),
        ])
        .unwrap();
        assert!(silent.extract_batch(&[tokenize("hello")]).is_err());

        assert!(ExternalExtractor::new(vec![]).is_err());
    }

    #[test]
    fn builtin_rewards_batch() {
        let lexicon = lex("likes\tso\tlikes\n");
        let gold_a = vec![Triple::from_raw("a", "likes", "b").unwrap()];
        let gold_b = vec![Triple::from_raw("c", "likes", "d").unwrap()];
        let texts = vec![tokenize("a likes b ."), tokenize("nothing here .")];
        let gold: Vec<&[Triple]> = vec![&gold_a, &gold_b];
        let extractor = Extractor::Builtin(lexicon);
        assert_eq!(extractor.rewards(&texts, &gold).unwrap(), vec![1.0, 0.0]);
        assert!(extractor.rewards(&texts, &gold[..1]).is_err());
    }
}
