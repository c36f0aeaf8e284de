//! Dataset records, tokenization, entity masking, and the vocabulary.
//!
//! A dataset is a UTF-8 text file with one JSON object per line:
//!
//! ```text
//! {"triples": [["Bakewell pudding", "region", "Derbyshire Dales"]],
//!  "references": ["bakewell pudding comes from the derbyshire dales ."]}
//! ```
//!
//! Subject/object fields and references are lower-cased and split on
//! whitespace; relation labels are additionally split on camelCase and
//! underscore boundaries (`dishVariation` → `dish variation`). Masked
//! datasets carry an extra `entity_map` field per record so generated text
//! can be un-masked later.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved vocabulary index for padding.
pub const PAD: u32 = 0;
/// Reserved vocabulary index for out-of-vocabulary tokens.
pub const UNK: u32 = 1;
/// Reserved vocabulary index for the beginning-of-sequence marker.
pub const BOS: u32 = 2;
/// Reserved vocabulary index for the end-of-sequence marker.
pub const EOS: u32 = 3;

/// Reserved token strings, in index order.
pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Fallback type label for entities missing from the type dictionary.
pub const FALLBACK_TYPE: &str = "THING";

/// One subject/relation/object triple, stored as token sequences.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Triple {
    pub subject: Vec<String>,
    pub relation: Vec<String>,
    pub object: Vec<String>,
}

impl Triple {
    /// Builds a triple from raw strings, applying the tokenization rules.
    /// Fails if any field tokenizes to nothing.
    pub fn from_raw(subject: &str, relation: &str, object: &str) -> Result<Triple> {
        let triple = Triple {
            subject: tokenize(subject),
            relation: split_relation_label(relation),
            object: tokenize(object),
        };
        if triple.subject.is_empty() || triple.relation.is_empty() || triple.object.is_empty() {
            return Err(Error::Parse {
                line: 0,
                message: format!(
                    "triple has an empty field: ({subject:?}, {relation:?}, {object:?})"
                ),
            });
        }
        Ok(triple)
    }

    /// Builds a triple from already-tokenized fields, taken verbatim (no
    /// case folding, no label splitting). Fails if any field is empty.
    pub fn from_tokens(
        subject: Vec<String>,
        relation: Vec<String>,
        object: Vec<String>,
    ) -> Result<Triple> {
        if subject.is_empty() || relation.is_empty() || object.is_empty() {
            return Err(Error::Parse {
                line: 0,
                message: format!(
                    "triple has an empty field: ({subject:?}, {relation:?}, {object:?})"
                ),
            });
        }
        Ok(Triple {
            subject,
            relation,
            object,
        })
    }
}

/// One dataset record: a non-empty triple set with at least one reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub triples: Vec<Triple>,
    pub references: Vec<Vec<String>>,
}

impl Example {
    /// Validates the record invariants: at least one triple, at least one
    /// reference, and no duplicate triples.
    pub fn new(triples: Vec<Triple>, references: Vec<Vec<String>>) -> Result<Example> {
        if triples.is_empty() {
            return Err(Error::Parse {
                line: 0,
                message: "example has no triples".into(),
            });
        }
        if references.is_empty() || references.iter().any(|r| r.is_empty()) {
            return Err(Error::Parse {
                line: 0,
                message: "example needs at least one non-empty reference".into(),
            });
        }
        for (i, a) in triples.iter().enumerate() {
            for b in &triples[..i] {
                if a == b {
                    return Err(Error::Parse {
                        line: 0,
                        message: format!("duplicate triple {:?}", a),
                    });
                }
            }
        }
        Ok(Example {
            triples,
            references,
        })
    }

    /// Convenience constructor from raw strings (used heavily in tests and
    /// synthetic corpora).
    pub fn from_raw(triples: &[(&str, &str, &str)], references: &[&str]) -> Result<Example> {
        let triples = triples
            .iter()
            .map(|(s, r, o)| Triple::from_raw(s, r, o))
            .collect::<Result<Vec<_>>>()?;
        let references = references.iter().map(|r| tokenize(r)).collect();
        Example::new(triples, references)
    }
}

/// Surface form and type label behind one masked entity id.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedEntity {
    pub surface: Vec<String>,
    pub type_token: String,
}

/// An example whose entity surfaces have been replaced by
/// `ENTITY_<eid> <TYPE>` token pairs, plus the map to undo it.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedExample {
    pub example: Example,
    pub entity_map: BTreeMap<u32, MaskedEntity>,
}

/// Lower-cases and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.to_lowercase())
        .collect()
}

/// Splits a relation label on whitespace, underscores, and camelCase
/// boundaries, then lower-cases: `dishVariation` → `["dish", "variation"]`,
/// `time_in_space` → `["time", "in", "space"]`.
pub fn split_relation_label(label: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in label.split(|c: char| c.is_whitespace() || c == '_') {
        if word.is_empty() {
            continue;
        }
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        for i in 1..chars.len() {
            let prev = chars[i - 1];
            let cur = chars[i];
            // Boundary at aB, 9B, and before the final capital of a capital
            // run followed by lowercase (ABCd → ABC|d handled as AB|Cd).
            let lower_to_upper = (prev.is_lowercase() || prev.is_ascii_digit()) && cur.is_uppercase();
            let run_to_lower = prev.is_uppercase()
                && cur.is_uppercase()
                && chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if lower_to_upper || run_to_lower {
                tokens.push(chars[start..i].iter().collect::<String>().to_lowercase());
                start = i;
            }
        }
        tokens.push(chars[start..].iter().collect::<String>().to_lowercase());
    }
    tokens
}

/// If the token is an entity mask (`ENTITY_<eid>`, case-insensitive),
/// returns the entity id.
pub fn entity_token_id(token: &str) -> Option<u32> {
    let rest = token
        .strip_prefix("ENTITY_")
        .or_else(|| token.strip_prefix("entity_"))?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}

// ── Dataset parsing ────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct RawRecord {
    triples: Vec<[String; 3]>,
    references: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    entity_map: BTreeMap<String, RawEntity>,
}

#[derive(Serialize, Deserialize)]
struct RawEntity {
    surface: String,
    #[serde(rename = "type")]
    type_token: String,
}

fn parse_record(line_no: usize, line: &str) -> Result<MaskedExample> {
    let raw: RawRecord = serde_json::from_str(line)
        .map_err(|e| Error::parse(line_no, format!("bad record: {e}")))?;
    // A record carrying an entity map was produced by the masking pass and
    // is already in token form; normalizing again would fold the uppercase
    // `ENTITY_<eid> <TYPE>` markers into unknown lowercase tokens. Masked
    // records are split on whitespace verbatim; raw records get the full
    // normalization (case folding, relation-label splitting).
    let masked = !raw.entity_map.is_empty();
    let verbatim = |text: &str| -> Vec<String> {
        text.split_whitespace().map(str::to_string).collect()
    };
    let mut triples = Vec::with_capacity(raw.triples.len());
    for [s, r, o] in &raw.triples {
        let t = if masked {
            Triple::from_tokens(verbatim(s), verbatim(r), verbatim(o))
        } else {
            Triple::from_raw(s, r, o)
        }
        .map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(line_no, message),
            other => other,
        })?;
        triples.push(t);
    }
    let references = raw
        .references
        .iter()
        .map(|r| if masked { verbatim(r) } else { tokenize(r) })
        .collect();
    let example = Example::new(triples, references).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(line_no, message),
        other => other,
    })?;
    let mut entity_map = BTreeMap::new();
    for (key, ent) in raw.entity_map {
        let eid: u32 = key
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad entity id {key:?}")))?;
        entity_map.insert(
            eid,
            MaskedEntity {
                surface: tokenize(&ent.surface),
                type_token: ent.type_token,
            },
        );
    }
    Ok(MaskedExample {
        example,
        entity_map,
    })
}

/// Parses a line-delimited dataset. Blank lines are skipped; any malformed
/// record fails with its line number. Records with an entity map are read
/// verbatim (already tokenized by the masking pass); records without one
/// are normalized.
pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Vec<Example>> {
    Ok(parse_masked_dataset(reader)?
        .into_iter()
        .map(|m| m.example)
        .collect())
}

/// Parses a dataset keeping per-record entity maps (empty when the record
/// has none, i.e. for unmasked data).
pub fn parse_masked_dataset<R: BufRead>(reader: R) -> Result<Vec<MaskedExample>> {
    let mut examples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        examples.push(parse_record(idx + 1, &line)?);
    }
    Ok(examples)
}

/// Writes examples in the line-delimited dataset format, including entity
/// maps when present.
pub fn write_masked_dataset<W: Write>(mut writer: W, examples: &[MaskedExample]) -> Result<()> {
    for ex in examples {
        let raw = RawRecord {
            triples: ex
                .example
                .triples
                .iter()
                .map(|t| {
                    [
                        t.subject.join(" "),
                        t.relation.join(" "),
                        t.object.join(" "),
                    ]
                })
                .collect(),
            references: ex.example.references.iter().map(|r| r.join(" ")).collect(),
            entity_map: ex
                .entity_map
                .iter()
                .map(|(eid, ent)| {
                    (
                        eid.to_string(),
                        RawEntity {
                            surface: ent.surface.join(" "),
                            type_token: ent.type_token.clone(),
                        },
                    )
                })
                .collect(),
        };
        let line = serde_json::to_string(&raw)
            .map_err(|e| Error::parse(0, format!("serialize record: {e}")))?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

// ── Type dictionary ────────────────────────────────────────────────────────

/// Maps entity surface forms to type labels (`Bakewell pudding` → `FOOD`).
/// Keys are normalized to lower-cased, whitespace-collapsed strings.
#[derive(Debug, Clone, Default)]
pub struct TypeDict {
    by_surface: BTreeMap<String, String>,
}

impl TypeDict {
    /// Parses tab-separated `surface<TAB>type` lines.
    pub fn parse<R: BufRead>(reader: R) -> Result<TypeDict> {
        let mut dict = TypeDict::default();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, '\t');
            let surface = parts.next().unwrap_or("").trim();
            let type_label = parts.next().map(str::trim).unwrap_or("");
            if surface.is_empty() || type_label.is_empty() {
                return Err(Error::parse(
                    idx + 1,
                    format!("type dictionary line needs 'surface<TAB>type', got {line:?}"),
                ));
            }
            dict.insert(surface, type_label);
        }
        Ok(dict)
    }

    /// Builds a dictionary from `(surface, type)` pairs.
    pub fn from_pairs(pairs: &[(&str, &str)]) -> TypeDict {
        let mut dict = TypeDict::default();
        for (surface, ty) in pairs {
            dict.insert(surface, ty);
        }
        dict
    }

    fn insert(&mut self, surface: &str, type_label: &str) {
        let key = tokenize(surface).join(" ");
        // Type labels are single tokens in the masked text; collapse any
        // internal whitespace so the invariant holds for sloppy dictionaries.
        let value = type_label.split_whitespace().collect::<Vec<_>>().join("_");
        self.by_surface.insert(key, value);
    }

    /// Looks up the type for a tokenized surface form.
    pub fn lookup(&self, surface: &[String]) -> Option<&str> {
        self.by_surface.get(&surface.join(" ")).map(String::as_str)
    }

    /// Number of entries.
    pub fn len(&self) -> usize {
        self.by_surface.len()
    }

    /// True when the dictionary has no entries.
    pub fn is_empty(&self) -> bool {
        self.by_surface.is_empty()
    }
}

// ── Entity masking ─────────────────────────────────────────────────────────

/// Replaces every entity surface form in triples and references with
/// `ENTITY_<eid> <TYPE>`.
///
/// Entity ids are assigned in first-occurrence order over the triple list
/// (subject before object), starting at 1. Reference replacement uses exact
/// longest-match over token subsequences, so `new york city` wins over
/// `new york` when both are entities. Fields that are already masked are
/// left alone, which makes the operation idempotent on its own output.
pub fn mask_entities(example: &Example, types: &TypeDict) -> MaskedExample {
    let mut entity_map: BTreeMap<u32, MaskedEntity> = BTreeMap::new();

    // Keep any eids already present (e.g. re-masking masked data) and start
    // fresh ids above them.
    let mut next_eid = 1;
    for t in &example.triples {
        for field in [&t.subject, &t.object] {
            if let Some(eid) = entity_token_id(&field[0]) {
                next_eid = next_eid.max(eid + 1);
                entity_map.entry(eid).or_insert_with(|| MaskedEntity {
                    surface: field.clone(),
                    type_token: field.get(1).cloned().unwrap_or_else(|| FALLBACK_TYPE.into()),
                });
            }
        }
    }

    // First-occurrence order over subjects and objects.
    let mut order: Vec<Vec<String>> = Vec::new();
    for t in &example.triples {
        for field in [&t.subject, &t.object] {
            if entity_token_id(&field[0]).is_none() && !order.contains(field) {
                order.push(field.clone());
            }
        }
    }

    let mut replacement: Vec<(Vec<String>, Vec<String>)> = Vec::new();
    for surface in &order {
        let eid = next_eid;
        next_eid += 1;
        let type_token = types
            .lookup(surface)
            .unwrap_or(FALLBACK_TYPE)
            .to_string();
        entity_map.insert(
            eid,
            MaskedEntity {
                surface: surface.clone(),
                type_token: type_token.clone(),
            },
        );
        replacement.push((
            surface.clone(),
            vec![format!("ENTITY_{eid}"), type_token],
        ));
    }

    let masked_field = |field: &Vec<String>| -> Vec<String> {
        if entity_token_id(&field[0]).is_some() {
            return field.clone();
        }
        replacement
            .iter()
            .find(|(surface, _)| surface == field)
            .map(|(_, repl)| repl.clone())
            .expect("every unmasked field was registered")
    };

    let triples = example
        .triples
        .iter()
        .map(|t| Triple {
            subject: masked_field(&t.subject),
            relation: t.relation.clone(),
            object: masked_field(&t.object),
        })
        .collect();

    // Longest surface first so nested mentions resolve to the longer entity;
    // ties keep first-occurrence (smallest eid) order.
    let mut by_len = replacement.clone();
    by_len.sort_by(|(a, _), (b, _)| b.len().cmp(&a.len()));

    let references = example
        .references
        .iter()
        .map(|reference| {
            let mut out = Vec::with_capacity(reference.len());
            let mut i = 0;
            'scan: while i < reference.len() {
                for (surface, repl) in &by_len {
                    if reference[i..].starts_with(surface.as_slice()) {
                        out.extend(repl.iter().cloned());
                        i += surface.len();
                        continue 'scan;
                    }
                }
                out.push(reference[i].clone());
                i += 1;
            }
            out
        })
        .collect();

    MaskedExample {
        example: Example {
            triples,
            references,
        },
        entity_map,
    }
}

/// Restores entity surface forms in a token sequence. `ENTITY_<eid>` tokens
/// become their mapped surface; a directly following type token is consumed.
/// Tokens whose eid is missing from the map are left unchanged, with a
/// warning recorded.
pub fn unmask_text(
    tokens: &[String],
    entity_map: &BTreeMap<u32, MaskedEntity>,
) -> (Vec<String>, Vec<String>) {
    let mut out = Vec::with_capacity(tokens.len());
    let mut warnings = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if let Some(eid) = entity_token_id(&tokens[i]) {
            if let Some(ent) = entity_map.get(&eid) {
                out.extend(ent.surface.iter().cloned());
                i += 1;
                if i < tokens.len() && tokens[i].eq_ignore_ascii_case(&ent.type_token) {
                    i += 1;
                }
                continue;
            }
            warnings.push(format!(
                "entity id {eid} has no map entry; leaving token {:?} unchanged",
                tokens[i]
            ));
        }
        out.push(tokens[i].clone());
        i += 1;
    }
    (out, warnings)
}

// ── Vocabulary ─────────────────────────────────────────────────────────────

/// Token ↔ index mapping with fixed reserved entries.
///
/// Index 0–3 are `<pad>`, `<unk>`, `<bos>`, `<eos>`; the rest are corpus
/// tokens ordered by descending frequency, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds the vocabulary from every triple token and reference token in
    /// the given examples, keeping tokens with frequency ≥ `min_freq`.
    pub fn build(examples: &[Example], min_freq: usize) -> Vocab {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for ex in examples {
            for t in &ex.triples {
                for tok in t.subject.iter().chain(&t.relation).chain(&t.object) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
            for reference in &ex.references {
                for tok in reference {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(tok, freq)| *freq >= min_freq.max(1) && !RESERVED_TOKENS.contains(tok))
            .collect();
        ranked.sort_by(|(ta, fa), (tb, fb)| fb.cmp(fa).then_with(|| ta.cmp(tb)));

        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|t| t.to_string()).collect();
        tokens.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
        Vocab::from_tokens(tokens).expect("constructed token list is valid")
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Vocab> {
        if tokens.len() < RESERVED_TOKENS.len() {
            return Err(Error::Vocab(format!(
                "vocabulary needs at least the {} reserved tokens, got {}",
                RESERVED_TOKENS.len(),
                tokens.len()
            )));
        }
        for (i, reserved) in RESERVED_TOKENS.iter().enumerate() {
            if tokens[i] != *reserved {
                return Err(Error::Vocab(format!(
                    "index {i} must be {reserved:?}, found {:?}",
                    tokens[i]
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::Vocab(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Number of entries, reserved tokens included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// True only for an impossible empty vocabulary (kept for idiom).
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Index for a token, `UNK` when absent.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    /// Token at an index.
    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| Error::Vocab(format!("index {id} out of range ({})", self.tokens.len())))
    }

    /// Encodes a token sequence (unknown tokens become `UNK`).
    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Decodes indices back to tokens.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>> {
        ids.iter().map(|&id| self.token(id).map(String::from)).collect()
    }

    /// Writes one token per line; the line number is the index.
    pub fn save<W: Write>(&self, mut writer: W) -> Result<()> {
        for tok in &self.tokens {
            writeln!(writer, "{tok}")?;
        }
        Ok(())
    }

    /// Reads a vocabulary written by [`Vocab::save`], validating the
    /// reserved prefix and rejecting duplicates.
    pub fn load<R: BufRead>(reader: R) -> Result<Vocab> {
        let mut tokens = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            tokens.push(line);
        }
        Vocab::from_tokens(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_splits() {
        assert_eq!(
            tokenize("Bakewell  pudding\tis GOOD ."),
            vec!["bakewell", "pudding", "is", "good", "."]
        );
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn relation_label_splitting() {
        assert_eq!(split_relation_label("dishVariation"), vec!["dish", "variation"]);
        assert_eq!(split_relation_label("birthPlace"), vec!["birth", "place"]);
        assert_eq!(
            split_relation_label("timeInSpace"),
            vec!["time", "in", "space"]
        );
        assert_eq!(
            split_relation_label("dish_variation"),
            vec!["dish", "variation"]
        );
        assert_eq!(split_relation_label("region"), vec!["region"]);
        assert_eq!(split_relation_label("ISSDockings"), vec!["iss", "dockings"]);
        assert_eq!(split_relation_label("was born in"), vec!["was", "born", "in"]);
    }

    #[test]
    fn entity_token_id_parsing() {
        assert_eq!(entity_token_id("ENTITY_1"), Some(1));
        assert_eq!(entity_token_id("entity_12"), Some(12));
        assert_eq!(entity_token_id("ENTITY_"), None);
        assert_eq!(entity_token_id("ENTITY_1x"), None);
        assert_eq!(entity_token_id("entity"), None);
        assert_eq!(entity_token_id("bakewell"), None);
    }

    fn sample_line() -> &'static str {
        concat!(
            r#"{"triples": [["Bakewell pudding", "region", "Derbyshire Dales"]], "#,
            r#""references": ["Bakewell pudding comes from the Derbyshire Dales ."]}"#
        )
    }

    #[test]
    fn parse_dataset_happy_path() {
        let examples = parse_dataset(sample_line().as_bytes()).unwrap();
        assert_eq!(examples.len(), 1);
        let ex = &examples[0];
        assert_eq!(ex.triples[0].subject, vec!["bakewell", "pudding"]);
        assert_eq!(ex.triples[0].relation, vec!["region"]);
        assert_eq!(ex.triples[0].object, vec!["derbyshire", "dales"]);
        assert_eq!(ex.references[0][0], "bakewell");
    }

    #[test]
    fn parse_dataset_reports_line_numbers() {
        let data = format!("{}\nnot json\n", sample_line());
        let err = parse_dataset(data.as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_dataset_rejects_empty_fields() {
        let data = r#"{"triples": [["", "region", "x"]], "references": ["a b"]}"#;
        assert!(parse_dataset(data.as_bytes()).is_err());
    }

    #[test]
    fn parse_dataset_rejects_duplicate_triples() {
        let data = concat!(
            r#"{"triples": [["a", "r", "b"], ["a", "r", "b"]], "#,
            r#""references": ["a r b"]}"#
        );
        assert!(parse_dataset(data.as_bytes()).is_err());
    }

    #[test]
    fn parse_dataset_skips_blank_lines() {
        let data = format!("\n{}\n\n", sample_line());
        assert_eq!(parse_dataset(data.as_bytes()).unwrap().len(), 1);
    }

    fn bakewell_example() -> Example {
        Example::from_raw(
            &[("Bakewell pudding", "region", "Derbyshire Dales")],
            &["bakewell pudding is a dessert from the derbyshire dales ."],
        )
        .unwrap()
    }

    fn bakewell_types() -> TypeDict {
        TypeDict::from_pairs(&[
            ("Bakewell pudding", "FOOD"),
            ("Derbyshire Dales", "PLACE"),
        ])
    }

    #[test]
    fn masking_replaces_triples_and_references() {
        let masked = mask_entities(&bakewell_example(), &bakewell_types());
        let t = &masked.example.triples[0];
        assert_eq!(t.subject, vec!["ENTITY_1", "FOOD"]);
        assert_eq!(t.relation, vec!["region"]);
        assert_eq!(t.object, vec!["ENTITY_2", "PLACE"]);
        assert_eq!(
            masked.example.references[0].join(" "),
            "ENTITY_1 FOOD is a dessert from the ENTITY_2 PLACE ."
        );
        assert_eq!(masked.entity_map[&1].surface, vec!["bakewell", "pudding"]);
        assert_eq!(masked.entity_map[&1].type_token, "FOOD");
        assert_eq!(masked.entity_map[&2].type_token, "PLACE");
    }

    #[test]
    fn masking_assigns_ids_in_first_occurrence_order() {
        let ex = Example::from_raw(
            &[
                ("alpha", "rel", "beta"),
                ("beta", "rel", "gamma"),
                ("alpha", "other rel", "gamma"),
            ],
            &["alpha beta gamma"],
        )
        .unwrap();
        let masked = mask_entities(&ex, &TypeDict::default());
        assert_eq!(masked.entity_map[&1].surface, vec!["alpha"]);
        assert_eq!(masked.entity_map[&2].surface, vec!["beta"]);
        assert_eq!(masked.entity_map[&3].surface, vec!["gamma"]);
        // Shared entities reuse their id.
        assert_eq!(masked.example.triples[2].subject, vec!["ENTITY_1", "THING"]);
        assert_eq!(masked.example.triples[2].object, vec!["ENTITY_3", "THING"]);
    }

    #[test]
    fn masking_falls_back_to_thing() {
        let masked = mask_entities(&bakewell_example(), &TypeDict::default());
        assert_eq!(masked.example.triples[0].subject, vec!["ENTITY_1", "THING"]);
        assert_eq!(masked.entity_map[&1].type_token, "THING");
    }

    #[test]
    fn masking_prefers_longest_match() {
        let ex = Example::from_raw(
            &[("New York", "part of", "New York City")],
            &["new york is part of new york city ."],
        )
        .unwrap();
        let masked = mask_entities(&ex, &TypeDict::default());
        assert_eq!(
            masked.example.references[0].join(" "),
            "ENTITY_1 THING is part of ENTITY_2 THING ."
        );
    }

    #[test]
    fn masking_is_idempotent() {
        let masked = mask_entities(&bakewell_example(), &bakewell_types());
        let again = mask_entities(&masked.example, &bakewell_types());
        assert_eq!(again.example, masked.example);
        // Every eid in the re-masked triples still has a map entry.
        for t in &again.example.triples {
            for field in [&t.subject, &t.object] {
                let eid = entity_token_id(&field[0]).unwrap();
                assert!(again.entity_map.contains_key(&eid));
            }
        }
    }

    #[test]
    fn unmask_inverts_masking_on_references() {
        let ex = bakewell_example();
        let masked = mask_entities(&ex, &bakewell_types());
        let (restored, warnings) = unmask_text(&masked.example.references[0], &masked.entity_map);
        assert!(warnings.is_empty());
        assert_eq!(restored, ex.references[0]);
    }

    #[test]
    fn unmask_handles_lowercased_roundtrip() {
        // After a file round-trip tokens are lower-cased; unmasking must
        // still recognize them.
        let masked = mask_entities(&bakewell_example(), &bakewell_types());
        let lowered: Vec<String> = masked.example.references[0]
            .iter()
            .map(|t| t.to_lowercase())
            .collect();
        let (restored, warnings) = unmask_text(&lowered, &masked.entity_map);
        assert!(warnings.is_empty());
        assert_eq!(restored, bakewell_example().references[0]);
    }

    #[test]
    fn unmask_warns_on_unknown_eid() {
        let tokens = tokenize("ENTITY_9 THING is here");
        let (restored, warnings) = unmask_text(&tokens, &BTreeMap::new());
        assert_eq!(restored, tokens);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains('9'));
    }

    #[test]
    fn masked_dataset_round_trips_verbatim() {
        // Masked records must survive the disk round trip unchanged: the
        // uppercase ENTITY/type markers are tokens the normalizer would
        // destroy, and a vocabulary built before writing must still cover
        // every re-read token.
        let masked = mask_entities(&bakewell_example(), &bakewell_types());
        let mut buf = Vec::new();
        write_masked_dataset(&mut buf, std::slice::from_ref(&masked)).unwrap();
        let parsed = parse_masked_dataset(buf.as_slice()).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0], masked);
        assert_eq!(parsed[0].example.triples[0].subject, vec!["ENTITY_1", "FOOD"]);

        let vocab = Vocab::build(std::slice::from_ref(&masked.example), 1);
        for reference in &parsed[0].example.references {
            for (tok, id) in reference.iter().zip(vocab.encode(reference)) {
                assert_ne!(id, UNK, "re-read token {tok:?} fell out of the vocabulary");
            }
        }
    }

    #[test]
    fn raw_records_are_still_normalized_on_parse() {
        let line = r#"{"triples": [["Bakewell Pudding", "dishVariation", "Bakewell Tart"]], "references": ["Bakewell tart IS a variation ."]}"#;
        let parsed = parse_masked_dataset(line.as_bytes()).unwrap();
        assert_eq!(parsed[0].example.triples[0].subject, vec!["bakewell", "pudding"]);
        assert_eq!(parsed[0].example.triples[0].relation, vec!["dish", "variation"]);
        assert_eq!(
            parsed[0].example.references[0],
            tokenize("bakewell tart is a variation .")
        );
    }

    #[test]
    fn type_dict_parses_and_rejects() {
        let dict = TypeDict::parse("Bakewell pudding\tFOOD\n\n".as_bytes()).unwrap();
        assert_eq!(dict.len(), 1);
        assert_eq!(
            dict.lookup(&tokenize("bakewell PUDDING")),
            Some("FOOD")
        );
        let err = TypeDict::parse("no tab here\n".as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn vocab_orders_by_frequency_then_lexicographic() {
        let ex = Example::from_raw(
            &[("b b b", "r", "c")],
            &["a a c z z z"],
        )
        .unwrap();
        let vocab = Vocab::build(&[ex], 1);
        // Frequencies: b=3, z=3, a=2, c=2, r=1.
        assert_eq!(vocab.token(4).unwrap(), "b");
        assert_eq!(vocab.token(5).unwrap(), "z");
        assert_eq!(vocab.token(6).unwrap(), "a");
        assert_eq!(vocab.token(7).unwrap(), "c");
        assert_eq!(vocab.token(8).unwrap(), "r");
        assert_eq!(vocab.len(), 9);
    }

    #[test]
    fn vocab_reserved_ids_fixed() {
        let ex = Example::from_raw(&[("a", "r", "b")], &["a b"]).unwrap();
        let vocab = Vocab::build(&[ex], 1);
        assert_eq!(vocab.id("<pad>"), PAD);
        assert_eq!(vocab.id("<unk>"), UNK);
        assert_eq!(vocab.id("<bos>"), BOS);
        assert_eq!(vocab.id("<eos>"), EOS);
        assert_eq!(vocab.id("never-seen"), UNK);
    }

    #[test]
    fn vocab_min_freq_filters() {
        let ex = Example::from_raw(&[("a a", "r", "b")], &["a once"]).unwrap();
        let vocab = Vocab::build(&[ex], 2);
        assert_eq!(vocab.id("a"), 4);
        assert_eq!(vocab.id("once"), UNK);
        assert_eq!(vocab.id("r"), UNK);
    }

    #[test]
    fn vocab_round_trips_through_file_format() {
        let ex = Example::from_raw(&[("a", "r", "b")], &["a b ."]).unwrap();
        let vocab = Vocab::build(&[ex], 1);
        let mut buf = Vec::new();
        vocab.save(&mut buf).unwrap();
        let loaded = Vocab::load(buf.as_slice()).unwrap();
        assert_eq!(loaded, vocab);
    }

    #[test]
    fn vocab_load_validates_reserved_prefix() {
        let bad = "<pad>\n<unk>\n<eos>\n<bos>\nx\n";
        assert!(Vocab::load(bad.as_bytes()).is_err());
        let dup = "<pad>\n<unk>\n<bos>\n<eos>\nx\nx\n";
        assert!(Vocab::load(dup.as_bytes()).is_err());
    }

    #[test]
    fn vocab_encode_decode() {
        let ex = Example::from_raw(&[("a", "r", "b")], &["a b ."]).unwrap();
        let vocab = Vocab::build(&[ex], 1);
        let ids = vocab.encode(&tokenize("a b missing"));
        assert_eq!(ids[2], UNK);
        let back = vocab.decode(&ids).unwrap();
        assert_eq!(back[0], "a");
        assert_eq!(back[2], "<unk>");
        assert!(vocab.decode(&[999]).is_err());
    }
}
