//! Sentinel masking of entities and its inverse.
//!
//! Every occurrence of a masked entity key is replaced by the same sentinel
//! token; sentinels are numbered by first occurrence in the body. The
//! generation target lists each sentinel followed by the entity's token.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::encoder::tokenizer::tokenize_spans;
use crate::error::{Error, Result};
use crate::structparse::{body_mode, EntitySet};

pub const SENTINEL_COUNT: usize = 100;

/// The reserved sentinel tokens `<e_0>` .. `<e_99>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentinelVocab {
    tokens: Vec<String>,
}

impl Default for SentinelVocab {
    fn default() -> Self {
        Self {
            tokens: (0..SENTINEL_COUNT).map(sentinel).collect(),
        }
    }
}

impl SentinelVocab {
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        sentinel_index(token)
    }
}

pub fn sentinel(i: usize) -> String {
    format!("<e_{i}>")
}

pub fn sentinel_index(token: &str) -> Option<usize> {
    let n = token.strip_prefix("<e_")?.strip_suffix('>')?;
    if n.is_empty() || (n.len() > 1 && n.starts_with('0')) || !n.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    n.parse().ok().filter(|&i| i < SENTINEL_COUNT)
}

pub fn is_sentinel(token: &str) -> bool {
    sentinel_index(token).is_some()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedExample {
    pub doc_id: String,
    #[serde(with = "space_joined")]
    pub source: Vec<String>,
    #[serde(with = "space_joined")]
    pub target: Vec<String>,
    /// Entity key -> sentinel index.
    pub mapping: BTreeMap<String, usize>,
}

mod space_joined {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tokens: &[String], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&tokens.join(" "))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.split_whitespace().map(str::to_string).collect())
    }
}

impl MaskedExample {
    /// Number of sentinel tokens in the target.
    pub fn target_sentinels(&self) -> usize {
        self.target.iter().filter(|t| is_sentinel(t)).count()
    }
}

/// Masks the first `max_entities` distinct keys of `entities` in `doc`.
pub fn mask_entities(
    doc: &Document,
    entities: &EntitySet,
    vocab: &SentinelVocab,
    max_entities: usize,
) -> Result<MaskedExample> {
    if entities.doc_id != doc.id {
        return Err(Error::InvalidArgument(format!(
            "entity set for `{}` applied to document `{}`",
            entities.doc_id, doc.id
        )));
    }
    if max_entities > vocab.size() {
        return Err(Error::InvalidArgument(format!(
            "max_entities {max_entities} exceeds {} sentinels",
            vocab.size()
        )));
    }
    let tokens = tokenize_spans(&doc.body, body_mode(doc.kind));
    let by_range: HashMap<(usize, usize), usize> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| ((t.start, t.end), i))
        .collect();

    // Order is derived from offsets, not from the order spans were listed in.
    let mut spans: Vec<_> = entities.spans.iter().collect();
    spans.sort_by_key(|s| (s.start, s.end));

    let mut mapping: BTreeMap<String, usize> = BTreeMap::new();
    let mut replacement: HashMap<usize, usize> = HashMap::new();
    let mut target = Vec::new();
    for span in spans {
        let token_idx = by_range
            .get(&(span.start, span.end))
            .copied()
            .filter(|_| doc.body.get(span.start..span.end) == Some(span.surface.as_str()))
            .ok_or_else(|| Error::SpanMismatch {
                doc_id: doc.id.clone(),
                start: span.start,
                end: span.end,
                surface: span.surface.clone(),
            })?;
        let sentinel_idx = match mapping.get(&span.key) {
            Some(&i) => i,
            None if mapping.len() < max_entities => {
                let i = mapping.len();
                mapping.insert(span.key.clone(), i);
                target.push(vocab.token(i).to_string());
                target.push(tokens[token_idx].text.clone());
                i
            }
            None => continue,
        };
        replacement.insert(token_idx, sentinel_idx);
    }

    let source = tokens
        .into_iter()
        .enumerate()
        .map(|(i, t)| match replacement.get(&i) {
            Some(&s) => vocab.token(s).to_string(),
            None => t.text,
        })
        .collect();
    Ok(MaskedExample {
        doc_id: doc.id.clone(),
        source,
        target,
        mapping,
    })
}

/// Replaces every sentinel in the source by its tokens from the target.
pub fn reconstruct(example: &MaskedExample) -> Result<Vec<String>> {
    let mut fills: HashMap<&str, Vec<&str>> = HashMap::new();
    let mut current: Option<&str> = None;
    for tok in &example.target {
        if is_sentinel(tok) {
            fills.entry(tok.as_str()).or_default();
            current = Some(tok.as_str());
        } else if let Some(s) = current {
            fills.get_mut(s).expect("sentinel registered").push(tok.as_str());
        }
    }
    let mut out = Vec::with_capacity(example.source.len());
    for tok in &example.source {
        if is_sentinel(tok) {
            let fill = fills
                .get(tok.as_str())
                .ok_or_else(|| Error::MissingSentinel(tok.clone()))?;
            out.extend(fill.iter().map(|s| s.to_string()));
        } else {
            out.push(tok.clone());
        }
    }
    Ok(out)
}

/// Masks every document with at least one entity; returns the examples and
/// the number of documents skipped for having none.
pub fn mask_corpus<'a>(
    docs: impl IntoIterator<Item = (&'a Document, &'a EntitySet)>,
    vocab: &SentinelVocab,
    max_entities: usize,
) -> Result<(Vec<MaskedExample>, usize)> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for (doc, set) in docs {
        if set.is_empty() {
            skipped += 1;
            continue;
        }
        out.push(mask_entities(doc, set, vocab, max_entities)?);
    }
    Ok((out, skipped))
}
