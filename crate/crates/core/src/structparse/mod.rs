//! Entity identification in structured documents.
//!
//! Code entities are identifiers found by [`lexer::lex`]; keywords, literals,
//! strings and comments never produce spans. Product entities are content
//! words that occur in both the product title and its body.

pub mod lexer;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::corpus::{DocKind, Document};
use crate::encoder::tokenizer::{tokenize_spans, TokenizeMode};
use crate::error::{Error, Result};
use lexer::LexKind;

const STOPWORDS_V1: &str = include_str!("../../data/stopwords_v1.txt");
const MIN_PRODUCT_ENTITY_CHARS: usize = 3;

pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_V1
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySet {
    pub doc_id: String,
    /// Sorted by `start`, non-overlapping.
    pub spans: Vec<EntitySpan>,
    /// Distinct keys in order of first occurrence.
    #[serde(default)]
    pub keys: Vec<String>,
}

impl EntitySet {
    /// Sorts spans and derives `keys` from them.
    pub fn from_spans(doc_id: impl Into<String>, mut spans: Vec<EntitySpan>) -> Self {
        spans.sort_by_key(|s| (s.start, s.end));
        let mut seen = HashSet::new();
        let keys = spans
            .iter()
            .filter(|s| seen.insert(s.key.clone()))
            .map(|s| s.key.clone())
            .collect();
        Self {
            doc_id: doc_id.into(),
            spans,
            keys,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Checks span bounds, slicing, ordering and key bookkeeping against `body`.
    pub fn validate(&self, body: &str) -> Result<()> {
        let mismatch = |s: &EntitySpan| Error::SpanMismatch {
            doc_id: self.doc_id.clone(),
            start: s.start,
            end: s.end,
            surface: s.surface.clone(),
        };
        let mut prev_end = 0;
        for s in &self.spans {
            let ok = s.start < s.end
                && s.start >= prev_end
                && body.get(s.start..s.end) == Some(s.surface.as_str());
            if !ok {
                return Err(mismatch(s));
            }
            prev_end = s.end;
        }
        let rebuilt = EntitySet::from_spans(self.doc_id.clone(), self.spans.clone());
        if rebuilt.keys != self.keys {
            return Err(Error::InvalidArgument(format!(
                "entity keys of `{}` are not in first-occurrence order",
                self.doc_id
            )));
        }
        Ok(())
    }
}

pub fn extract_code_entities(doc: &Document) -> Result<EntitySet> {
    let tag = doc.lang_tag.as_deref().unwrap_or_default();
    let lang = lexer::language(tag).ok_or_else(|| Error::UnsupportedLanguage(tag.to_string()))?;
    let lexemes = lexer::lex(&doc.body, lang).map_err(|e| Error::Unlexable {
        doc_id: doc.id.clone(),
        offset: e.offset,
    })?;
    let spans = lexemes
        .into_iter()
        .filter(|l| l.kind == LexKind::Identifier)
        .map(|l| {
            let surface = doc.body[l.start..l.end].to_string();
            EntitySpan {
                start: l.start,
                end: l.end,
                key: surface.clone(),
                surface,
            }
        })
        .collect();
    Ok(EntitySet::from_spans(doc.id.clone(), spans))
}

fn content_word(text: &str) -> bool {
    text.chars().all(char::is_alphabetic)
        && text.chars().count() >= MIN_PRODUCT_ENTITY_CHARS
        && !stopwords().contains(text)
}

pub fn extract_product_entities(doc: &Document) -> Result<EntitySet> {
    let title = doc
        .title
        .as_deref()
        .filter(|t| !t.trim().is_empty())
        .ok_or_else(|| Error::MissingTitle(doc.id.clone()))?;
    let title_words: HashSet<String> = tokenize_spans(title, TokenizeMode::Natural)
        .into_iter()
        .map(|t| t.text)
        .filter(|t| content_word(t))
        .collect();
    let spans = tokenize_spans(&doc.body, TokenizeMode::Natural)
        .into_iter()
        .filter(|t| content_word(&t.text) && title_words.contains(&t.text))
        .map(|t| EntitySpan {
            start: t.start,
            end: t.end,
            surface: doc.body[t.start..t.end].to_string(),
            key: t.text,
        })
        .collect();
    Ok(EntitySet::from_spans(doc.id.clone(), spans))
}

/// Dispatches on document kind. Unstructured kinds yield an empty set.
pub fn extract_entities(doc: &Document) -> Result<EntitySet> {
    match doc.kind {
        DocKind::Code => extract_code_entities(doc),
        DocKind::Product => extract_product_entities(doc),
        DocKind::Passage | DocKind::Query => Ok(EntitySet::from_spans(doc.id.clone(), vec![])),
    }
}

/// Tokenizer mode used for a document's body.
pub fn body_mode(kind: DocKind) -> TokenizeMode {
    match kind {
        DocKind::Code => TokenizeMode::Code,
        _ => TokenizeMode::Natural,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocEntityProportion {
    pub doc_id: String,
    pub kind: DocKind,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityStats {
    pub per_doc: Vec<DocEntityProportion>,
    /// Macro average over documents of each kind.
    pub per_kind: BTreeMap<String, f64>,
}

/// Fraction of body tokens covered by entity spans, per document and kind.
pub fn entity_stats<'a>(
    docs: impl IntoIterator<Item = &'a Document>,
    entity_sets: &[EntitySet],
) -> EntityStats {
    let by_id: HashMap<&str, &EntitySet> =
        entity_sets.iter().map(|e| (e.doc_id.as_str(), e)).collect();
    let mut per_doc = Vec::new();
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for doc in docs {
        let Some(set) = by_id.get(doc.id.as_str()) else {
            continue;
        };
        let tokens = tokenize_spans(&doc.body, body_mode(doc.kind));
        let covered = tokens
            .iter()
            .filter(|t| {
                set.spans
                    .iter()
                    .any(|s| s.start <= t.start && t.end <= s.end)
            })
            .count();
        let proportion = if tokens.is_empty() {
            0.0
        } else {
            covered as f64 / tokens.len() as f64
        };
        let kind_name = serde_json::to_value(doc.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let e = sums.entry(kind_name).or_default();
        e.0 += proportion;
        e.1 += 1;
        per_doc.push(DocEntityProportion {
            doc_id: doc.id.clone(),
            kind: doc.kind,
            proportion,
        });
    }
    let per_kind = sums
        .into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect();
    EntityStats { per_doc, per_kind }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Modality;

    fn code(body: &str) -> Document {
        Document {
            id: "d".into(),
            modality: Modality::Structured,
            kind: DocKind::Code,
            title: None,
            body: body.into(),
            lang_tag: Some("python".into()),
            doc_link: None,
            bullets: None,
        }
    }

    fn product(title: Option<&str>, body: &str) -> Document {
        Document {
            id: "p".into(),
            modality: Modality::Structured,
            kind: DocKind::Product,
            title: title.map(str::to_string),
            body: body.into(),
            lang_tag: None,
            doc_link: None,
            bullets: None,
        }
    }

    #[test]
    fn add_function_entities() {
        let set = extract_code_entities(&code("def add(x, y): return x + y")).unwrap();
        assert_eq!(set.keys, ["add", "x", "y"]);
        let surfaces: Vec<&str> = set.spans.iter().map(|s| s.surface.as_str()).collect();
        assert_eq!(surfaces, ["add", "x", "y", "x", "y"]);
    }

    #[test]
    fn keywords_only() {
        assert!(extract_code_entities(&code("if True: pass"))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn repeated_identifier_shares_key() {
        let set = extract_code_entities(&code("total = total + 1")).unwrap();
        assert_eq!(set.keys, ["total"]);
        assert_eq!(set.spans.len(), 2);
        assert!(set.spans.iter().all(|s| s.key == "total"));
    }

    #[test]
    fn strings_and_comments_excluded() {
        let set =
            extract_code_entities(&code("x = 'hidden name' # other words\ny = f\"{x}\"")).unwrap();
        assert_eq!(set.keys, ["x", "y"]);
    }

    #[test]
    fn attributes_and_imports_are_entities() {
        let set = extract_code_entities(&code("import numpy as np\nnp.linalg.norm(v)")).unwrap();
        assert_eq!(set.keys, ["numpy", "np", "linalg", "norm", "v"]);
    }

    #[test]
    fn unsupported_language() {
        let mut d = code("x");
        d.lang_tag = Some("cobol".into());
        assert!(matches!(
            extract_code_entities(&d),
            Err(Error::UnsupportedLanguage(t)) if t == "cobol"
        ));
    }

    #[test]
    fn unlexable_reports_offset() {
        assert!(matches!(
            extract_code_entities(&code("a = $b")),
            Err(Error::Unlexable { offset: 4, .. })
        ));
    }

    #[test]
    fn product_title_body_intersection() {
        let set = extract_product_entities(&product(
            Some("Garden Fence Screen"),
            "Green fence screen with straps",
        ))
        .unwrap();
        assert_eq!(set.keys, ["fence", "screen"]);
        assert_eq!(set.spans.len(), 2);
        assert_eq!(set.spans[0].surface, "fence");
    }

    #[test]
    fn product_no_overlap_or_stopwords() {
        assert!(extract_product_entities(&product(Some("Hair Dye"), "Fence screen"))
            .unwrap()
            .is_empty());
        assert!(extract_product_entities(&product(Some("The And Of"), "the and of"))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn product_keys_lowercase_surface_preserved() {
        let set = extract_product_entities(&product(Some("fence"), "Fence and FENCE")).unwrap();
        assert_eq!(set.keys, ["fence"]);
        let surfaces: Vec<&str> = set.spans.iter().map(|s| s.surface.as_str()).collect();
        assert_eq!(surfaces, ["Fence", "FENCE"]);
    }

    #[test]
    fn product_missing_title() {
        assert!(matches!(
            extract_product_entities(&product(None, "x")),
            Err(Error::MissingTitle(_))
        ));
    }

    #[test]
    fn stats_extremes() {
        let all = code("abc");
        let none = code("1 + 2");
        let sets = vec![
            extract_code_entities(&all).unwrap(),
            EntitySet::from_spans("n", vec![]),
        ];
        let mut none = none;
        none.id = "n".into();
        let stats = entity_stats([&all, &none], &sets);
        assert_eq!(stats.per_doc[0].proportion, 1.0);
        assert_eq!(stats.per_doc[1].proportion, 0.0);
        assert_eq!(stats.per_kind["code"], 0.5);
    }

    #[test]
    fn validate_detects_bad_slice() {
        let mut set = extract_code_entities(&code("abc = 1")).unwrap();
        set.spans[0].surface = "abd".into();
        assert!(set.validate("abc = 1").is_err());
    }
}
