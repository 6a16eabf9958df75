//! Documents, training pairs, queries and graded judgments.
//!
//! Every on-disk format here is JSONL: one UTF-8 JSON object per line.
//! Loaders keep insertion order and report the 1-based line number of the
//! first offending record.

mod synthetic;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synthetic::{generate_synthetic, SyntheticCorpus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Structured,
    Unstructured,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Structured => "structured",
            Modality::Unstructured => "unstructured",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocKind {
    Code,
    Product,
    Passage,
    Query,
}

/// One structured or unstructured text unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub modality: Modality,
    pub kind: DocKind,
    #[serde(default)]
    pub title: Option<String>,
    pub body: String,
    #[serde(default)]
    pub lang_tag: Option<String>,
    /// Id of the document this one is aligned with (docstring -> code).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_link: Option<String>,
    /// Product bullet points, stored inline on the product record.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bullets: Option<Vec<String>>,
}

impl Document {
    fn validate(&self, line: usize) -> Result<()> {
        let bad = |message: &str| Error::Malformed {
            line,
            message: format!("document `{}`: {message}", self.id),
        };
        if self.id.is_empty() {
            return Err(Error::Malformed {
                line,
                message: "empty document id".into(),
            });
        }
        if self.body.is_empty() {
            return Err(bad("empty body"));
        }
        if self.kind == DocKind::Code && self.lang_tag.as_deref().map_or(true, str::is_empty) {
            return Err(bad("code document without lang_tag"));
        }
        Ok(())
    }
}

/// A positive (passage, structured document) pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingPair {
    pub passage_id: String,
    pub doc_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Grade {
    #[serde(alias = "E", alias = "exact")]
    Exact,
    #[serde(alias = "S", alias = "substitute")]
    Substitute,
    #[serde(alias = "C", alias = "complement")]
    Complement,
    #[serde(alias = "I", alias = "irrelevant")]
    Irrelevant,
}

impl Grade {
    pub const ALL: [Grade; 4] = [
        Grade::Exact,
        Grade::Substitute,
        Grade::Complement,
        Grade::Irrelevant,
    ];

    /// Integer label used in qrels files: 3/2/1/0 for E/S/C/I.
    pub fn qrels_level(self) -> u8 {
        match self {
            Grade::Exact => 3,
            Grade::Substitute => 2,
            Grade::Complement => 1,
            Grade::Irrelevant => 0,
        }
    }

    pub fn from_qrels_level(level: i64) -> Option<Grade> {
        match level {
            3 => Some(Grade::Exact),
            2 => Some(Grade::Substitute),
            1 => Some(Grade::Complement),
            0 => Some(Grade::Irrelevant),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub query_id: String,
    pub doc_id: String,
    pub grade: Grade,
}

/// Documents in insertion order with an id lookup table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocumentCollection {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl DocumentCollection {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            doc.validate(i + 1)?;
            if let Some(first) = by_id.insert(doc.id.clone(), i) {
                return Err(Error::DuplicateId {
                    id: doc.id.clone(),
                    first_line: first + 1,
                    line: i + 1,
                });
            }
        }
        Ok(Self { docs, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.docs.iter()
    }

    pub fn structured(&self) -> impl Iterator<Item = &Document> {
        self.docs
            .iter()
            .filter(|d| d.modality == Modality::Structured)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn into_docs(self) -> Vec<Document> {
        self.docs
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, record));
    }
    Ok(out)
}

/// Every record of a JSON-lines file, in file order.
pub fn load_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    Ok(read_jsonl(path.as_ref())?.into_iter().map(|(_, r)| r).collect())
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize to JSON");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn check_unique<'a>(ids: impl Iterator<Item = (usize, &'a str)>) -> Result<()> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (line, id) in ids {
        if let Some(&first_line) = seen.get(id) {
            return Err(Error::DuplicateId {
                id: id.to_string(),
                first_line,
                line,
            });
        }
        seen.insert(id, line);
    }
    Ok(())
}

pub fn load_documents(path: impl AsRef<Path>) -> Result<DocumentCollection> {
    let records: Vec<(usize, Document)> = read_jsonl(path.as_ref())?;
    for (line, doc) in &records {
        doc.validate(*line)?;
    }
    check_unique(records.iter().map(|(l, d)| (*l, d.id.as_str())))?;
    DocumentCollection::new(records.into_iter().map(|(_, d)| d).collect())
}

/// Loads pairs, checking both ends resolve in `docs` with the right modality.
pub fn load_pairs(path: impl AsRef<Path>, docs: &DocumentCollection) -> Result<Vec<TrainingPair>> {
    let records: Vec<(usize, TrainingPair)> = read_jsonl(path.as_ref())?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (line, pair) in records {
        let dangling = || Error::DanglingReference {
            line,
            from: pair.passage_id.clone(),
            to: pair.doc_id.clone(),
        };
        let passage = docs.get(&pair.passage_id).ok_or_else(dangling)?;
        let doc = docs.get(&pair.doc_id).ok_or_else(dangling)?;
        if passage.modality != Modality::Unstructured || doc.modality != Modality::Structured {
            return Err(Error::Malformed {
                line,
                message: format!(
                    "pair ({}, {}) must link an unstructured passage to a structured document",
                    pair.passage_id, pair.doc_id
                ),
            });
        }
        if !seen.insert(pair.clone()) {
            return Err(Error::Malformed {
                line,
                message: format!("duplicate pair ({}, {})", pair.passage_id, pair.doc_id),
            });
        }
        out.push(pair);
    }
    Ok(out)
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let records: Vec<(usize, Query)> = read_jsonl(path.as_ref())?;
    for (line, q) in &records {
        if q.id.is_empty() || q.text.trim().is_empty() {
            return Err(Error::Malformed {
                line: *line,
                message: format!("query `{}` has an empty id or text", q.id),
            });
        }
    }
    check_unique(records.iter().map(|(l, q)| (*l, q.id.as_str())))?;
    Ok(records.into_iter().map(|(_, q)| q).collect())
}

/// Loads judgments. When `queries`/`docs` are given, every reference must resolve.
pub fn load_judgments(
    path: impl AsRef<Path>,
    queries: Option<&[Query]>,
    docs: Option<&DocumentCollection>,
) -> Result<Vec<Judgment>> {
    let records: Vec<(usize, Judgment)> = read_jsonl(path.as_ref())?;
    let query_ids: Option<HashSet<&str>> =
        queries.map(|qs| qs.iter().map(|q| q.id.as_str()).collect());
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (line, j) in records {
        let q_ok = query_ids
            .as_ref()
            .map_or(true, |ids| ids.contains(j.query_id.as_str()));
        let d_ok = docs.map_or(true, |d| d.contains(&j.doc_id));
        if !q_ok || !d_ok {
            return Err(Error::DanglingReference {
                line,
                from: j.query_id,
                to: j.doc_id,
            });
        }
        if !seen.insert((j.query_id.clone(), j.doc_id.clone())) {
            return Err(Error::Malformed {
                line,
                message: format!("duplicate judgment ({}, {})", j.query_id, j.doc_id),
            });
        }
        out.push(j);
    }
    Ok(out)
}

/// Writes judgments as whitespace-separated qrels: `query_id 0 doc_id level`.
pub fn write_qrels(path: impl AsRef<Path>, judgments: &[Judgment]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for j in judgments {
        writeln!(w, "{} 0 {} {}", j.query_id, j.doc_id, j.grade.qrels_level())
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_qrels(path: impl AsRef<Path>) -> Result<Vec<Judgment>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |message: &str| Error::Malformed {
            line: i + 1,
            message: message.to_string(),
        };
        if fields.len() != 4 {
            return Err(bad("expected `query_id 0 doc_id grade`"));
        }
        let grade = fields[3]
            .parse::<i64>()
            .ok()
            .and_then(Grade::from_qrels_level)
            .ok_or_else(|| bad("grade must be one of 0, 1, 2, 3"))?;
        out.push(Judgment {
            query_id: fields[0].to_string(),
            doc_id: fields[2].to_string(),
            grade,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub doc_id: String,
    pub reason: String,
}

/// Output of [`build_pairs`].
#[derive(Debug, Clone, Default)]
pub struct PairSet {
    pub pairs: Vec<TrainingPair>,
    /// Unstructured documents materialized from product bullet points.
    pub bullet_docs: Vec<Document>,
    pub skipped: Vec<SkipRecord>,
}

impl PairSet {
    /// Looks a passage up among the collection and the materialized bullets.
    pub fn passage<'a>(&'a self, docs: &'a DocumentCollection, id: &str) -> Option<&'a Document> {
        docs.get(id)
            .or_else(|| self.bullet_docs.iter().find(|d| d.id == id))
    }
}

pub fn bullet_doc_id(product_id: &str, index: usize) -> String {
    format!("{product_id}#b{index}")
}

/// Builds one positive pair per structured document.
///
/// Code documents pair with their linked docstring: either the code record's
/// own `doc_link`, or the first unstructured document whose `doc_link`
/// names it. Products pair with one of their bullet points, drawn uniformly
/// under `seed`.
pub fn build_pairs(docs: &DocumentCollection, seed: u64) -> PairSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut linked_to: HashMap<&str, &str> = HashMap::new();
    for d in docs.iter() {
        if d.modality == Modality::Unstructured {
            if let Some(target) = d.doc_link.as_deref() {
                linked_to.entry(target).or_insert(d.id.as_str());
            }
        }
    }

    let mut out = PairSet::default();
    for doc in docs.structured() {
        let skip = |reason: &str| SkipRecord {
            doc_id: doc.id.clone(),
            reason: reason.to_string(),
        };
        match doc.kind {
            DocKind::Product => {
                let bullets: Vec<(usize, &String)> = doc
                    .bullets
                    .iter()
                    .flatten()
                    .enumerate()
                    .filter(|(_, b)| !b.trim().is_empty())
                    .collect();
                if bullets.is_empty() {
                    out.skipped.push(skip("product has no bullet points"));
                    continue;
                }
                let (idx, text) = bullets[rng.gen_range(0..bullets.len())];
                let id = bullet_doc_id(&doc.id, idx);
                out.bullet_docs.push(Document {
                    id: id.clone(),
                    modality: Modality::Unstructured,
                    kind: DocKind::Passage,
                    title: None,
                    body: text.clone(),
                    lang_tag: None,
                    doc_link: Some(doc.id.clone()),
                    bullets: None,
                });
                out.pairs.push(TrainingPair {
                    passage_id: id,
                    doc_id: doc.id.clone(),
                });
            }
            _ => {
                let own_link = doc
                    .doc_link
                    .as_deref()
                    .and_then(|l| docs.get(l))
                    .filter(|p| p.modality == Modality::Unstructured)
                    .map(|p| p.id.as_str());
                match own_link.or_else(|| linked_to.get(doc.id.as_str()).copied()) {
                    Some(pid) => out.pairs.push(TrainingPair {
                        passage_id: pid.to_string(),
                        doc_id: doc.id.clone(),
                    }),
                    None => out.skipped.push(skip("no linked unstructured text")),
                }
            }
        }
    }
    out
}

/// Disjoint train/dev/test id sets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    /// Shuffles `ids` under `seed` and carves off `n_dev` and `n_test` ids.
    pub fn partition(ids: &[String], n_dev: usize, n_test: usize, seed: u64) -> Result<Split> {
        if n_dev + n_test > ids.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot take {n_dev} dev + {n_test} test ids from {}",
                ids.len()
            )));
        }
        let mut shuffled = ids.to_vec();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let test = shuffled.split_off(shuffled.len() - n_test);
        let dev = shuffled.split_off(shuffled.len() - n_dev);
        let split = Split {
            train: shuffled,
            dev,
            test,
        };
        split.validate(|_| true)?;
        Ok(split)
    }

    pub fn validate(&self, resolves: impl Fn(&str) -> bool) -> Result<()> {
        let mut seen = HashSet::new();
        for id in self.train.iter().chain(&self.dev).chain(&self.test) {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "id `{id}` appears in more than one split"
                )));
            }
            if !resolves(id) {
                return Err(Error::InvalidArgument(format!("split id `{id}` does not resolve")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, modality: Modality, kind: DocKind, body: &str) -> Document {
        Document {
            id: id.into(),
            modality,
            kind,
            title: None,
            body: body.into(),
            lang_tag: (kind == DocKind::Code).then(|| "python".to_string()),
            doc_link: None,
            bullets: None,
        }
    }

    fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn doc_line(id: &str) -> String {
        format!(r#"{{"id":"{id}","modality":"structured","kind":"code","title":null,"body":"x = 1","lang_tag":"python"}}"#)
    }

    #[test]
    fn empty_file_is_empty_collection() {
        let f = write_lines(&[]);
        assert!(load_documents(f.path()).unwrap().is_empty());
    }

    #[test]
    fn single_document_round_trips() {
        let f = write_lines(&[doc_line("a")]);
        let docs = load_documents(f.path()).unwrap();
        assert_eq!(docs.len(), 1);
        let d = &docs.docs()[0];
        assert_eq!(d.id, "a");
        assert_eq!(d.kind, DocKind::Code);
        assert_eq!(d.body, "x = 1");
        assert_eq!(d.lang_tag.as_deref(), Some("python"));
    }

    #[test]
    fn duplicate_id_names_id_and_line() {
        let lines: Vec<String> = ["a", "b", "dup", "c", "d", "e", "dup"]
            .iter()
            .map(|id| doc_line(id))
            .collect();
        let f = write_lines(&lines);
        match load_documents(f.path()) {
            Err(Error::DuplicateId {
                id,
                first_line,
                line,
            }) => {
                assert_eq!(id, "dup");
                assert_eq!(first_line, 3);
                assert_eq!(line, 7);
            }
            other => panic!("expected duplicate id error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_carries_line_number() {
        let f = write_lines(&[doc_line("a"), "{not json".into()]);
        match load_documents(f.path()) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn code_without_lang_tag_rejected() {
        let f = write_lines(&[
            r#"{"id":"a","modality":"structured","kind":"code","body":"x"}"#.into(),
        ]);
        assert!(matches!(
            load_documents(f.path()),
            Err(Error::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn dangling_pair_names_both_ids() {
        let docs = DocumentCollection::new(vec![doc(
            "c1",
            Modality::Structured,
            DocKind::Code,
            "x",
        )])
        .unwrap();
        let f = write_lines(&[r#"{"passage_id":"p9","doc_id":"c1"}"#.into()]);
        match load_pairs(f.path(), &docs) {
            Err(Error::DanglingReference { from, to, line }) => {
                assert_eq!((from.as_str(), to.as_str(), line), ("p9", "c1", 1));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dangling_judgment_rejected() {
        let queries = vec![Query {
            id: "q1".into(),
            text: "t".into(),
        }];
        let f = write_lines(&[r#"{"query_id":"q2","doc_id":"d","grade":"Exact"}"#.into()]);
        assert!(matches!(
            load_judgments(f.path(), Some(&queries), None),
            Err(Error::DanglingReference { .. })
        ));
    }

    #[test]
    fn one_code_doc_one_docstring_one_pair() {
        let mut passage = doc("p1", Modality::Unstructured, DocKind::Passage, "adds");
        passage.doc_link = Some("c1".into());
        let docs = DocumentCollection::new(vec![
            doc("c1", Modality::Structured, DocKind::Code, "def f(): pass"),
            passage,
        ])
        .unwrap();
        let set = build_pairs(&docs, 0);
        assert_eq!(
            set.pairs,
            vec![TrainingPair {
                passage_id: "p1".into(),
                doc_id: "c1".into()
            }]
        );
        assert!(set.skipped.is_empty());
    }

    #[test]
    fn product_bullet_choice_is_seeded() {
        let mut product = doc("prod", Modality::Structured, DocKind::Product, "desc");
        product.bullets = Some(vec!["one".into(), "two".into(), "three".into()]);
        let docs = DocumentCollection::new(vec![product]).unwrap();
        let a = build_pairs(&docs, 42);
        let b = build_pairs(&docs, 42);
        assert_eq!(a.pairs.len(), 1);
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.bullet_docs, b.bullet_docs);
        assert_eq!(a.bullet_docs[0].modality, Modality::Unstructured);
        // every bullet is reachable under some seed
        let chosen: HashSet<String> = (0..64)
            .map(|s| build_pairs(&docs, s).pairs[0].passage_id.clone())
            .collect();
        assert_eq!(chosen.len(), 3);
    }

    #[test]
    fn product_without_bullets_is_skipped() {
        let mut product = doc("prod", Modality::Structured, DocKind::Product, "desc");
        product.bullets = Some(vec![]);
        let docs = DocumentCollection::new(vec![product]).unwrap();
        let set = build_pairs(&docs, 1);
        assert!(set.pairs.is_empty());
        assert_eq!(set.skipped.len(), 1);
        assert_eq!(set.skipped[0].doc_id, "prod");
    }

    #[test]
    fn qrels_levels() {
        let js = vec![
            Judgment {
                query_id: "q".into(),
                doc_id: "a".into(),
                grade: Grade::Exact,
            },
            Judgment {
                query_id: "q".into(),
                doc_id: "b".into(),
                grade: Grade::Complement,
            },
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_qrels(f.path(), &js).unwrap();
        let text = std::fs::read_to_string(f.path()).unwrap();
        assert_eq!(text, "q 0 a 3\nq 0 b 1\n");
        assert_eq!(read_qrels(f.path()).unwrap(), js);
    }

    #[test]
    fn split_is_disjoint() {
        let ids: Vec<String> = (0..20).map(|i| format!("d{i}")).collect();
        let s = Split::partition(&ids, 3, 5, 9).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (12, 3, 5));
        let all: HashSet<_> = s.train.iter().chain(&s.dev).chain(&s.test).collect();
        assert_eq!(all.len(), 20);
    }
}
