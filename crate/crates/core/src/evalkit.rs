//! Ranking metrics (MRR@k, NDCG@k with graded gains), TREC run I/O,
//! embedding geometry diagnostics and embedding export.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Grade, Judgment, Modality};
use crate::encoder::Embedding;
use crate::error::{Error, Result};
use crate::retrieval::{Index, SearchResult};

pub const DEFAULT_CUTOFF: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainScheme {
    FourClass,
    TwoClass,
}

impl GainScheme {
    pub fn label(self) -> &'static str {
        match self {
            GainScheme::FourClass => "four-class",
            GainScheme::TwoClass => "two-class",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainTable {
    pub scheme: GainScheme,
    pub exact: f64,
    pub substitute: f64,
    pub complement: f64,
    pub irrelevant: f64,
}

impl GainTable {
    pub fn four_class() -> Self {
        Self {
            scheme: GainScheme::FourClass,
            exact: 1.0,
            substitute: 0.1,
            complement: 0.01,
            irrelevant: 0.0,
        }
    }

    pub fn two_class() -> Self {
        Self {
            scheme: GainScheme::TwoClass,
            exact: 1.0,
            substitute: 0.0,
            complement: 0.0,
            irrelevant: 0.0,
        }
    }

    pub fn for_scheme(scheme: GainScheme) -> Self {
        match scheme {
            GainScheme::FourClass => Self::four_class(),
            GainScheme::TwoClass => Self::two_class(),
        }
    }

    pub fn gain(&self, grade: Grade) -> f64 {
        match grade {
            Grade::Exact => self.exact,
            Grade::Substitute => self.substitute,
            Grade::Complement => self.complement,
            Grade::Irrelevant => self.irrelevant,
        }
    }
}

/// Query id -> ranked doc ids, best first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunRanking {
    pub rankings: BTreeMap<String, Vec<String>>,
}

impl RunRanking {
    pub fn insert(&mut self, query_id: impl Into<String>, docs: Vec<String>) -> Result<()> {
        let query_id = query_id.into();
        let mut seen = HashSet::new();
        if let Some(d) = docs.iter().find(|d| !seen.insert(d.as_str())) {
            return Err(Error::InvalidArgument(format!(
                "doc `{d}` ranked twice for query `{query_id}`"
            )));
        }
        self.rankings.insert(query_id, docs);
        Ok(())
    }

    pub fn from_results<'a>(results: impl IntoIterator<Item = (&'a str, &'a [SearchResult])>) -> Result<Self> {
        let mut run = Self::default();
        for (q, rs) in results {
            run.insert(q, rs.iter().map(|r| r.doc_id.clone()).collect())?;
        }
        Ok(run)
    }
}

/// One TREC run line per result: `query_id Q0 doc_id rank score tag`.
pub fn write_trec_run<'a>(
    path: impl AsRef<Path>,
    results: impl IntoIterator<Item = (&'a str, &'a [SearchResult])>,
    tag: &str,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (q, rs) in results {
        for r in rs {
            out.push_str(&format!("{q} Q0 {} {} {} {tag}\n", r.doc_id, r.rank, r.score));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parses a TREC run; documents are ordered by the rank column.
pub fn read_trec_run(path: impl AsRef<Path>) -> Result<RunRanking> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(Error::Malformed {
                line: i + 1,
                message: format!("expected 6 fields, found {}", f.len()),
            });
        }
        let rank: usize = f[3].parse().map_err(|_| Error::Malformed {
            line: i + 1,
            message: format!("bad rank `{}`", f[3]),
        })?;
        f[4].parse::<f64>().map_err(|_| Error::Malformed {
            line: i + 1,
            message: format!("bad score `{}`", f[4]),
        })?;
        rows.entry(f[0].to_string()).or_default().push((rank, f[2].to_string()));
    }
    let mut run = RunRanking::default();
    for (q, mut docs) in rows {
        docs.sort();
        run.insert(q, docs.into_iter().map(|d| d.1).collect())?;
    }
    Ok(run)
}

/// Query id -> (doc id -> grade).
pub type JudgmentMap = HashMap<String, HashMap<String, Grade>>;

pub fn judgment_map(judgments: &[Judgment]) -> JudgmentMap {
    let mut m: JudgmentMap = HashMap::new();
    for j in judgments {
        m.entry(j.query_id.clone())
            .or_default()
            .insert(j.doc_id.clone(), j.grade);
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub scheme: String,
    pub cutoff: usize,
    pub value: f64,
    pub per_query: BTreeMap<String, f64>,
    pub zero_ideal_count: usize,
}

fn judged<'a>(judgments: &'a JudgmentMap, q: &str) -> Result<&'a HashMap<String, Grade>> {
    judgments
        .get(q)
        .ok_or_else(|| Error::MissingJudgments(q.to_string()))
}

fn mean(values: &BTreeMap<String, f64>) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.values().sum::<f64>() / values.len() as f64
    }
}

/// Reciprocal rank of the first doc whose grade is in `relevant`.
pub fn mrr_at_k(run: &RunRanking, judgments: &JudgmentMap, k: usize, relevant: &[Grade]) -> Result<MetricReport> {
    let mut per_query = BTreeMap::new();
    for (q, docs) in &run.rankings {
        let j = judged(judgments, q)?;
        let rr = docs
            .iter()
            .take(k)
            .position(|d| j.get(d).is_some_and(|g| relevant.contains(g)))
            .map_or(0.0, |p| 1.0 / (p + 1) as f64);
        per_query.insert(q.clone(), rr);
    }
    Ok(MetricReport {
        metric: "mrr".into(),
        scheme: relevant_label(relevant),
        cutoff: k,
        value: mean(&per_query),
        per_query,
        zero_ideal_count: 0,
    })
}

fn relevant_label(relevant: &[Grade]) -> String {
    let mut s: Vec<&str> = relevant
        .iter()
        .map(|g| match g {
            Grade::Exact => "E",
            Grade::Substitute => "S",
            Grade::Complement => "C",
            Grade::Irrelevant => "I",
        })
        .collect();
    s.sort_unstable();
    format!("relevant={}", s.join(""))
}

/// Linear gain, `log2(r + 1)` discount; the ideal ranking is built from all
/// judged documents of the query.
pub fn ndcg_at_k(run: &RunRanking, judgments: &JudgmentMap, gains: &GainTable, k: usize) -> Result<MetricReport> {
    let mut per_query = BTreeMap::new();
    let mut zero_ideal = 0;
    for (q, docs) in &run.rankings {
        let j = judged(judgments, q)?;
        let dcg: f64 = docs
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, d)| j.get(d).map_or(0.0, |g| gains.gain(*g)) / ((i + 2) as f64).log2())
            .sum();
        let mut ideal: Vec<f64> = j.values().map(|g| gains.gain(*g)).collect();
        ideal.sort_by(|a, b| b.total_cmp(a));
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, g)| g / ((i + 2) as f64).log2())
            .sum();
        let v = if idcg > 0.0 {
            dcg / idcg
        } else {
            zero_ideal += 1;
            0.0
        };
        per_query.insert(q.clone(), v);
    }
    Ok(MetricReport {
        metric: "ndcg".into(),
        scheme: gains.scheme.label().into(),
        cutoff: k,
        value: mean(&per_query),
        per_query,
        zero_ideal_count: zero_ideal,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub mrr: f64,
    pub ndcg: f64,
}

/// The combined report written by the `eval` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scheme: GainScheme,
    pub cutoff: usize,
    pub mrr: f64,
    pub ndcg: f64,
    pub per_query: BTreeMap<String, QueryMetrics>,
    pub zero_ideal_count: usize,
}

/// MRR (first Exact, or any graded-relevant doc when
/// `substitutes_relevant`) and NDCG under `scheme`.
pub fn evaluate(
    run: &RunRanking,
    judgments: &JudgmentMap,
    scheme: GainScheme,
    cutoff: usize,
    substitutes_relevant: bool,
) -> Result<EvalReport> {
    let relevant: &[Grade] = if substitutes_relevant {
        &[Grade::Exact, Grade::Substitute, Grade::Complement]
    } else {
        &[Grade::Exact]
    };
    let mrr = mrr_at_k(run, judgments, cutoff, relevant)?;
    let ndcg = ndcg_at_k(run, judgments, &GainTable::for_scheme(scheme), cutoff)?;
    let per_query = mrr
        .per_query
        .iter()
        .map(|(q, &m)| {
            (
                q.clone(),
                QueryMetrics {
                    mrr: m,
                    ndcg: ndcg.per_query[q],
                },
            )
        })
        .collect();
    Ok(EvalReport {
        scheme,
        cutoff,
        mrr: mrr.value,
        ndcg: ndcg.value,
        per_query,
        zero_ideal_count: ndcg.zero_ideal_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub alignment: f64,
    pub uniformity: f64,
}

fn normalized(e: &Embedding, which: usize) -> Result<Vec<f64>> {
    let norm = e.0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroNorm(which));
    }
    Ok(e.0.iter().map(|v| v / norm).collect())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Alignment: mean squared distance over positive pairs. Uniformity: log of
/// the mean of `exp(-2 · squared distance)` over distinct pairs. Both on
/// L2-normalized copies.
pub fn geometry(pairs: &[(Embedding, Embedding)], all: &[Embedding]) -> Result<GeometryReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("geometry needs at least one positive pair".into()));
    }
    if all.len() < 2 {
        return Err(Error::Empty("geometry needs at least two embeddings".into()));
    }
    let mut align = 0.0;
    for (i, (a, b)) in pairs.iter().enumerate() {
        align += sq_dist(&normalized(a, 2 * i)?, &normalized(b, 2 * i + 1)?);
    }
    let units: Vec<Vec<f64>> = all
        .iter()
        .enumerate()
        .map(|(i, e)| normalized(e, i))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..units.len() {
        for j in i + 1..units.len() {
            total += (-2.0 * sq_dist(&units[i], &units[j])).exp();
            count += 1;
        }
    }
    Ok(GeometryReport {
        alignment: align / pairs.len() as f64,
        uniformity: (total / count as f64).ln(),
    })
}

/// Tab-separated `doc_id, modality, values...`, one line per index row.
pub fn export_embeddings(index: &Index, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for i in 0..index.len() {
        let modality = match index.modalities[i] {
            Modality::Structured => "structured",
            Modality::Unstructured => "unstructured",
        };
        write!(out, "{}\t{modality}", index.ids[i]).expect("write to vec");
        for v in index.row(i) {
            write!(out, "\t{v}").expect("write to vec");
        }
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
