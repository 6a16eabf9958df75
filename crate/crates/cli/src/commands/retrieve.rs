use std::collections::HashSet;
use std::path::PathBuf;

use sdr_core::corpus::{load_pairs, load_queries, write_jsonl, Document, Grade, Query};
use sdr_core::encoder::{encode_batch, Checkpoint, Embedding};
use sdr_core::evalkit::{
    evaluate, export_embeddings, geometry, judgment_map, read_trec_run, write_trec_run, GainScheme, DEFAULT_CUTOFF,
};
use sdr_core::retrieval::{build_index, mine_hard_negatives, search_checked, Index, SearchResult, DEFAULT_POOL};
use sdr_core::trainer::data::{document_ids, query_tokens};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::train::HardNegatives;
use super::{checkpoint, documents, judgments, require, with_section, write_json};
use crate::error::CliError;
use crate::Context;

fn encode_queries(ckpt: &Checkpoint, queries: &[Query], parallel: bool) -> Result<Vec<Embedding>, CliError> {
    let max_len = ckpt.params.config.max_len;
    let ids: Vec<Vec<u32>> = queries
        .iter()
        .map(|q| ckpt.vocab.encode(&query_tokens(&q.text), max_len))
        .collect();
    Ok(encode_batch(&ckpt.params, &ids, parallel)?)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub checkpoint: Option<PathBuf>,
    pub documents: Option<PathBuf>,
    pub output: PathBuf,
    /// Optional TSV export of every row.
    pub export: Option<PathBuf>,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            documents: None,
            output: PathBuf::from("index.bin"),
            export: None,
        }
    }
}

pub fn index(ctx: &mut Context) -> Result<Value, CliError> {
    with_section(ctx, |ctx, cfg: &IndexConfig| {
        let (ckpt, fp) = checkpoint(ctx, require("checkpoint", &cfg.checkpoint)?)?;
        let docs = documents(ctx, require("documents", &cfg.documents)?)?;
        let all: Vec<&Document> = docs.iter().collect();
        let index = build_index(&ckpt.params, &ckpt.vocab, &fp, &all, ctx.parallel)?;
        index.save(ctx.artifacts.output(&cfg.output)?)?;
        if let Some(p) = &cfg.export {
            export_embeddings(&index, ctx.artifacts.output(p)?)?;
        }
        Ok(json!({ "rows": index.len(), "d_model": index.d_model, "fingerprint": fp }))
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub checkpoint: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub k: usize,
    pub output: PathBuf,
    pub tag: String,
    /// Search even when the index was built by a different checkpoint.
    pub force: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            index: None,
            queries: None,
            k: DEFAULT_CUTOFF,
            output: PathBuf::from("run.trec"),
            tag: "sdr".into(),
            force: false,
        }
    }
}

pub fn search(ctx: &mut Context) -> Result<Value, CliError> {
    with_section(ctx, |ctx, cfg: &SearchConfig| {
        if cfg.k == 0 {
            return Err(CliError::Validation("k must be at least 1".into()));
        }
        if cfg.tag.is_empty() || cfg.tag.contains(char::is_whitespace) {
            return Err(CliError::Validation(format!("run tag `{}` must be one non-empty word", cfg.tag)));
        }
        let (ckpt, fp) = checkpoint(ctx, require("checkpoint", &cfg.checkpoint)?)?;
        let index = Index::load(ctx.artifacts.input(require("index", &cfg.index)?)?)?;
        let queries = load_queries(ctx.artifacts.input(require("queries", &cfg.queries)?)?)?;
        let embeddings = encode_queries(&ckpt, &queries, ctx.parallel)?;
        let results: Vec<Vec<SearchResult>> = embeddings
            .iter()
            .map(|e| search_checked(&index, e, &fp, cfg.k, cfg.force))
            .collect::<Result<_, _>>()?;
        write_trec_run(
            ctx.artifacts.output(&cfg.output)?,
            queries.iter().zip(&results).map(|(q, r)| (q.id.as_str(), r.as_slice())),
            &cfg.tag,
        )?;
        Ok(json!({ "queries": queries.len(), "k": cfg.k }))
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MineConfig {
    pub checkpoint: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    /// Exact-graded documents are positives and never mined.
    pub judgments: Option<PathBuf>,
    pub pool: usize,
    pub n: usize,
    pub output: PathBuf,
    pub force: bool,
}

impl Default for MineConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            index: None,
            queries: None,
            judgments: None,
            pool: DEFAULT_POOL,
            n: 1,
            output: PathBuf::from("hard_negatives.jsonl"),
            force: false,
        }
    }
}

pub fn mine(ctx: &mut Context) -> Result<Value, CliError> {
    with_section(ctx, |ctx, cfg: &MineConfig| {
        let seed = ctx.require_seed()?;
        let (ckpt, fp) = checkpoint(ctx, require("checkpoint", &cfg.checkpoint)?)?;
        let index = Index::load(ctx.artifacts.input(require("index", &cfg.index)?)?)?;
        if !cfg.force && fp != index.fingerprint {
            return Err(sdr_core::Error::FingerprintMismatch {
                index: index.fingerprint.clone(),
                query: fp,
            }
            .into());
        }
        let queries = load_queries(ctx.artifacts.input(require("queries", &cfg.queries)?)?)?;
        let judged = judgment_map(&judgments(ctx, require("judgments", &cfg.judgments)?)?);
        let embeddings = encode_queries(&ckpt, &queries, ctx.parallel)?;
        let mut records = Vec::with_capacity(queries.len());
        for (i, (q, e)) in queries.iter().zip(&embeddings).enumerate() {
            let positives: HashSet<String> = judged
                .get(&q.id)
                .map(|m| {
                    m.iter()
                        .filter(|(_, &g)| g == Grade::Exact)
                        .map(|(d, _)| d.clone())
                        .collect()
                })
                .unwrap_or_default();
            let negatives = mine_hard_negatives(&index, e, &positives, cfg.pool, cfg.n, seed.wrapping_add(i as u64))?;
            records.push(HardNegatives {
                query_id: q.id.clone(),
                negatives,
            });
        }
        write_jsonl(ctx.artifacts.output(&cfg.output)?, &records)?;
        let short = records.iter().filter(|r| r.negatives.len() < cfg.n).count();
        Ok(json!({ "queries": records.len(), "n": cfg.n, "pool": cfg.pool, "short": short }))
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub run: Option<PathBuf>,
    /// JSON-lines judgments or a qrels file.
    pub judgments: Option<PathBuf>,
    pub scheme: GainScheme,
    pub cutoff: usize,
    /// Count substitute and complement documents as relevant for MRR.
    pub substitutes_relevant: bool,
    pub output: PathBuf,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            run: None,
            judgments: None,
            scheme: GainScheme::FourClass,
            cutoff: DEFAULT_CUTOFF,
            substitutes_relevant: false,
            output: PathBuf::from("metrics.json"),
        }
    }
}

pub fn eval(ctx: &mut Context) -> Result<Value, CliError> {
    with_section(ctx, |ctx, cfg: &EvalConfig| {
        if cfg.cutoff == 0 {
            return Err(CliError::Validation("cutoff must be at least 1".into()));
        }
        let run = read_trec_run(ctx.artifacts.input(require("run", &cfg.run)?)?)?;
        let judged = judgment_map(&judgments(ctx, require("judgments", &cfg.judgments)?)?);
        let report = evaluate(&run, &judged, cfg.scheme, cfg.cutoff, cfg.substitutes_relevant)?;
        write_json(&ctx.artifacts.output(&cfg.output)?, &report)?;
        Ok(json!({
            "queries": report.per_query.len(),
            "scheme": cfg.scheme,
            "cutoff": cfg.cutoff,
            "mrr": report.mrr,
            "ndcg": report.ndcg,
            "zero_ideal_count": report.zero_ideal_count,
        }))
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub checkpoint: Option<PathBuf>,
    pub documents: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub output: PathBuf,
    /// Optional TSV export of every document embedding.
    pub export: Option<PathBuf>,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            documents: None,
            pairs: None,
            output: PathBuf::from("diagnose.json"),
            export: None,
        }
    }
}

pub fn diagnose(ctx: &mut Context) -> Result<Value, CliError> {
    with_section(ctx, |ctx, cfg: &DiagnoseConfig| {
        let (ckpt, fp) = checkpoint(ctx, require("checkpoint", &cfg.checkpoint)?)?;
        let docs = documents(ctx, require("documents", &cfg.documents)?)?;
        let pairs = load_pairs(ctx.artifacts.input(require("pairs", &cfg.pairs)?)?, &docs)?;
        let all: Vec<&Document> = docs.iter().collect();
        let index = build_index(&ckpt.params, &ckpt.vocab, &fp, &all, ctx.parallel)?;
        let row = |id: &str| index.embedding(index.position(id).expect("pair documents are indexed"));
        let positive: Vec<(Embedding, Embedding)> = pairs.iter().map(|p| (row(&p.passage_id), row(&p.doc_id))).collect();
        let every: Vec<Embedding> = (0..index.len()).map(|i| index.embedding(i)).collect();
        let report = geometry(&positive, &every)?;
        let max_len = ckpt.params.config.max_len;
        let truncated = all
            .iter()
            .filter(|d| document_ids(d, &ckpt.vocab, max_len).len() >= max_len)
            .count();
        let out = json!({
            "fingerprint": fp,
            "pairs": positive.len(),
            "documents": every.len(),
            "alignment": report.alignment,
            "uniformity": report.uniformity,
            "truncated_documents": truncated,
        });
        write_json(&ctx.artifacts.output(&cfg.output)?, &out)?;
        if let Some(p) = &cfg.export {
            export_embeddings(&index, ctx.artifacts.output(p)?)?;
        }
        Ok(out)
    })
}
