use std::collections::HashMap;
use std::path::PathBuf;

use sdr_core::corpus::{generate_synthetic, load_jsonl, write_jsonl, write_qrels, Judgment, Modality, Query, Split, TrainingPair};
use sdr_core::masker::{mask_entities, MaskedExample, SentinelVocab, SENTINEL_COUNT};
use sdr_core::structparse::{entity_stats, extract_entities, EntitySet};
use sdr_core::trainer::span_mask_ablation;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{documents, require, with_section, write_json};
use crate::error::CliError;
use crate::Context;

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub out_dir: PathBuf,
    pub n_pairs: usize,
    pub vocab_size: usize,
    /// Pairs held out from training; their queries form the evaluation set.
    pub n_heldout: usize,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("data"),
            n_pairs: 256,
            vocab_size: 16,
            n_heldout: 64,
        }
    }
}

pub fn gen_data(ctx: &mut Context) -> Result<Value, CliError> {
    with_section(ctx, |ctx, cfg: &GenDataConfig| {
        let seed = ctx.require_seed()?;
        let corpus = generate_synthetic(seed, cfg.n_pairs, cfg.vocab_size)?;
        let code_ids: Vec<String> = corpus.pairs.iter().map(|p| p.doc_id.clone()).collect();
        let split = Split::partition(&code_ids, 0, cfg.n_heldout, seed)?;
        let heldout: std::collections::HashSet<&str> = split.test.iter().map(String::as_str).collect();

        // Query i belongs to pair i.
        let mut sets: [(Vec<TrainingPair>, Vec<Query>, Vec<Judgment>); 2] = Default::default();
        let exact_of: HashMap<&str, &str> = corpus
            .judgments
            .iter()
            .filter(|j| j.grade == sdr_core::corpus::Grade::Exact)
            .map(|j| (j.query_id.as_str(), j.doc_id.as_str()))
            .collect();
        for (pair, query) in corpus.pairs.iter().zip(&corpus.queries) {
            let slot = usize::from(heldout.contains(pair.doc_id.as_str()));
            debug_assert_eq!(exact_of[query.id.as_str()], pair.doc_id);
            sets[slot].0.push(pair.clone());
            sets[slot].1.push(query.clone());
        }
        for j in &corpus.judgments {
            let slot = usize::from(heldout.contains(exact_of[j.query_id.as_str()]));
            sets[slot].2.push(j.clone());
        }
        let [(train_pairs, train_queries, train_judgments), (test_pairs, test_queries, test_judgments)] = sets;

        let dir = &cfg.out_dir;
        let a = &mut ctx.artifacts;
        a.set_manifest_path(dir.join("manifest.json"));
        write_jsonl(a.output(dir.join("documents.jsonl"))?, &corpus.documents)?;
        write_jsonl(a.output(dir.join("pairs.jsonl"))?, &train_pairs)?;
        write_jsonl(a.output(dir.join("heldout_pairs.jsonl"))?, &test_pairs)?;
        write_jsonl(a.output(dir.join("train_queries.jsonl"))?, &train_queries)?;
        write_jsonl(a.output(dir.join("queries.jsonl"))?, &test_queries)?;
        write_jsonl(a.output(dir.join("train_judgments.jsonl"))?, &train_judgments)?;
        write_jsonl(a.output(dir.join("judgments.jsonl"))?, &test_judgments)?;
        write_qrels(a.output(dir.join("qrels.txt"))?, &test_judgments)?;
        write_json(&a.output(dir.join("split.json"))?, &split)?;
        Ok(json!({
            "documents": corpus.documents.len(),
            "train_pairs": train_pairs.len(),
            "heldout_pairs": test_pairs.len(),
            "queries": test_queries.len(),
            "judgments": test_judgments.len(),
        }))
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub documents: Option<PathBuf>,
    pub output: PathBuf,
    /// Entity-coverage report (per document and per kind).
    pub stats: Option<PathBuf>,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            documents: None,
            output: PathBuf::from("entities.jsonl"),
            stats: None,
        }
    }
}

pub fn extract(ctx: &mut Context) -> Result<Value, CliError> {
    with_section(ctx, |ctx, cfg: &ExtractConfig| {
        let docs = documents(ctx, require("documents", &cfg.documents)?)?;
        let sets: Vec<EntitySet> = docs
            .structured()
            .map(extract_entities)
            .collect::<Result<_, _>>()?;
        let spans: usize = sets.iter().map(|s| s.spans.len()).sum();
        let empty = sets.iter().filter(|s| s.is_empty()).count();
        write_jsonl(ctx.artifacts.output(&cfg.output)?, &sets)?;
        if let Some(p) = &cfg.stats {
            let stats = entity_stats(docs.iter(), &sets);
            write_json(&ctx.artifacts.output(p)?, &stats)?;
        }
        Ok(json!({ "documents": sets.len(), "spans": spans, "without_entities": empty }))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Masking {
    Entity,
    Span,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub documents: Option<PathBuf>,
    /// Required for entity masking.
    pub entities: Option<PathBuf>,
    pub output: PathBuf,
    pub max_entities: usize,
    pub masking: Masking,
    pub span_rate: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            documents: None,
            entities: None,
            output: PathBuf::from("masked.jsonl"),
            max_entities: SENTINEL_COUNT,
            masking: Masking::Entity,
            span_rate: 0.15,
        }
    }
}

pub fn mask(ctx: &mut Context) -> Result<Value, CliError> {
    with_section(ctx, |ctx, cfg: &MaskConfig| {
        let docs = documents(ctx, require("documents", &cfg.documents)?)?;
        let mut out: Vec<MaskedExample> = Vec::new();
        let mut skipped = Vec::new();
        match cfg.masking {
            Masking::Entity => {
                let path = ctx.artifacts.input(require("entities", &cfg.entities)?)?;
                let sets: Vec<EntitySet> = load_jsonl(&path)?;
                let by_id: HashMap<&str, &EntitySet> = sets.iter().map(|s| (s.doc_id.as_str(), s)).collect();
                let vocab = SentinelVocab::default();
                for doc in docs.structured() {
                    match by_id.get(doc.id.as_str()) {
                        Some(set) if !set.is_empty() => {
                            set.validate(&doc.body)?;
                            out.push(mask_entities(doc, set, &vocab, cfg.max_entities)?);
                        }
                        Some(_) => skipped.push(doc.id.clone()),
                        None => {
                            return Err(CliError::Validation(format!("no entity record for document `{}`", doc.id)))
                        }
                    }
                }
            }
            Masking::Span => {
                let seed = ctx.require_seed()?;
                for (i, doc) in docs.iter().filter(|d| d.modality == Modality::Structured).enumerate() {
                    let ex = span_mask_ablation(doc, cfg.span_rate, seed.wrapping_add(i as u64))?;
                    if ex.target.is_empty() {
                        skipped.push(doc.id.clone());
                    } else {
                        out.push(ex);
                    }
                }
            }
        }
        write_jsonl(ctx.artifacts.output(&cfg.output)?, &out)?;
        Ok(json!({ "masked": out.len(), "skipped": skipped.len(), "skipped_ids": skipped }))
    })
}
