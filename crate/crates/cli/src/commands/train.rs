use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sdr_core::corpus::{build_pairs, load_jsonl, load_pairs, load_queries, Document, Grade, TrainingPair};
use sdr_core::encoder::{Checkpoint, EncoderConfig, ModelParams};
use sdr_core::masker::MaskedExample;
use sdr_core::trainer::data::{corpus_vocabulary, document_ids, pretrain_items, query_tokens, TrainConfig};
use sdr_core::trainer::{
    self, grad_check as run_grad_check, Batch, FinetuneBatch, FinetuneItem, NegativeMode, PretrainBatch, PretrainOptions,
    TrainMode,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{checkpoint, documents, judgments, require, with_section, write_json};
use crate::error::CliError;
use crate::manifest::with_suffix;
use crate::Context;

/// Hard negatives for one query, as written by `mine`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardNegatives {
    pub query_id: String,
    pub negatives: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Optimization {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_proportion: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for Optimization {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: t.steps,
            batch_size: t.batch_size,
            lr: t.lr,
            warmup_proportion: t.warmup_proportion,
            clip_norm: t.clip_norm.unwrap_or(0.0),
        }
    }
}

impl Optimization {
    fn train_config(&self, seed: u64, parallel: bool) -> Result<TrainConfig, CliError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CliError::Validation(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.warmup_proportion) {
            return Err(CliError::Validation("warmup_proportion must lie in [0, 1]".into()));
        }
        if self.batch_size < 2 {
            return Err(CliError::Validation("batch_size must be at least 2".into()));
        }
        Ok(TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            lr: self.lr,
            warmup_proportion: self.warmup_proportion,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            seed,
            parallel,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub documents: Option<PathBuf>,
    /// Explicit (passage, document) pairs; built from document links when absent.
    pub pairs: Option<PathBuf>,
    /// Masked examples from `mask`; required when `mep` is on.
    pub masked: Option<PathBuf>,
    /// Query files whose tokens join the vocabulary.
    pub vocab_queries: Vec<PathBuf>,
    pub min_count: usize,
    /// Continue from this checkpoint (its vocabulary and architecture).
    pub init: Option<PathBuf>,
    pub output: PathBuf,
    pub log: PathBuf,
    pub model: EncoderConfig,
    #[serde(flatten)]
    pub optimization: Optimization,
    pub sda: bool,
    pub mep: bool,
    pub sda_on_masked: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        let o = PretrainOptions::default();
        Self {
            documents: None,
            pairs: None,
            masked: None,
            vocab_queries: Vec::new(),
            min_count: 1,
            init: None,
            output: PathBuf::from("model.ckpt"),
            log: PathBuf::from("train_log.jsonl"),
            model: EncoderConfig::default(),
            optimization: Optimization::default(),
            sda: o.sda,
            mep: o.mep,
            sda_on_masked: o.sda_on_masked,
        }
    }
}

fn open_log(ctx: &mut Context, path: &Path) -> Result<BufWriter<File>, CliError> {
    let path = ctx.artifacts.output(path)?;
    let f = File::create(&path).map_err(|e| sdr_core::Error::Io { path, source: e })?;
    Ok(BufWriter::new(f))
}

fn log_writer<'a, T: Serialize>(
    out: &'a mut BufWriter<File>,
    failed: &'a mut Option<std::io::Error>,
) -> impl FnMut(&T) + 'a {
    move |entry: &T| {
        if failed.is_none() {
            let line = serde_json::to_string(entry).expect("log entry serializes");
            if let Err(e) = writeln!(out, "{line}") {
                *failed = Some(e);
            }
        }
    }
}

fn finish_log(out: BufWriter<File>, failed: Option<std::io::Error>, path: &Path) -> Result<(), CliError> {
    let io = |e| sdr_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    if let Some(e) = failed {
        return Err(io(e).into());
    }
    out.into_inner().map_err(|e| io(e.into_error()))?;
    Ok(())
}

fn load_masked(ctx: &mut Context, path: &Path) -> Result<HashMap<String, MaskedExample>, CliError> {
    let path = ctx.artifacts.input(path)?;
    let list: Vec<MaskedExample> = load_jsonl(&path)?;
    Ok(list.into_iter().map(|m| (m.doc_id.clone(), m)).collect())
}

pub fn pretrain(ctx: &mut Context) -> Result<Value, CliError> {
    with_section(ctx, |ctx, cfg: &PretrainConfig| {
        let seed = ctx.require_seed()?;
        let options = PretrainOptions {
            sda: cfg.sda,
            mep: cfg.mep,
            sda_on_masked: cfg.sda_on_masked,
        };
        if !options.sda && !options.mep {
            return Err(CliError::Validation("at least one of `sda` and `mep` must be enabled".into()));
        }
        let train = cfg.optimization.train_config(seed, ctx.parallel)?;
        let docs = documents(ctx, require("documents", &cfg.documents)?)?;

        let (pairs, bullets): (Vec<TrainingPair>, Vec<Document>) = match &cfg.pairs {
            Some(p) => (load_pairs(ctx.artifacts.input(p)?, &docs)?, Vec::new()),
            None => {
                let set = build_pairs(&docs, seed);
                (set.pairs, set.bullet_docs)
            }
        };
        if pairs.len() < 2 {
            return Err(CliError::Validation(format!("pretraining needs at least 2 pairs, found {}", pairs.len())));
        }
        let masked = match &cfg.masked {
            Some(p) => load_masked(ctx, p)?,
            None if options.mep || options.sda_on_masked => {
                return Err(CliError::Validation("`masked` is required when `mep` or `sda_on_masked` is on".into()))
            }
            None => HashMap::new(),
        };

        let (mut params, vocab) = match &cfg.init {
            Some(p) => {
                let (c, _) = checkpoint(ctx, p)?;
                (c.params, c.vocab)
            }
            None => {
                let mut extra = Vec::new();
                for q in &cfg.vocab_queries {
                    let path = ctx.artifacts.input(q)?;
                    extra.extend(load_queries(&path)?.iter().map(|q| query_tokens(&q.text)));
                }
                let vocab = corpus_vocabulary(docs.iter().chain(&bullets), &extra, cfg.min_count.max(1));
                let model = EncoderConfig { seed, ..cfg.model };
                (ModelParams::init(model, vocab.len())?, vocab)
            }
        };
        let resolve = |id: &str| docs.get(id).or_else(|| bullets.iter().find(|d| d.id == id));
        let items = pretrain_items(&pairs, resolve, &masked, &vocab, params.config.max_len)?;
        let with_target = items.iter().filter(|i| !i.target.is_empty()).count();

        ctx.artifacts.set_manifest_path(with_suffix(&cfg.output, ".manifest.json"));
        let mut out = open_log(ctx, &cfg.log)?;
        let mut failed = None;
        let mut last = None;
        {
            let mut write = log_writer(&mut out, &mut failed);
            trainer::data::pretrain(&mut params, &items, options, &train, |s| {
                write(s);
                last = Some(*s);
            })?;
        }
        finish_log(out, failed, &cfg.log)?;

        let ckpt = Checkpoint::new(params, vocab)?;
        ckpt.save(ctx.artifacts.output(&cfg.output)?)?;
        Ok(json!({
            "pairs": items.len(),
            "mep_items": with_target,
            "vocab_size": ckpt.vocab.len(),
            "parameters": ckpt.params.num_scalars(),
            "fingerprint": ckpt.fingerprint(),
            "final": last,
        }))
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub documents: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    /// Exact-graded documents are the positives.
    pub judgments: Option<PathBuf>,
    /// Output of `mine`.
    pub hard_negatives: Option<PathBuf>,
    /// Hard negatives kept per query.
    pub n_hard: usize,
    pub negatives: NegativeMode,
    pub output: PathBuf,
    pub log: PathBuf,
    #[serde(flatten)]
    pub optimization: Optimization,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            documents: None,
            init: None,
            queries: None,
            judgments: None,
            hard_negatives: None,
            n_hard: 1,
            negatives: NegativeMode::InbatchHard,
            output: PathBuf::from("finetuned.ckpt"),
            log: PathBuf::from("finetune_log.jsonl"),
            optimization: Optimization::default(),
        }
    }
}

pub fn finetune(ctx: &mut Context) -> Result<Value, CliError> {
    with_section(ctx, |ctx, cfg: &FinetuneConfig| {
        let seed = ctx.require_seed()?;
        let train = cfg.optimization.train_config(seed, ctx.parallel)?;
        let docs = documents(ctx, require("documents", &cfg.documents)?)?;
        let (ckpt, _) = checkpoint(ctx, require("init", &cfg.init)?)?;
        let queries = load_queries(ctx.artifacts.input(require("queries", &cfg.queries)?)?)?;
        let judged = judgments(ctx, require("judgments", &cfg.judgments)?)?;
        let needs_hard = cfg.negatives != NegativeMode::Inbatch;
        let hard: HashMap<String, Vec<String>> = match &cfg.hard_negatives {
            Some(p) => {
                let path = ctx.artifacts.input(p)?;
                load_jsonl::<HardNegatives>(&path)?
                    .into_iter()
                    .map(|h| (h.query_id, h.negatives))
                    .collect()
            }
            None if needs_hard => {
                return Err(CliError::Validation(format!(
                    "negative mode {:?} needs `hard_negatives`",
                    cfg.negatives
                )))
            }
            None => HashMap::new(),
        };
        if needs_hard && cfg.n_hard == 0 {
            return Err(CliError::Validation("n_hard must be at least 1 with hard negatives".into()));
        }

        let max_len = ckpt.params.config.max_len;
        let vocab = &ckpt.vocab;
        let doc_ids = |id: &str| -> Result<Vec<u32>, CliError> {
            let d = docs
                .get(id)
                .ok_or_else(|| CliError::Validation(format!("unknown document `{id}`")))?;
            Ok(document_ids(d, vocab, max_len))
        };
        let mut items = Vec::new();
        let mut without_negatives = 0usize;
        for q in &queries {
            let positives: Vec<&str> = judged
                .iter()
                .filter(|j| j.query_id == q.id && j.grade == Grade::Exact)
                .map(|j| j.doc_id.as_str())
                .collect();
            let negs: Vec<Vec<u32>> = hard
                .get(&q.id)
                .map(|n| n.iter().take(cfg.n_hard).map(|id| doc_ids(id)).collect())
                .transpose()?
                .unwrap_or_default();
            if needs_hard && negs.is_empty() && !positives.is_empty() {
                without_negatives += 1;
                continue;
            }
            let query = vocab.encode(&query_tokens(&q.text), max_len);
            for p in positives {
                items.push(FinetuneItem {
                    query: query.clone(),
                    positive: doc_ids(p)?,
                    hard_negatives: if needs_hard { negs.clone() } else { Vec::new() },
                });
            }
        }
        if items.len() < 2 {
            return Err(CliError::Validation(format!(
                "fine-tuning needs at least 2 (query, positive) items, found {}",
                items.len()
            )));
        }

        let mut params = ckpt.params.clone();
        ctx.artifacts.set_manifest_path(with_suffix(&cfg.output, ".manifest.json"));
        let mut out = open_log(ctx, &cfg.log)?;
        let mut failed = None;
        let mut last = None;
        {
            let mut write = log_writer(&mut out, &mut failed);
            trainer::data::finetune(&mut params, &items, cfg.negatives, &train, |s| {
                write(s);
                last = Some(*s);
            })?;
        }
        finish_log(out, failed, &cfg.log)?;
        let tuned = Checkpoint::new(params, ckpt.vocab.clone())?;
        tuned.save(ctx.artifacts.output(&cfg.output)?)?;
        Ok(json!({
            "items": items.len(),
            "skipped_without_negatives": without_negatives,
            "negatives": cfg.negatives,
            "fingerprint": tuned.fingerprint(),
            "final": last,
        }))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Sda,
    Mep,
    Joint,
    Dr,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub documents: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub masked: Option<PathBuf>,
    pub objective: Objective,
    pub model: EncoderConfig,
    pub batch_size: usize,
    pub epsilon: f64,
    pub sample: usize,
    pub tolerance: f64,
    pub output: PathBuf,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            documents: None,
            pairs: None,
            masked: None,
            objective: Objective::Joint,
            model: EncoderConfig {
                d_model: 8,
                n_layers: 1,
                n_heads: 2,
                ffn_dim: 16,
                max_len: 32,
                seed: 0,
            },
            batch_size: 4,
            epsilon: 1e-4,
            sample: 64,
            tolerance: 1e-4,
            output: PathBuf::from("grad_check.json"),
        }
    }
}

pub fn grad_check(ctx: &mut Context) -> Result<Value, CliError> {
    with_section(ctx, |ctx, cfg: &GradCheckConfig| {
        let seed = ctx.require_seed()?;
        if cfg.batch_size < 2 {
            return Err(CliError::Validation("batch_size must be at least 2".into()));
        }
        let docs = documents(ctx, require("documents", &cfg.documents)?)?;
        let pairs = load_pairs(ctx.artifacts.input(require("pairs", &cfg.pairs)?)?, &docs)?;
        let needs_mask = matches!(cfg.objective, Objective::Mep | Objective::Joint);
        let masked = match &cfg.masked {
            Some(p) => load_masked(ctx, p)?,
            None if needs_mask => return Err(CliError::Validation("`masked` is required for mep and joint".into())),
            None => HashMap::new(),
        };
        let mut pairs: Vec<TrainingPair> = pairs;
        if needs_mask {
            pairs.retain(|p| masked.get(&p.doc_id).is_some_and(|m| !m.target.is_empty()));
        }
        pairs.truncate(cfg.batch_size);
        if pairs.len() < 2 {
            return Err(CliError::Validation("grad-check needs at least 2 usable pairs".into()));
        }
        let used: HashSet<&str> = pairs.iter().flat_map(|p| [p.passage_id.as_str(), p.doc_id.as_str()]).collect();
        let extra: Vec<Vec<String>> = pairs
            .iter()
            .filter_map(|p| masked.get(&p.doc_id))
            .flat_map(|m| [m.source.clone(), m.target.clone()])
            .collect();
        let vocab = corpus_vocabulary(docs.iter().filter(|d| used.contains(d.id.as_str())), &extra, 1);
        let model = EncoderConfig { seed, ..cfg.model };
        let params = ModelParams::init(model, vocab.len())?;
        let max_len = model.max_len;
        let resolve = |id: &str| docs.get(id);
        let items = pretrain_items(&pairs, resolve, &masked, &vocab, max_len)?;
        let (batch, mode) = match cfg.objective {
            Objective::Dr => {
                let n = items.len();
                let ft = items
                    .iter()
                    .enumerate()
                    .map(|(i, it)| FinetuneItem {
                        query: it.passage.clone(),
                        positive: it.doc.clone(),
                        hard_negatives: vec![items[(i + 1) % n].doc.clone()],
                    })
                    .collect();
                (
                    Batch::Finetune(FinetuneBatch { items: ft }),
                    TrainMode::Finetune(NegativeMode::InbatchHard),
                )
            }
            o => {
                let options = PretrainOptions {
                    sda: o != Objective::Mep,
                    mep: o != Objective::Sda,
                    sda_on_masked: false,
                };
                (Batch::Pretrain(PretrainBatch { items }), TrainMode::Pretrain(options))
            }
        };
        let report = run_grad_check(&params, &batch, mode, cfg.epsilon, cfg.sample, seed)?;
        write_json(&ctx.artifacts.output(&cfg.output)?, &report)?;
        let passed = report.max_rel_error < cfg.tolerance;
        let summary = json!({
            "objective": cfg.objective,
            "checked": report.entries.len(),
            "max_rel_error": report.max_rel_error,
            "tolerance": cfg.tolerance,
            "passed": passed,
        });
        if !passed {
            return Err(CliError::Runtime(format!(
                "gradient check failed: max relative error {:.3e} >= {:.1e}",
                report.max_rel_error, cfg.tolerance
            )));
        }
        Ok(summary)
    })
}
