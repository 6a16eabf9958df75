//! Turning documents and masked examples into id sequences, batch sampling
//! and the step loops for pretraining and finetuning.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{AdamConfig, OptimizerState};
use super::{train_step, Batch, FinetuneBatch, FinetuneItem, NegativeMode, PretrainBatch, PretrainItem, PretrainOptions, TrainMode};
use crate::corpus::{DocKind, Document, TrainingPair};
use crate::encoder::{tokenize, ModelParams, TokenizeMode, Vocabulary};
use crate::error::{Error, Result};
use crate::masker::MaskedExample;
use crate::structparse::body_mode;

/// Title (if any, natural-language rules) followed by the body.
pub fn document_tokens(doc: &Document) -> Vec<String> {
    let mut out = doc
        .title
        .as_deref()
        .map(|t| tokenize(t, TokenizeMode::Natural))
        .unwrap_or_default();
    out.extend(tokenize(&doc.body, body_mode(doc.kind)));
    out
}

pub fn query_tokens(text: &str) -> Vec<String> {
    tokenize(text, body_mode(DocKind::Query))
}

/// Vocabulary over the given documents plus any extra token streams.
pub fn corpus_vocabulary<'a>(
    docs: impl IntoIterator<Item = &'a Document>,
    extra: &[Vec<String>],
    min_count: usize,
) -> Vocabulary {
    let mut streams: Vec<Vec<String>> = docs.into_iter().map(document_tokens).collect();
    streams.extend(extra.iter().cloned());
    Vocabulary::build(streams.iter(), min_count)
}

pub fn document_ids(doc: &Document, vocab: &Vocabulary, max_len: usize) -> Vec<u32> {
    vocab.encode(&document_tokens(doc), max_len)
}

/// Builds one pretraining item per pair. Documents without a masked example
/// (no entities) get an empty target and are left out of the MEP term.
pub fn pretrain_items<'a>(
    pairs: &[TrainingPair],
    resolve: impl Fn(&str) -> Option<&'a Document>,
    masked: &HashMap<String, MaskedExample>,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<PretrainItem>> {
    pairs
        .iter()
        .map(|pair| {
            let lookup = |id: &str| {
                resolve(id).ok_or_else(|| Error::InvalidArgument(format!("pair references unknown document `{id}`")))
            };
            let passage = lookup(&pair.passage_id)?;
            let doc = lookup(&pair.doc_id)?;
            let doc_ids = document_ids(doc, vocab, max_len);
            let (masked_source, target) = match masked.get(&pair.doc_id) {
                Some(ex) if !ex.target.is_empty() => {
                    let mut t = vocab.ids(&ex.target);
                    t.truncate(max_len);
                    (vocab.encode(&ex.source, max_len), t)
                }
                _ => (doc_ids.clone(), Vec::new()),
            };
            Ok(PretrainItem {
                passage: document_ids(passage, vocab, max_len),
                doc: doc_ids,
                masked_source,
                target,
            })
        })
        .collect()
}

/// Shuffled index batches: each epoch is a fresh permutation cut into
/// batches of `batch_size` (a trailing batch of fewer than 2 items is
/// dropped). Corpora smaller than a batch yield the whole corpus each step.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    n: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
    queue: Vec<Vec<usize>>,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("no training items".into()));
        }
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(Self {
            n,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queue: Vec::new(),
        })
    }

    fn refill(&mut self) {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut self.rng);
        let mut batches: Vec<Vec<usize>> = order
            .chunks(self.batch_size)
            .filter(|c| c.len() >= 2 || self.n < 2)
            .map(<[usize]>::to_vec)
            .collect();
        batches.reverse();
        self.queue = batches;
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.queue.is_empty() {
            self.refill();
        }
        self.queue.pop().expect("refill produces at least one batch")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_proportion: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 16,
            lr: 1e-3,
            warmup_proportion: super::optim::DEFAULT_WARMUP_PROPORTION,
            clip_norm: Some(super::optim::DEFAULT_CLIP_NORM),
            seed: 0,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            warmup_proportion: self.warmup_proportion,
            clip_norm: self.clip_norm,
            ..AdamConfig::new(self.lr, self.steps)
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub l_sda: f64,
    pub l_mep: f64,
    pub l_dr: f64,
    pub l_total: f64,
    pub l_mep_per_token: f64,
    pub lr: f64,
}

fn run_loop(
    params: &mut ModelParams,
    config: &TrainConfig,
    n_items: usize,
    mode: TrainMode,
    make_batch: impl Fn(&[usize]) -> Batch,
    mut log: impl FnMut(&StepLog),
) -> Result<OptimizerState> {
    let mut opt = OptimizerState::new(params, config.adam());
    let mut sampler = BatchSampler::new(n_items, config.batch_size, config.seed)?;
    for _ in 0..config.steps {
        let batch = make_batch(&sampler.next_batch());
        let (r, lr) = train_step(params, &mut opt, &batch, mode, config.parallel)?;
        log(&StepLog {
            step: opt.step,
            l_sda: r.l_sda,
            l_mep: r.l_mep,
            l_dr: r.l_dr,
            l_total: r.l_total,
            l_mep_per_token: r.l_mep_per_token,
            lr,
        });
    }
    Ok(opt)
}

/// Runs `config.steps` pretraining steps. With MEP as the only objective,
/// items without entity targets are dropped up front.
pub fn pretrain(
    params: &mut ModelParams,
    items: &[PretrainItem],
    options: PretrainOptions,
    config: &TrainConfig,
    log: impl FnMut(&StepLog),
) -> Result<OptimizerState> {
    let usable: Vec<&PretrainItem> = if options.sda {
        items.iter().collect()
    } else {
        items.iter().filter(|i| !i.target.is_empty()).collect()
    };
    let make = |idx: &[usize]| {
        Batch::Pretrain(PretrainBatch {
            items: idx.iter().map(|&i| usable[i].clone()).collect(),
        })
    };
    run_loop(params, config, usable.len(), TrainMode::Pretrain(options), make, log)
}

pub fn finetune(
    params: &mut ModelParams,
    items: &[FinetuneItem],
    negatives: NegativeMode,
    config: &TrainConfig,
    log: impl FnMut(&StepLog),
) -> Result<OptimizerState> {
    let make = |idx: &[usize]| {
        Batch::Finetune(FinetuneBatch {
            items: idx.iter().map(|&i| items[i].clone()).collect(),
        })
    };
    run_loop(params, config, items.len(), TrainMode::Finetune(negatives), make, log)
}
