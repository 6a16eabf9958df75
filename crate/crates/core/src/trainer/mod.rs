//! Pretraining (alignment + masked entity prediction) and retrieval
//! finetuning objectives, the optimizer step and gradient verification.
//!
//! Gradients are computed per sequence: every sequence gets its own autodiff
//! graph, the batch-level contrastive loss is evaluated on the resulting
//! embeddings, and its gradient with respect to each embedding seeds that
//! sequence's backward pass. Per-sequence parameter gradients are summed in
//! input order, so results do not depend on thread scheduling.

pub mod data;
pub mod gradcheck;
pub mod losses;
pub mod optim;
pub mod span_mask;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::graph::{Graph, NodeId};
use crate::encoder::tensor::Tensor;
use crate::encoder::{Embedding, ModelParams};
use crate::error::{Error, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use losses::{contrastive_from_scores, loss_dr, loss_mep, loss_sda, score_matrix, MepLoss};
pub use optim::{AdamConfig, OptimizerState};
pub use span_mask::span_mask_ablation;

/// One pretraining item. `target` is empty for documents without entities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PretrainItem {
    pub passage: Vec<u32>,
    pub doc: Vec<u32>,
    pub masked_source: Vec<u32>,
    pub target: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PretrainBatch {
    pub items: Vec<PretrainItem>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinetuneItem {
    pub query: Vec<u32>,
    pub positive: Vec<u32>,
    pub hard_negatives: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinetuneBatch {
    pub items: Vec<FinetuneItem>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Batch {
    Pretrain(PretrainBatch),
    Finetune(FinetuneBatch),
}

/// Which pretraining terms are active, and what the alignment term encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainOptions {
    pub sda: bool,
    pub mep: bool,
    /// Encode the masked source (instead of the original document) for the
    /// alignment term.
    pub sda_on_masked: bool,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self {
            sda: true,
            mep: true,
            sda_on_masked: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeMode {
    /// Other in-batch positives only; hard negatives ignored.
    Inbatch,
    /// In-batch positives plus every hard negative in the batch.
    InbatchHard,
    /// Each query's own hard negatives only.
    HardOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TrainMode {
    Pretrain(PretrainOptions),
    Finetune(NegativeMode),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_sda: f64,
    pub l_mep: f64,
    pub l_total: f64,
    pub l_dr: f64,
    /// Masked-entity target tokens in the batch.
    pub mep_token_count: usize,
    /// Mean MEP loss per target token, logged alongside the per-item sum.
    pub l_mep_per_token: f64,
    /// Items skipped by MEP for having no entities.
    pub mep_skipped: usize,
}

/// Parameter gradients, one tensor per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    fn zeros_like(params: &ModelParams) -> Self {
        Self(
            params
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows, t.cols))
                .collect(),
        )
    }

    fn accumulate(&mut self, partial: Vec<Option<Tensor>>) {
        for (acc, g) in self.0.iter_mut().zip(partial) {
            if let Some(g) = g {
                acc.add_assign(&g);
            }
        }
    }
}

struct Forward<'p> {
    graph: Graph<'p>,
    node: NodeId,
}

fn forward_all<'p, F>(
    params: &'p ModelParams,
    inputs: &[&[u32]],
    parallel: bool,
    build: F,
) -> Result<Vec<Forward<'p>>>
where
    F: Fn(&mut Graph<'p>, &[u32]) -> Result<NodeId> + Sync,
{
    let run = |ids: &&[u32]| -> Result<Forward<'p>> {
        let mut graph = Graph::new(&params.tensors);
        let node = build(&mut graph, ids)?;
        Ok(Forward { graph, node })
    };
    if parallel {
        inputs.par_iter().map(run).collect()
    } else {
        inputs.iter().map(run).collect()
    }
}

fn backward_all(
    forwards: &[Forward<'_>],
    seeds: Vec<Tensor>,
    parallel: bool,
    into: &mut Gradients,
) {
    let run = |(f, seed): (&Forward<'_>, Tensor)| f.graph.backward(&[(f.node, seed)]);
    let partials: Vec<Vec<Option<Tensor>>> = if parallel {
        forwards.par_iter().zip(seeds).map(run).collect()
    } else {
        forwards.iter().zip(seeds).map(run).collect()
    };
    for p in partials {
        into.accumulate(p);
    }
}

fn embeddings(forwards: &[Forward<'_>]) -> Vec<Embedding> {
    forwards
        .iter()
        .map(|f| Embedding(f.graph.value(f.node).data.clone()))
        .collect()
}

/// Seeds for the two sides of a contrastive loss with gradient `g` over
/// scores `left · rightᵀ`.
fn contrastive_seeds(g: &Tensor, left: &[Embedding], right: &[Embedding]) -> (Vec<Tensor>, Vec<Tensor>) {
    let d = left.first().map_or(0, Embedding::len);
    let left_seeds = (0..left.len())
        .map(|i| {
            let mut s = Tensor::zeros(1, d);
            for (j, r) in right.iter().enumerate() {
                let w = g.get(i, j);
                s.data.iter_mut().zip(&r.0).for_each(|(a, b)| *a += w * b);
            }
            s
        })
        .collect();
    let right_seeds = (0..right.len())
        .map(|j| {
            let mut s = Tensor::zeros(1, d);
            for (i, l) in left.iter().enumerate() {
                let w = g.get(i, j);
                s.data.iter_mut().zip(&l.0).for_each(|(a, b)| *a += w * b);
            }
            s
        })
        .collect();
    (left_seeds, right_seeds)
}

fn representation<'p>(params: &'p ModelParams) -> impl Fn(&mut Graph<'p>, &[u32]) -> Result<NodeId> + Sync + 'p {
    move |g, ids| params.representation_graph(g, ids)
}

/// Loss and, when `with_grads`, parameter gradients for a pretraining batch.
pub fn pretrain_loss(
    params: &ModelParams,
    batch: &PretrainBatch,
    options: PretrainOptions,
    parallel: bool,
    with_grads: bool,
) -> Result<(LossReport, Option<Gradients>)> {
    if !options.sda && !options.mep {
        return Err(Error::InvalidArgument("no pretraining objective enabled".into()));
    }
    let mut grads = with_grads.then(|| Gradients::zeros_like(params));
    let mut report = LossReport::default();

    if options.sda {
        if batch.items.len() < 2 {
            return Err(Error::InvalidArgument(
                "contrastive alignment needs at least 2 items per batch".into(),
            ));
        }
        let passages: Vec<&[u32]> = batch.items.iter().map(|i| i.passage.as_slice()).collect();
        let docs: Vec<&[u32]> = batch
            .items
            .iter()
            .map(|i| {
                if options.sda_on_masked {
                    i.masked_source.as_slice()
                } else {
                    i.doc.as_slice()
                }
            })
            .collect();
        let pf = forward_all(params, &passages, parallel, representation(params))?;
        let df = forward_all(params, &docs, parallel, representation(params))?;
        let (pe, de) = (embeddings(&pf), embeddings(&df));
        let scores = score_matrix(&pe, &de)?;
        let positives: Vec<usize> = (0..pe.len()).collect();
        let (loss, g) = contrastive_from_scores(&scores, &positives, |_, _| true)?;
        report.l_sda = loss;
        if let Some(grads) = grads.as_mut() {
            let (ps, ds) = contrastive_seeds(&g, &pe, &de);
            backward_all(&pf, ps, parallel, grads);
            backward_all(&df, ds, parallel, grads);
        }
    }

    if options.mep {
        let items: Vec<&PretrainItem> = batch.items.iter().filter(|i| !i.target.is_empty()).collect();
        report.mep_skipped = batch.items.len() - items.len();
        if items.is_empty() {
            return Err(Error::Empty(
                "every item in the batch has an empty entity target; filter zero-entity documents"
                    .into(),
            ));
        }
        let sources: Vec<&[u32]> = items.iter().map(|i| i.masked_source.as_slice()).collect();
        let targets: Vec<&[u32]> = items.iter().map(|i| i.target.as_slice()).collect();
        let build = |g: &mut Graph<'_>, k: usize| params.target_logprob_graph(g, sources[k], targets[k]);
        let run = |k: usize| -> Result<(Graph<'_>, NodeId)> {
            let mut g = Graph::new(&params.tensors);
            let node = build(&mut g, k)?;
            Ok((g, node))
        };
        let forwards: Vec<(Graph<'_>, NodeId)> = if parallel {
            (0..items.len()).into_par_iter().map(run).collect::<Result<_>>()?
        } else {
            (0..items.len()).map(run).collect::<Result<_>>()?
        };
        let logprobs: Vec<Vec<f64>> = forwards
            .iter()
            .map(|(g, n)| g.value(*n).data.clone())
            .collect();
        let mep = loss_mep(&logprobs)?;
        let n_items = items.len() as f64;
        report.l_mep = mep.sum / n_items;
        report.mep_token_count = mep.tokens;
        report.l_mep_per_token = mep.per_token_mean;
        if let Some(grads) = grads.as_mut() {
            let fw: Vec<Forward<'_>> = forwards
                .into_iter()
                .map(|(graph, node)| Forward { graph, node })
                .collect();
            let seeds = logprobs
                .iter()
                .map(|lp| Tensor::filled(lp.len(), 1, -1.0 / n_items))
                .collect();
            backward_all(&fw, seeds, parallel, grads);
        }
    }

    report.l_total = report.l_sda + report.l_mep;
    Ok((report, grads))
}

/// Retrieval loss with in-batch and/or hard negatives.
pub fn finetune_loss(
    params: &ModelParams,
    batch: &FinetuneBatch,
    negatives: NegativeMode,
    parallel: bool,
    with_grads: bool,
) -> Result<(LossReport, Option<Gradients>)> {
    let b = batch.items.len();
    if b == 0 {
        return Err(Error::Empty("finetuning batch".into()));
    }
    // Column layout: positives 0..b, then each item's hard negatives in order.
    let mut owner = Vec::new();
    let mut docs: Vec<&[u32]> = batch.items.iter().map(|i| i.positive.as_slice()).collect();
    for (i, item) in batch.items.iter().enumerate() {
        for h in &item.hard_negatives {
            docs.push(h);
            owner.push(i);
        }
    }
    let allowed = |i: usize, j: usize| -> bool {
        if j < b {
            j == i || negatives != NegativeMode::HardOnly
        } else {
            match negatives {
                NegativeMode::Inbatch => false,
                NegativeMode::InbatchHard => true,
                NegativeMode::HardOnly => owner[j - b] == i,
            }
        }
    };
    for i in 0..b {
        let n_neg = (0..docs.len()).filter(|&j| j != i && allowed(i, j)).count();
        if n_neg == 0 {
            return Err(Error::InvalidArgument(format!(
                "query {i} of the batch has no negatives"
            )));
        }
    }

    let queries: Vec<&[u32]> = batch.items.iter().map(|i| i.query.as_slice()).collect();
    let qf = forward_all(params, &queries, parallel, representation(params))?;
    let df = forward_all(params, &docs, parallel, representation(params))?;
    let (qe, de) = (embeddings(&qf), embeddings(&df));
    let scores = score_matrix(&qe, &de)?;
    let positives: Vec<usize> = (0..b).collect();
    let (loss, g) = contrastive_from_scores(&scores, &positives, allowed)?;
    let mut grads = None;
    if with_grads {
        let mut acc = Gradients::zeros_like(params);
        let (qs, ds) = contrastive_seeds(&g, &qe, &de);
        backward_all(&qf, qs, parallel, &mut acc);
        backward_all(&df, ds, parallel, &mut acc);
        grads = Some(acc);
    }
    let report = LossReport {
        l_dr: loss,
        l_total: loss,
        ..LossReport::default()
    };
    Ok((report, grads))
}

/// Loss (and optionally gradients) for any batch under `mode`.
pub fn batch_loss(
    params: &ModelParams,
    batch: &Batch,
    mode: TrainMode,
    parallel: bool,
    with_grads: bool,
) -> Result<(LossReport, Option<Gradients>)> {
    match (batch, mode) {
        (Batch::Pretrain(b), TrainMode::Pretrain(o)) => pretrain_loss(params, b, o, parallel, with_grads),
        (Batch::Finetune(b), TrainMode::Finetune(n)) => finetune_loss(params, b, n, parallel, with_grads),
        _ => Err(Error::InvalidArgument("batch kind does not match training mode".into())),
    }
}

/// Computes gradients on `batch` and applies one optimizer step.
///
/// On error (including non-finite loss or gradients) neither `params` nor
/// `opt` is modified.
pub fn train_step(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    batch: &Batch,
    mode: TrainMode,
    parallel: bool,
) -> Result<(LossReport, f64)> {
    if !opt.matches(params) {
        return Err(Error::Shape("optimizer state does not match parameters".into()));
    }
    let (report, grads) = batch_loss(params, batch, mode, parallel, true)?;
    if !report.l_total.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let mut grads = grads.expect("gradients requested").0;
    if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
        return Err(Error::NonFinite(format!("gradient of {}", params.names()[i])));
    }
    let lr = opt.apply(params, &mut grads)?;
    Ok((report, lr))
}
