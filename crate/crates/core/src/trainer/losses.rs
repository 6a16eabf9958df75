//! Contrastive and generative losses evaluated on plain numbers.
//!
//! These operate on score matrices and log-probabilities so they can be
//! checked against closed forms independently of the network.

use crate::encoder::tensor::{log_sum_exp, Tensor};
use crate::encoder::Embedding;
use crate::error::{Error, Result};

/// Mean over rows of `-log softmax(scores[i])[positive[i]]`, restricted to
/// the candidates `allowed(i, j)`. Returns the loss and `d loss / d scores`
/// (zero outside the allowed set).
pub fn contrastive_from_scores(
    scores: &Tensor,
    positive: &[usize],
    allowed: impl Fn(usize, usize) -> bool,
) -> Result<(f64, Tensor)> {
    if scores.rows != positive.len() || scores.rows == 0 {
        return Err(Error::Shape(format!(
            "{} score rows for {} positives",
            scores.rows,
            positive.len()
        )));
    }
    let b = scores.rows as f64;
    let mut grad = Tensor::zeros(scores.rows, scores.cols);
    let mut total = 0.0;
    for (i, &pos) in positive.iter().enumerate() {
        let row: Vec<f64> = (0..scores.cols)
            .map(|j| {
                if j == pos || allowed(i, j) {
                    scores.get(i, j)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let lse = log_sum_exp(&row);
        total += lse - row[pos];
        for (j, &s) in row.iter().enumerate() {
            let p = if s == f64::NEG_INFINITY {
                0.0
            } else {
                (s - lse).exp()
            };
            grad.data[i * scores.cols + j] = (p - f64::from(u8::from(j == pos))) / b;
        }
    }
    Ok((total / b, grad))
}

fn stack(embs: &[Embedding]) -> Result<Tensor> {
    let d = embs.first().map_or(0, Embedding::len);
    if embs.iter().any(|e| e.len() != d) {
        return Err(Error::Shape("embeddings of unequal length".into()));
    }
    Ok(Tensor::from_vec(
        embs.len(),
        d,
        embs.iter().flat_map(|e| e.0.iter().copied()).collect(),
    ))
}

/// Score matrix `a · bᵀ` of two embedding lists.
pub fn score_matrix(a: &[Embedding], b: &[Embedding]) -> Result<Tensor> {
    let (ta, tb) = (stack(a)?, stack(b)?);
    if ta.cols != tb.cols && !a.is_empty() && !b.is_empty() {
        return Err(Error::Shape(format!("dimensions {} and {}", ta.cols, tb.cols)));
    }
    let mut out = Tensor::zeros(ta.rows, tb.rows);
    crate::encoder::tensor::matmul_bt_acc(&ta, &tb, &mut out);
    Ok(out)
}

/// In-batch contrastive alignment loss between passages and their documents.
pub fn loss_sda(passages: &[Embedding], docs: &[Embedding]) -> Result<f64> {
    if passages.len() != docs.len() {
        return Err(Error::Shape(format!(
            "{} passages for {} documents",
            passages.len(),
            docs.len()
        )));
    }
    if passages.is_empty() {
        return Err(Error::Empty("alignment batch".into()));
    }
    let scores = score_matrix(passages, docs)?;
    let positives: Vec<usize> = (0..passages.len()).collect();
    Ok(contrastive_from_scores(&scores, &positives, |_, _| true)?.0)
}

/// Retrieval loss: each query against its positive, the other queries'
/// positives (when `in_batch`) and every listed hard negative of its own.
pub fn loss_dr(
    queries: &[Embedding],
    positives: &[Embedding],
    hard_negatives: &[Vec<Embedding>],
    in_batch: bool,
) -> Result<f64> {
    let b = queries.len();
    if positives.len() != b || hard_negatives.len() != b {
        return Err(Error::Shape(format!(
            "{b} queries, {} positives, {} hard-negative lists",
            positives.len(),
            hard_negatives.len()
        )));
    }
    if b == 0 {
        return Err(Error::Empty("retrieval batch".into()));
    }
    let mut docs: Vec<Embedding> = positives.to_vec();
    let mut owner = Vec::new();
    for (i, hs) in hard_negatives.iter().enumerate() {
        docs.extend(hs.iter().cloned());
        owner.extend(std::iter::repeat(i).take(hs.len()));
    }
    let allowed = |i: usize, j: usize| if j < b { in_batch || j == i } else { owner[j - b] == i };
    if (0..b).any(|i| !(0..docs.len()).any(|j| j != i && allowed(i, j))) {
        return Err(Error::InvalidArgument("a query has no negatives".into()));
    }
    let scores = score_matrix(queries, &docs)?;
    let positive: Vec<usize> = (0..b).collect();
    Ok(contrastive_from_scores(&scores, &positive, allowed)?.0)
}

/// Summed and per-token masked entity prediction loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MepLoss {
    pub sum: f64,
    pub tokens: usize,
    pub per_token_mean: f64,
}

/// `Σ_j -log P(t_j | ...)` over every position of every item.
pub fn loss_mep(target_logprobs: &[Vec<f64>]) -> Result<MepLoss> {
    let tokens: usize = target_logprobs.iter().map(Vec::len).sum();
    if tokens == 0 {
        return Err(Error::Empty(
            "no masked entity targets in batch; exclude zero-entity documents".into(),
        ));
    }
    let sum: f64 = target_logprobs.iter().flatten().map(|lp| -lp).sum();
    Ok(MepLoss {
        sum,
        tokens,
        per_token_mean: sum / tokens as f64,
    })
}
