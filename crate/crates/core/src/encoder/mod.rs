//! Tokenization, the encoder–decoder network and its representations.
//!
//! A sequence is represented by the decoder's hidden state at position 0
//! after a single step on the start token; similarity is the raw dot product.
//! Representations are never normalized here.

pub mod checkpoint;
pub mod graph;
pub mod model;
pub mod tensor;
pub mod tokenizer;
pub mod vocab;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use checkpoint::Checkpoint;
pub use graph::Graph;
pub use model::{EncoderConfig, ModelParams};
pub use tensor::Tensor;
pub use tokenizer::{tokenize, tokenize_spans, TokenizeMode};
pub use vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Unnormalized dot product.
pub fn similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "embedding lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    Ok(tensor::dot(&a.0, &b.0))
}

pub fn encode_representation(params: &ModelParams, ids: &[u32]) -> Result<Embedding> {
    let mut g = Graph::new(&params.tensors);
    let h = params.representation_graph(&mut g, ids)?;
    Ok(Embedding(g.value(h).data.clone()))
}

/// Encodes each sequence independently; output order follows input order.
pub fn encode_batch(params: &ModelParams, batch: &[Vec<u32>], parallel: bool) -> Result<Vec<Embedding>> {
    if parallel {
        batch
            .par_iter()
            .map(|ids| encode_representation(params, ids))
            .collect()
    } else {
        batch
            .iter()
            .map(|ids| encode_representation(params, ids))
            .collect()
    }
}

/// Log-probability of each target token given the source and target prefix.
pub fn decode_teacher_forced(params: &ModelParams, source: &[u32], target: &[u32]) -> Result<Vec<f64>> {
    let mut g = Graph::new(&params.tensors);
    let lp = params.target_logprob_graph(&mut g, source, target)?;
    Ok(g.value(lp).data.clone())
}

/// Text to model input ids: tokenize, map through `vocab`, append the end
/// token, truncate to the model's `max_len`.
pub fn text_to_ids(text: &str, mode: TokenizeMode, vocab: &Vocabulary, max_len: usize) -> Vec<u32> {
    vocab.encode(&tokenize(text, mode), max_len)
}
