//! Random contiguous span corruption, the ablation baseline for entity masking.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Document;
use crate::encoder::tokenize;
use crate::error::{Error, Result};
use crate::masker::{sentinel, MaskedExample, SENTINEL_COUNT};
use crate::structparse::body_mode;

pub const MEAN_SPAN_LENGTH: f64 = 3.0;

/// Splits `total` into `parts` positive integers uniformly over compositions.
fn composition(rng: &mut impl Rng, total: usize, parts: usize) -> Vec<usize> {
    debug_assert!(parts >= 1 && parts <= total);
    let mut cuts: Vec<usize> = sample(rng, total - 1, parts - 1)
        .into_iter()
        .map(|c| c + 1)
        .collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(total)) {
        out.push(c - prev);
        prev = c;
    }
    out
}

/// Masks about `rate` of `tokens` with contiguous spans (mean length 3),
/// each span replaced by the next sentinel.
pub fn span_mask_tokens(doc_id: &str, tokens: &[String], rate: f64, rng: &mut impl Rng) -> Result<MaskedExample> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidArgument(format!("mask rate must be in (0, 1), got {rate}")));
    }
    let n = tokens.len();
    let n_mask = (((n as f64) * rate).round() as usize).min(n.saturating_sub(1));
    let mut source = Vec::new();
    let mut target = Vec::new();
    let mut mapping = BTreeMap::new();
    if n_mask == 0 {
        return Ok(MaskedExample {
            doc_id: doc_id.to_string(),
            source: tokens.to_vec(),
            target,
            mapping,
        });
    }
    let n_keep = n - n_mask;
    let n_spans = ((n_mask as f64 / MEAN_SPAN_LENGTH).round() as usize)
        .clamp(1, n_mask)
        .min(n_keep + 1)
        .min(SENTINEL_COUNT);
    let span_lens = composition(rng, n_mask, n_spans);
    // Kept runs: n_spans + 1 gaps, inner ones non-empty so spans stay separate.
    let inner = n_spans - 1;
    let free = n_keep - inner;
    let mut gaps = composition(rng, free + n_spans + 1, n_spans + 1);
    gaps.iter_mut().for_each(|g| *g -= 1);
    for g in gaps.iter_mut().take(n_spans).skip(1) {
        *g += 1;
    }
    let mut pos = 0;
    for (i, &len) in span_lens.iter().enumerate() {
        source.extend_from_slice(&tokens[pos..pos + gaps[i]]);
        pos += gaps[i];
        let s = sentinel(i);
        source.push(s.clone());
        target.push(s);
        target.extend_from_slice(&tokens[pos..pos + len]);
        mapping.insert(format!("span{i}:{pos}-{}", pos + len), i);
        pos += len;
    }
    source.extend_from_slice(&tokens[pos..]);
    debug_assert_eq!(pos + gaps[n_spans], n);
    Ok(MaskedExample {
        doc_id: doc_id.to_string(),
        source,
        target,
        mapping,
    })
}

/// Span-masks the tokenized body of `doc` under `seed`.
pub fn span_mask_ablation(doc: &Document, rate: f64, seed: u64) -> Result<MaskedExample> {
    let tokens = tokenize(&doc.body, body_mode(doc.kind));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    span_mask_tokens(&doc.id, &tokens, rate, &mut rng)
}
