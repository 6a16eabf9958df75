//! Exact inner-product index over document embeddings, top-k search and
//! hard-negative mining.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Modality};
use crate::encoder::tensor::dot;
use crate::encoder::{encode_representation, Embedding, ModelParams, Vocabulary};
use crate::error::{Error, Result};
use crate::trainer::data::document_ids;

const MAGIC: &[u8; 8] = b"SDRINDEX";
pub const INDEX_VERSION: u32 = 1;
pub const DEFAULT_POOL: usize = 100;

/// Row `i` of `matrix` (row-major, `d_model` wide, stored as `f32`) is the
/// embedding of `ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    pub ids: Vec<String>,
    pub modalities: Vec<Modality>,
    pub d_model: usize,
    pub matrix: Vec<f32>,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

impl Index {
    pub fn from_embeddings(
        ids: Vec<String>,
        modalities: Vec<Modality>,
        embeddings: &[Embedding],
        fingerprint: impl Into<String>,
    ) -> Result<Self> {
        if ids.len() != embeddings.len() || ids.len() != modalities.len() {
            return Err(Error::Shape(format!(
                "{} ids, {} modalities, {} embeddings",
                ids.len(),
                modalities.len(),
                embeddings.len()
            )));
        }
        let d_model = embeddings.first().map_or(0, Embedding::len);
        let mut matrix = Vec::with_capacity(ids.len() * d_model);
        for (id, e) in ids.iter().zip(embeddings) {
            if e.len() != d_model {
                return Err(Error::Shape(format!("embedding of `{id}` has length {}", e.len())));
            }
            let row: Vec<f32> = e.0.iter().map(|&v| v as f32).collect();
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("embedding of `{id}`")));
            }
            matrix.extend(row);
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::InvalidArgument(format!("duplicate index id `{dup}`")));
        }
        Ok(Self {
            ids,
            modalities,
            d_model,
            matrix,
            fingerprint: fingerprint.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.d_model..(i + 1) * self.d_model]
    }

    /// Row `i` widened to `f64`.
    pub fn embedding(&self, i: usize) -> Embedding {
        Embedding(self.row(i).iter().map(|&v| f64::from(v)).collect())
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.d_model as u64).to_le_bytes());
        put_str(&mut out, &self.fingerprint);
        for (id, m) in self.ids.iter().zip(&self.modalities) {
            out.push(match m {
                Modality::Structured => 0,
                Modality::Unstructured => 1,
            });
            put_str(&mut out, id);
        }
        for v in &self.matrix {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("index: bad magic".into()));
        }
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::Format(format!("index: unsupported version {version}")));
        }
        let n = r.u64()? as usize;
        let d_model = r.u64()? as usize;
        let fingerprint = r.string()?;
        let mut ids = Vec::with_capacity(n.min(1 << 20));
        let mut modalities = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            modalities.push(match r.take(1)?[0] {
                0 => Modality::Structured,
                1 => Modality::Unstructured,
                m => return Err(Error::Format(format!("index: bad modality byte {m}"))),
            });
            ids.push(r.string()?);
        }
        let need = n
            .checked_mul(d_model)
            .and_then(|x| x.checked_mul(4))
            .ok_or_else(|| Error::Format("index: matrix size overflows".into()))?;
        let matrix = r
            .take(need)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if r.pos != bytes.len() {
            return Err(Error::Format("index: trailing bytes".into()));
        }
        Ok(Self {
            ids,
            modalities,
            d_model,
            matrix,
            fingerprint,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("index: truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("index: invalid UTF-8".into()))
    }
}

/// Encodes every document; rows follow input order.
pub fn build_index(
    params: &ModelParams,
    vocab: &Vocabulary,
    fingerprint: &str,
    docs: &[&Document],
    parallel: bool,
) -> Result<Index> {
    let max_len = params.config.max_len;
    let encode = |d: &&Document| {
        encode_representation(params, &document_ids(d, vocab, max_len))
            .map_err(|e| Error::InvalidArgument(format!("encoding document `{}`: {e}", d.id)))
    };
    let embeddings: Vec<Embedding> = if parallel {
        docs.par_iter().map(encode).collect::<Result<_>>()?
    } else {
        docs.iter().map(encode).collect::<Result<_>>()?
    };
    Index::from_embeddings(
        docs.iter().map(|d| d.id.clone()).collect(),
        docs.iter().map(|d| d.modality).collect(),
        &embeddings,
        fingerprint,
    )
}

/// Top-`k` rows by dot product with `query`; ties by ascending id.
pub fn search(index: &Index, query: &Embedding, k: usize) -> Result<Vec<SearchResult>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if !index.is_empty() && query.len() != index.d_model {
        return Err(Error::Shape(format!(
            "query has dimension {}, index has {}",
            query.len(),
            index.d_model
        )));
    }
    let mut scored: Vec<(f64, usize)> = (0..index.len())
        .map(|i| {
            let row: Vec<f64> = index.row(i).iter().map(|&v| f64::from(v)).collect();
            (dot(&query.0, &row), i)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| index.ids[a.1].cmp(&index.ids[b.1]))
    });
    Ok(scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(r, (score, i))| SearchResult {
            doc_id: index.ids[i].clone(),
            score,
            rank: r + 1,
        })
        .collect())
}

/// [`search`] that refuses a query encoded by a different checkpoint unless
/// `force` is set.
pub fn search_checked(
    index: &Index,
    query: &Embedding,
    query_fingerprint: &str,
    k: usize,
    force: bool,
) -> Result<Vec<SearchResult>> {
    if !force && query_fingerprint != index.fingerprint {
        return Err(Error::FingerprintMismatch {
            index: index.fingerprint.clone(),
            query: query_fingerprint.to_string(),
        });
    }
    search(index, query, k)
}

/// Samples `n` of the top-`pool` results that are not positives, uniformly
/// without replacement; returns every candidate when fewer remain. Output
/// follows rank order.
pub fn mine_hard_negatives(
    index: &Index,
    source: &Embedding,
    positives: &HashSet<String>,
    pool: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if index.is_empty() {
        return Err(Error::Empty("index".into()));
    }
    if n > pool {
        return Err(Error::InvalidArgument(format!("cannot mine {n} negatives from a pool of {pool}")));
    }
    if pool == 0 {
        return Ok(Vec::new());
    }
    let candidates: Vec<String> = search(index, source, pool)?
        .into_iter()
        .map(|r| r.doc_id)
        .filter(|id| !positives.contains(id))
        .collect();
    if candidates.len() <= n {
        return Ok(candidates);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, candidates.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| candidates[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(rows: &[(&str, Vec<f64>)]) -> Index {
        Index::from_embeddings(
            rows.iter().map(|r| r.0.to_string()).collect(),
            vec![Modality::Structured; rows.len()],
            &rows.iter().map(|r| Embedding(r.1.clone())).collect::<Vec<_>>(),
            "fp",
        )
        .unwrap()
    }

    #[test]
    fn three_doc_example() {
        let idx = index(&[("a", vec![2.0]), ("b", vec![5.0]), ("c", vec![-1.0])]);
        let r = search(&idx, &Embedding(vec![1.0]), 2).unwrap();
        assert_eq!(
            r.iter().map(|x| (x.doc_id.as_str(), x.rank)).collect::<Vec<_>>(),
            [("b", 1), ("a", 2)]
        );
        assert_eq!(r[0].score, 5.0);
    }

    #[test]
    fn ties_and_large_k() {
        let idx = index(&[("z", vec![1.0, 0.0]), ("m", vec![1.0, 0.0]), ("a", vec![0.0, 1.0])]);
        let r = search(&idx, &Embedding(vec![1.0, 0.0]), 10).unwrap();
        let ids: Vec<_> = r.iter().map(|x| x.doc_id.as_str()).collect();
        assert_eq!(ids, ["m", "z", "a"]);
        assert_eq!(r.iter().map(|x| x.rank).collect::<Vec<_>>(), [1, 2, 3]);
        assert!(search(&idx, &Embedding(vec![1.0]), 1).is_err());
        assert!(search(&idx, &Embedding(vec![1.0, 0.0]), 0).is_err());
    }

    #[test]
    fn fingerprint_guard() {
        let idx = index(&[("a", vec![1.0])]);
        let q = Embedding(vec![1.0]);
        assert!(matches!(
            search_checked(&idx, &q, "other", 1, false),
            Err(Error::FingerprintMismatch { .. })
        ));
        assert!(search_checked(&idx, &q, "other", 1, true).is_ok());
        assert!(search_checked(&idx, &q, "fp", 1, false).is_ok());
    }

    #[test]
    fn mining_exhaustion() {
        let idx = index(&[
            ("a", vec![1.0]),
            ("b", vec![2.0]),
            ("c", vec![3.0]),
            ("d", vec![4.0]),
            ("e", vec![5.0]),
        ]);
        let pos: HashSet<String> = ["c".to_string()].into();
        let mut got = mine_hard_negatives(&idx, &Embedding(vec![1.0]), &pos, 100, 4, 1).unwrap();
        got.sort();
        assert_eq!(got, ["a", "b", "d", "e"]);
        let empty = Index::from_embeddings(vec![], vec![], &[], "fp").unwrap();
        assert!(mine_hard_negatives(&empty, &Embedding(vec![1.0]), &pos, 100, 1, 1).is_err());
    }

    #[test]
    fn file_round_trip() {
        let mut idx = index(&[("a", vec![1.5, -0.25]), ("b", vec![0.0, 3.0])]);
        idx.modalities[1] = Modality::Unstructured;
        let bytes = idx.to_bytes();
        assert_eq!(Index::from_bytes(&bytes).unwrap(), idx);
        assert!(Index::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
