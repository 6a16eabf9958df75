//! Binary checkpoint: magic, format version, a JSON header declaring the
//! config, vocabulary and tensor shapes, then every tensor as little-endian
//! `f64` in layout order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{EncoderConfig, ModelParams};
use super::tensor::Tensor;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SDRCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    vocab_size: usize,
    vocabulary: Vec<String>,
    tensors: Vec<TensorEntry>,
}

/// Model weights together with the vocabulary they were trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocabulary,
}

impl Checkpoint {
    pub fn new(params: ModelParams, vocab: Vocabulary) -> Result<Self> {
        if params.vocab_size != vocab.len() {
            return Err(Error::Shape(format!(
                "model has {} embedding rows, vocabulary has {} tokens",
                params.vocab_size,
                vocab.len()
            )));
        }
        Ok(Self { params, vocab })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.params.config,
            vocab_size: self.params.vocab_size,
            vocabulary: self.vocab.learned().to_vec(),
            tensors: self
                .params
                .names()
                .iter()
                .zip(&self.params.tensors)
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: [t.rows, t.cols],
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.params.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fail("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(fail(&format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body_start = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| fail("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..body_start])
            .map_err(|e| fail(&e.to_string()))?;
        let mut offset = body_start;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let [r, c] = entry.shape;
            let n = r * c;
            let end = offset + 8 * n;
            if end > bytes.len() {
                return Err(fail(&format!("truncated tensor {}", entry.name)));
            }
            let data = bytes[offset..end]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            tensors.push(Tensor::from_vec(r, c, data));
            offset = end;
        }
        if offset != bytes.len() {
            return Err(fail("trailing bytes"));
        }
        let params = ModelParams::from_tensors(header.config, header.vocab_size, tensors)?;
        for (declared, actual) in header.tensors.iter().zip(params.names()) {
            if &declared.name != actual {
                return Err(fail(&format!("tensor {} out of order", declared.name)));
            }
        }
        let vocab = Vocabulary::from_learned(header.vocabulary)?;
        Checkpoint::new(params, vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized checkpoint, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex_digest(&self.to_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
