use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::masker::{sentinel, SENTINEL_COUNT};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const START_ID: u32 = 2;
pub const END_ID: u32 = 3;
pub const FIRST_SENTINEL_ID: u32 = 4;
/// Number of reserved ids preceding learned tokens.
pub const RESERVED: usize = 4 + SENTINEL_COUNT;

const SPECIAL: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Word-level token <-> id map with a fixed reserved block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    fn reserved_tokens() -> Vec<String> {
        SPECIAL
            .iter()
            .map(|s| s.to_string())
            .chain((0..SENTINEL_COUNT).map(sentinel))
            .collect()
    }

    /// Builds from learned tokens listed in id order (reserved block excluded).
    pub fn from_learned(learned: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens = Self::reserved_tokens();
        tokens.extend(learned);
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("invalid vocabulary token {t:?}")));
            }
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    /// Counts tokens over `streams` and keeps those seen at least `min_count`
    /// times, most frequent first (ties broken lexicographically).
    pub fn build<'a, I, S>(streams: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = &'a String>,
    {
        let reserved: std::collections::HashSet<String> =
            Self::reserved_tokens().into_iter().collect();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for stream in streams {
            for t in stream {
                if !reserved.contains(t) {
                    *counts.entry(t.as_str()).or_default() += 1;
                }
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_learned(kept.into_iter().map(|(t, _)| t.to_string()))
            .expect("tokenizer output is whitespace-free and deduplicated")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens
            .get(id as usize)
            .map_or("<unk>", String::as_str)
    }

    pub fn learned(&self) -> &[String] {
        &self.tokens[RESERVED..]
    }

    /// Ids for `tokens` followed by the end token, truncated to `max_len`
    /// with the end token kept last.
    pub fn encode(&self, tokens: &[String], max_len: usize) -> Vec<u32> {
        let keep = tokens.len().min(max_len.saturating_sub(1));
        let mut ids: Vec<u32> = tokens[..keep].iter().map(|t| self.id(t)).collect();
        ids.push(END_ID);
        ids
    }

    /// Ids without an end token and without truncation.
    pub fn ids(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// One learned token per line; line `n` (0-based) is id `RESERVED + n`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.learned().join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_learned(text.lines().map(str::to_string))
    }
}
