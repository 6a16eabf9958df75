//! Word-level tokenizer shared by entity extraction, masking and the model.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizeMode {
    /// Case preserved; every punctuation character is its own token.
    Code,
    /// Lowercased words; punctuation split as in code mode.
    Natural,
}

/// A token with its byte range in the original text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSpan {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_word_char(c: char, mode: TokenizeMode) -> bool {
    c.is_alphanumeric() || c == '_' || (mode == TokenizeMode::Code && c == '$')
}

/// Splits raw text. Sentinel spellings such as `<e_0>` come out as ordinary
/// punctuation and word tokens, so raw text never yields a sentinel.
pub fn tokenize_spans(text: &str, mode: TokenizeMode) -> Vec<TokenSpan> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(start, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let end = if is_word_char(c, mode) {
            let mut end = start;
            while let Some(&(i, ch)) = chars.peek() {
                if !is_word_char(ch, mode) {
                    break;
                }
                end = i + ch.len_utf8();
                chars.next();
            }
            end
        } else {
            chars.next();
            start + c.len_utf8()
        };
        let raw = &text[start..end];
        out.push(TokenSpan {
            text: match mode {
                TokenizeMode::Code => raw.to_string(),
                TokenizeMode::Natural => raw.to_lowercase(),
            },
            start,
            end,
        });
    }
    out
}

pub fn tokenize(text: &str, mode: TokenizeMode) -> Vec<String> {
    tokenize_spans(text, mode)
        .into_iter()
        .map(|t| t.text)
        .collect()
}
