//! Deterministic text segmentation.
//!
//! The built-in tokenizer lowercases, applies NFKC, and splits into maximal
//! alphanumeric runs; every other visible character becomes its own token.
//! Whitespace and control characters are dropped, so no token ever contains
//! the ngram separator `0x1F`.

use rayon::prelude::*;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Joins tokens inside an ngram key. Never produced by a tokenizer.
pub const NGRAM_SEPARATOR: char = '\u{1f}';

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenSeq(pub Vec<String>);

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

/// A text front end. Vocabulary indices are tied to the tokenizer that
/// produced them, so models record [`Tokenizer::id`].
pub trait Tokenizer: Send + Sync {
    fn id(&self) -> &str;

    fn tokenize(&self, text: &str) -> TokenSeq;

    fn tokenize_batch(&self, texts: &[&str]) -> Vec<TokenSeq> {
        texts.par_iter().map(|t| self.tokenize(t)).collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimpleTokenizer;

impl SimpleTokenizer {
    pub const ID: &'static str = "simple-v1";
}

impl Tokenizer for SimpleTokenizer {
    fn id(&self) -> &str {
        Self::ID
    }

    fn tokenize(&self, text: &str) -> TokenSeq {
        if text.is_ascii() {
            return TokenSeq(tokenize_ascii(text.as_bytes()));
        }
        let normalized: String = text.nfkc().flat_map(char::to_lowercase).nfkc().collect();
        TokenSeq(segment(&normalized))
    }
}

fn tokenize_ascii(bytes: &[u8]) -> Vec<String> {
    let mut tokens = Vec::with_capacity(bytes.len() / 5 + 1);
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b.is_ascii_alphanumeric() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                i += 1;
            }
            let mut word = String::with_capacity(i - start);
            word.extend(bytes[start..i].iter().map(|c| c.to_ascii_lowercase() as char));
            tokens.push(word);
            continue;
        }
        if b.is_ascii_graphic() {
            tokens.push((b as char).to_string());
        }
        i += 1;
    }
    tokens
}

fn segment(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() || (!word.is_empty() && is_combining_mark(c)) {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() && !c.is_control() {
            tokens.push(c.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

pub fn tokenize(text: &str) -> TokenSeq {
    SimpleTokenizer.tokenize(text)
}

pub fn tokenize_batch(texts: &[&str]) -> Vec<TokenSeq> {
    SimpleTokenizer.tokenize_batch(texts)
}

/// Resolves a tokenizer id recorded in a model file.
pub fn tokenizer_for_id(id: &str) -> Result<Box<dyn Tokenizer>> {
    match id {
        SimpleTokenizer::ID => Ok(Box::new(SimpleTokenizer)),
        other => Err(Error::Config(format!("unknown tokenizer id `{other}`"))),
    }
}
