//! WordPiece tokenizer with character offsets.
//!
//! Text is split on whitespace and punctuation, optionally lowercased, and
//! each word is segmented by greedy longest match against the vocabulary,
//! with non-initial pieces carrying a continuation prefix (`##` by default).
//! A word that cannot be segmented becomes a single `[UNK]`.
//!
//! Offsets are measured in Unicode scalar values, end exclusive, matching the
//! corpus mention offsets.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CLS: u32 = 0;
pub const SEP: u32 = 1;
pub const MASK: u32 = 2;
pub const PAD: u32 = 3;
pub const UNK: u32 = 4;

/// Reserved tokens, in id order.
pub const RESERVED: [&str; 5] = ["[CLS]", "[SEP]", "[MASK]", "[PAD]", "[UNK]"];

pub const ENTITY_START: &str = "[E]";
pub const ENTITY_END: &str = "[/E]";
pub const HEAD_START: &str = "[H]";
pub const HEAD_END: &str = "[/H]";
pub const TAIL_START: &str = "[T]";
pub const TAIL_END: &str = "[/T]";

/// Marker tokens used by the fine-tuning tasks.
pub const MARKERS: [&str; 6] = [
    ENTITY_START,
    ENTITY_END,
    HEAD_START,
    HEAD_END,
    TAIL_START,
    TAIL_END,
];

pub const DEFAULT_CONTINUATION: &str = "##";
const MAX_WORD_CHARS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    /// First character covered.
    pub start: usize,
    /// One past the last character covered.
    pub end: usize,
}

#[derive(Clone, Debug)]
pub struct WordPiece {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    special: HashSet<u32>,
    continuation: String,
    lowercase: bool,
}

impl WordPiece {
    /// Builds a tokenizer from an id-ordered token list. The first five tokens
    /// must be the reserved tokens in [`RESERVED`] order.
    pub fn from_tokens(tokens: Vec<String>, continuation: &str, lowercase: bool) -> Result<Self> {
        for (id, want) in RESERVED.iter().enumerate() {
            match tokens.get(id) {
                Some(t) if t == want => {}
                other => {
                    return Err(Error::data(
                        format!("vocab line {}", id + 1),
                        format!("expected reserved token {want}, found {other:?}"),
                    ))
                }
            }
        }
        if continuation.is_empty() {
            return Err(Error::arg("continuation prefix must be non-empty"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        let mut special = HashSet::new();
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::data(format!("vocab line {}", id + 1), "empty token"));
            }
            if index.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::data(
                    format!("vocab line {}", id + 1),
                    format!("duplicate token {tok:?}"),
                ));
            }
            if tok.len() > 2 && tok.starts_with('[') && tok.ends_with(']') {
                special.insert(id as u32);
            }
        }
        Ok(Self {
            tokens,
            index,
            special,
            continuation: continuation.to_string(),
            lowercase,
        })
    }

    /// Parses a vocab file body: one token per line.
    pub fn parse(text: &str) -> Result<Self> {
        let tokens = text
            .lines()
            .map(|l| l.trim_end_matches('\r').to_string())
            .filter(|l| !l.is_empty())
            .collect();
        Self::from_tokens(tokens, DEFAULT_CONTINUATION, true)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Data { location, message } => {
                Error::data(format!("{}: {location}", path.display()), message)
            }
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut body = self.tokens.join("\n");
        body.push('\n');
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn with_continuation(mut self, prefix: &str) -> Result<Self> {
        if prefix.is_empty() {
            return Err(Error::arg("continuation prefix must be non-empty"));
        }
        self.continuation = prefix.to_string();
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Looks up a bracketed special token, failing with a data error when the
    /// vocabulary lacks it.
    pub fn require(&self, token: &str) -> Result<u32> {
        self.token_id(token)
            .ok_or_else(|| Error::data("tokenizer vocab", format!("missing token {token}")))
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Reserved and marker tokens; never selected by MLM masking.
    pub fn is_special(&self, id: u32) -> bool {
        self.special.contains(&id)
    }

    /// Number of ids that MLM random replacement may draw from.
    pub fn ordinary_ids(&self) -> Vec<u32> {
        (0..self.tokens.len() as u32)
            .filter(|id| !self.is_special(*id))
            .collect()
    }

    pub fn encode(&self, text: &str) -> Vec<Token> {
        let chars: Vec<char> = text
            .chars()
            .map(|c| {
                if self.lowercase {
                    let mut lower = c.to_lowercase();
                    match (lower.next(), lower.next()) {
                        (Some(l), None) => l,
                        _ => c,
                    }
                } else {
                    c
                }
            })
            .collect();
        let mut out = Vec::new();
        for (start, end) in split_words(&chars) {
            self.segment_word(&chars[start..end], start, &mut out);
        }
        out
    }

    pub fn encode_ids(&self, text: &str) -> Vec<u32> {
        self.encode(text).into_iter().map(|t| t.id).collect()
    }

    fn segment_word(&self, word: &[char], offset: usize, out: &mut Vec<Token>) {
        if word.len() > MAX_WORD_CHARS {
            out.push(Token {
                id: UNK,
                start: offset,
                end: offset + word.len(),
            });
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        let mut buf = String::new();
        while start < word.len() {
            let mut found = None;
            let mut end = word.len();
            while end > start {
                buf.clear();
                if start > 0 {
                    buf.push_str(&self.continuation);
                }
                buf.extend(&word[start..end]);
                if let Some(&id) = self.index.get(buf.as_str()) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(Token {
                        id,
                        start: offset + start,
                        end: offset + end,
                    });
                    start = end;
                }
                None => {
                    out.push(Token {
                        id: UNK,
                        start: offset,
                        end: offset + word.len(),
                    });
                    return;
                }
            }
        }
        out.extend(pieces);
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace())
}

/// Character ranges of words: maximal non-whitespace runs, with every
/// punctuation character split out on its own.
fn split_words(chars: &[char]) -> Vec<(usize, usize)> {
    let mut words = Vec::new();
    let mut start = None;
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() || is_punctuation(c) {
            if let Some(s) = start.take() {
                words.push((s, i));
            }
            if is_punctuation(c) {
                words.push((i, i + 1));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        words.push((s, chars.len()));
    }
    words
}

/// The small tokenizer vocabulary shipped with the crate, used by the token
/// mode of the concept word filter and by examples.
pub fn toy() -> WordPiece {
    WordPiece::parse(include_str!("../data/toy_vocab.txt")).expect("bundled vocab is valid")
}
