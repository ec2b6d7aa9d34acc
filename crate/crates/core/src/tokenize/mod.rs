//! Tokenizer plugins and bag-of-words construction.

mod baseline;
mod bow;
mod subprocess;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use baseline::{BaselineTokenizer, UserDictionary};
pub use bow::{
    build_bow, read_bow_jsonl, read_sequences_jsonl, read_vocab_tsv, write_bow_jsonl,
    write_freq_csv, write_sequences_jsonl, write_vocab_tsv, BowDoc, BowOptions, BowOutput,
    Vocabulary,
};
pub use subprocess::SubprocessTokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pos {
    Noun,
    Other,
}

impl Pos {
    /// Maps external tag names; `NOUN`, `名詞` and `PROPN` are nouns.
    pub fn from_tag(tag: &str) -> Pos {
        let head = tag.split([',', '-', '/']).next().unwrap_or("").trim();
        match head.to_ascii_uppercase().as_str() {
            "NOUN" | "PROPN" | "名詞" => Pos::Noun,
            _ => Pos::Other,
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pos::Noun => "NOUN",
            Pos::Other => "OTHER",
        })
    }
}

impl FromStr for Pos {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NOUN" => Ok(Pos::Noun),
            "OTHER" => Ok(Pos::Other),
            _ => Err(Error::Config(format!("unknown part of speech {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub normalized: String,
    pub pos: Pos,
}

impl Token {
    pub fn new(surface: impl Into<String>, normalized: impl Into<String>, pos: Pos) -> Self {
        Token {
            surface: surface.into(),
            normalized: normalized.into(),
            pos,
        }
    }
}

/// Segments cleaned text into tokens in surface order.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Result<Vec<Token>>;
}

impl<T: Tokenizer + ?Sized> Tokenizer for Box<T> {
    fn tokenize(&self, text: &str) -> Result<Vec<Token>> {
        (**self).tokenize(text)
    }
}
