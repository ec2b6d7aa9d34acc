//! Opinion mining over video comment corpora: corpus filtering, noun
//! bag-of-words, LDA topics with coherence-based model selection, lexicon
//! and LLM sentiment, monthly and per-topic aggregation, and word
//! co-occurrence networks.

pub mod aggregate;
pub mod coherence;
pub mod cooccur;
pub mod corpus;
pub mod error;
pub mod lda;
pub mod sentiment;
pub mod stub;
pub mod synth;
pub mod time;
pub mod tokenize;

pub use error::{Error, Result};
