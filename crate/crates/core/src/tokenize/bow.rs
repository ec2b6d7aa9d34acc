use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Pos, Tokenizer};
use crate::error::{Error, Result};

/// Term ↔ id bijection with document and corpus frequencies.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, u32>,
    doc_freq: Vec<u32>,
    corpus_freq: Vec<u64>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: u32) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn doc_freq(&self, id: u32) -> u32 {
        self.doc_freq[id as usize]
    }

    pub fn corpus_freq(&self, id: u32) -> u64 {
        self.corpus_freq[id as usize]
    }

    /// SHA-256 over the terms in id order; identifies the id space.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.terms {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Builds a vocabulary from explicit rows; ids are the row positions.
    pub fn from_rows(rows: Vec<(String, u32, u64)>) -> Result<Self> {
        let mut vocab = Vocabulary::default();
        for (i, (term, df, cf)) in rows.into_iter().enumerate() {
            if vocab.index.insert(term.clone(), i as u32).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary term {term:?}")));
            }
            vocab.terms.push(term);
            vocab.doc_freq.push(df);
            vocab.corpus_freq.push(cf);
        }
        Ok(vocab)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BowDoc {
    pub doc_id: String,
    pub counts: BTreeMap<u32, u32>,
    #[serde(skip)]
    pub total_tokens: u32,
}

impl BowDoc {
    pub fn new(doc_id: impl Into<String>, counts: BTreeMap<u32, u32>) -> Self {
        let total_tokens = counts.values().sum();
        BowDoc {
            doc_id: doc_id.into(),
            counts,
            total_tokens,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.total_tokens == 0
    }
}

#[derive(Debug, Clone)]
pub struct BowOptions {
    pub keep_pos: BTreeSet<Pos>,
    pub min_corpus_count: u64,
    pub stopwords: HashSet<String>,
}

impl Default for BowOptions {
    fn default() -> Self {
        BowOptions {
            keep_pos: BTreeSet::from([Pos::Noun]),
            min_corpus_count: 1,
            stopwords: HashSet::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BowOutput {
    pub vocab: Vocabulary,
    pub docs: Vec<BowDoc>,
    /// Kept term ids per document in surface order (the reference text for coherence).
    pub sequences: Vec<Vec<u32>>,
    /// Ids of documents with no counted tokens.
    pub empty_docs: Vec<String>,
}

/// Tokenizes `docs` and counts kept tokens. Term ids follow first occurrence
/// across the corpus in document order.
pub fn build_bow<T: Tokenizer + ?Sized>(
    docs: &[(String, String)],
    tokenizer: &T,
    options: &BowOptions,
) -> Result<BowOutput> {
    if options.min_corpus_count < 1 {
        return Err(Error::Config("min_corpus_count must be at least 1".into()));
    }
    let filtered: Vec<Vec<String>> = docs
        .par_iter()
        .map(|(_, text)| {
            tokenizer.tokenize(text).map(|tokens| {
                tokens
                    .into_iter()
                    .filter(|t| options.keep_pos.contains(&t.pos))
                    .filter(|t| !options.stopwords.contains(&t.normalized))
                    .map(|t| t.normalized)
                    .collect()
            })
        })
        .collect::<Result<_>>()?;

    let mut first_seen: Vec<&str> = Vec::new();
    let mut totals: HashMap<&str, u64> = HashMap::new();
    for term in filtered.iter().flatten() {
        let n = totals.entry(term).or_insert(0);
        if *n == 0 {
            first_seen.push(term);
        }
        *n += 1;
    }

    let mut vocab = Vocabulary::default();
    for term in first_seen {
        let cf = totals[term];
        if cf >= options.min_corpus_count {
            vocab.index.insert(term.to_owned(), vocab.terms.len() as u32);
            vocab.terms.push(term.to_owned());
            vocab.doc_freq.push(0);
            vocab.corpus_freq.push(cf);
        }
    }

    let mut bow_docs = Vec::with_capacity(docs.len());
    let mut sequences = Vec::with_capacity(docs.len());
    let mut empty_docs = Vec::new();
    for ((doc_id, _), terms) in docs.iter().zip(&filtered) {
        let seq: Vec<u32> = terms.iter().filter_map(|t| vocab.id(t)).collect();
        let mut counts = BTreeMap::new();
        for &id in &seq {
            *counts.entry(id).or_insert(0u32) += 1;
        }
        for &id in counts.keys() {
            vocab.doc_freq[id as usize] += 1;
        }
        if counts.is_empty() {
            empty_docs.push(doc_id.clone());
        }
        bow_docs.push(BowDoc::new(doc_id.clone(), counts));
        sequences.push(seq);
    }

    if empty_docs.len() == bow_docs.len() {
        return Err(Error::NoDocuments);
    }
    if !empty_docs.is_empty() {
        log::info!("{} documents have no counted tokens", empty_docs.len());
    }
    Ok(BowOutput {
        vocab,
        docs: bow_docs,
        sequences,
        empty_docs,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_vocab_tsv(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "id\tterm\tdoc_freq\tcorpus_freq").map_err(io)?;
    for (i, term) in vocab.terms.iter().enumerate() {
        if term.contains(['\t', '\n', '\r']) {
            return Err(Error::Data(format!("term {term:?} cannot be written as TSV")));
        }
        writeln!(
            out,
            "{i}\t{term}\t{}\t{}",
            vocab.doc_freq[i], vocab.corpus_freq[i]
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_vocab_tsv(path: impl AsRef<Path>) -> Result<Vocabulary> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate().skip(1) {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Data(format!("{}:{}: malformed vocabulary row", path.display(), n + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 || cols[0].parse::<usize>().ok() != Some(rows.len()) {
            return Err(bad());
        }
        rows.push((
            cols[1].to_owned(),
            cols[2].parse().map_err(|_| bad())?,
            cols[3].parse().map_err(|_| bad())?,
        ));
    }
    Vocabulary::from_rows(rows)
}

pub fn write_bow_jsonl(path: impl AsRef<Path>, docs: &[BowDoc]) -> Result<()> {
    crate::corpus::write_jsonl(path, docs)
}

pub fn read_bow_jsonl(path: impl AsRef<Path>) -> Result<Vec<BowDoc>> {
    read_lines(path.as_ref(), |line| {
        let mut doc: BowDoc = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if doc.counts.values().any(|&c| c == 0) {
            return Err("zero count".into());
        }
        doc.total_tokens = doc.counts.values().sum();
        Ok(doc)
    })
}

#[derive(Serialize, Deserialize)]
struct SequenceLine {
    doc_id: String,
    tokens: Vec<u32>,
}

pub fn write_sequences_jsonl(
    path: impl AsRef<Path>,
    docs: &[BowDoc],
    sequences: &[Vec<u32>],
) -> Result<()> {
    let lines: Vec<SequenceLine> = docs
        .iter()
        .zip(sequences)
        .map(|(d, s)| SequenceLine {
            doc_id: d.doc_id.clone(),
            tokens: s.clone(),
        })
        .collect();
    crate::corpus::write_jsonl(path, &lines)
}

pub fn read_sequences_jsonl(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<u32>)>> {
    read_lines(path.as_ref(), |line| {
        let s: SequenceLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
        Ok((s.doc_id, s.tokens))
    })
}

fn read_lines<T>(
    path: &Path,
    parse: impl Fn(&str) -> std::result::Result<T, String>,
) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            parse(&line)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

/// `term,corpus_freq` rows, most frequent first, ties by id.
pub fn write_freq_csv(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<()> {
    let path = path.as_ref();
    let mut ids: Vec<u32> = (0..vocab.len() as u32).collect();
    ids.sort_by(|a, b| vocab.corpus_freq(*b).cmp(&vocab.corpus_freq(*a)).then(a.cmp(b)));
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(["term", "corpus_freq"]).map_err(csv_err)?;
    for id in ids {
        w.write_record([vocab.term(id).unwrap(), &vocab.corpus_freq(id).to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
