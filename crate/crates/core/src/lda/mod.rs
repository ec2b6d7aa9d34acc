//! Latent Dirichlet allocation trained by collapsed Gibbs sampling.

mod sweep;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::BowDoc;

pub use sweep::{
    best_by_coherence, sweep_configs, sweep_topics, write_sweep_csv, SweepRecord, SweepScores,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdaConfig {
    pub num_topics: usize,
    /// Symmetric document-topic prior; `None` means `50 / num_topics`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Sweeps between the count snapshots averaged into phi and theta.
    #[serde(default = "default_sample_lag")]
    pub sample_lag: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_beta() -> f64 {
    0.01
}
fn default_iterations() -> usize {
    500
}
fn default_burn_in() -> usize {
    100
}
fn default_sample_lag() -> usize {
    10
}

impl LdaConfig {
    pub fn new(num_topics: usize) -> Self {
        LdaConfig {
            num_topics,
            alpha: None,
            beta: default_beta(),
            iterations: default_iterations(),
            burn_in: default_burn_in(),
            sample_lag: default_sample_lag(),
            seed: 0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.num_topics as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("LDA: {m}")));
        if self.num_topics < 1 {
            return fail("num_topics must be at least 1");
        }
        if self.alpha() <= 0.0 || !self.alpha().is_finite() {
            return fail("alpha must be positive");
        }
        if self.beta <= 0.0 || !self.beta.is_finite() {
            return fail("beta must be positive");
        }
        if self.iterations < 1 {
            return fail("iterations must be at least 1");
        }
        if self.burn_in >= self.iterations {
            return fail("burn_in must be smaller than iterations");
        }
        if self.sample_lag < 1 {
            return fail("sample_lag must be at least 1");
        }
        Ok(())
    }
}

/// Sampler state: token assignments and the count matrices they induce.
#[derive(Debug, Clone)]
pub struct GibbsState {
    num_topics: usize,
    vocab_size: usize,
    words: Vec<Vec<u32>>,
    z: Vec<Vec<u32>>,
    n_dk: Vec<u32>,
    n_kv: Vec<u32>,
    n_k: Vec<u32>,
}

impl GibbsState {
    fn init(docs: &[BowDoc], vocab_size: usize, num_topics: usize, rng: &mut ChaCha8Rng) -> Self {
        let words: Vec<Vec<u32>> = docs
            .iter()
            .map(|d| {
                d.counts
                    .iter()
                    .flat_map(|(&w, &c)| std::iter::repeat_n(w, c as usize))
                    .collect()
            })
            .collect();
        let mut state = GibbsState {
            num_topics,
            vocab_size,
            z: Vec::with_capacity(words.len()),
            n_dk: vec![0; docs.len() * num_topics],
            n_kv: vec![0; num_topics * vocab_size],
            n_k: vec![0; num_topics],
            words: Vec::new(),
        };
        for (d, doc) in words.iter().enumerate() {
            let mut zd = Vec::with_capacity(doc.len());
            for &w in doc {
                let k = rng.gen_range(0..num_topics);
                state.n_dk[d * num_topics + k] += 1;
                state.n_kv[k * vocab_size + w as usize] += 1;
                state.n_k[k] += 1;
                zd.push(k as u32);
            }
            state.z.push(zd);
        }
        state.words = words;
        state
    }

    fn sweep(&mut self, alpha: f64, beta: f64, rng: &mut ChaCha8Rng, weights: &mut [f64]) {
        let k_count = self.num_topics;
        let v = self.vocab_size;
        let v_beta = v as f64 * beta;
        for d in 0..self.words.len() {
            for i in 0..self.words[d].len() {
                let w = self.words[d][i] as usize;
                let old = self.z[d][i] as usize;
                self.n_dk[d * k_count + old] -= 1;
                self.n_kv[old * v + w] -= 1;
                self.n_k[old] -= 1;

                let mut total = 0.0;
                for (k, slot) in weights.iter_mut().enumerate() {
                    let p = (self.n_dk[d * k_count + k] as f64 + alpha)
                        * (self.n_kv[k * v + w] as f64 + beta)
                        / (self.n_k[k] as f64 + v_beta);
                    total += p;
                    *slot = total;
                }
                let u = rng.gen::<f64>() * total;
                let new = weights.iter().position(|&c| u < c).unwrap_or(k_count - 1);

                self.n_dk[d * k_count + new] += 1;
                self.n_kv[new * v + w] += 1;
                self.n_k[new] += 1;
                self.z[d][i] = new as u32;
            }
        }
    }

    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn assignments(&self) -> &[Vec<u32>] {
        &self.z
    }

    pub fn doc_topic_count(&self, d: usize, k: usize) -> u32 {
        self.n_dk[d * self.num_topics + k]
    }

    pub fn topic_word_count(&self, k: usize, w: usize) -> u32 {
        self.n_kv[k * self.vocab_size + w]
    }

    /// Verifies that every count matrix agrees with the assignments.
    pub fn check_conservation(&self) -> std::result::Result<(), String> {
        let k_count = self.num_topics;
        for (d, doc) in self.words.iter().enumerate() {
            let row: u32 = self.n_dk[d * k_count..(d + 1) * k_count].iter().sum();
            if row as usize != doc.len() {
                return Err(format!("doc {d}: n_dk sums to {row}, length {}", doc.len()));
            }
        }
        let corpus: usize = self.words.iter().map(Vec::len).sum();
        let total_kv: u64 = self.n_kv.iter().map(|&c| c as u64).sum();
        if total_kv as usize != corpus {
            return Err(format!("n_kv sums to {total_kv}, corpus has {corpus} tokens"));
        }
        let mut recount_kv = vec![0u32; self.n_kv.len()];
        let mut recount_dk = vec![0u32; self.n_dk.len()];
        for (d, (doc, zd)) in self.words.iter().zip(&self.z).enumerate() {
            for (&w, &k) in doc.iter().zip(zd) {
                recount_kv[k as usize * self.vocab_size + w as usize] += 1;
                recount_dk[d * k_count + k as usize] += 1;
            }
        }
        if recount_kv != self.n_kv || recount_dk != self.n_dk {
            return Err("count matrices disagree with assignments".into());
        }
        for k in 0..k_count {
            let row: u32 = self.n_kv[k * self.vocab_size..(k + 1) * self.vocab_size]
                .iter()
                .sum();
            if row != self.n_k[k] {
                return Err(format!("topic {k}: n_k is {}, row sums to {row}", self.n_k[k]));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub config: LdaConfig,
    pub vocab_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_fingerprint: Option<String>,
    pub doc_ids: Vec<String>,
    /// K × V topic-word probabilities.
    pub phi: Vec<Vec<f64>>,
    /// D × K document-topic probabilities.
    pub theta: Vec<Vec<f64>>,
    pub n_dk: Vec<Vec<u32>>,
    pub n_kv: Vec<Vec<u32>>,
    pub z: Vec<Vec<u32>>,
}

/// Trains LDA on `docs` over a vocabulary of `vocab_size` term ids.
pub fn train_lda(docs: &[BowDoc], vocab_size: usize, config: &LdaConfig) -> Result<LdaModel> {
    train_lda_observed(docs, vocab_size, config, |_, _| {})
}

/// Like [`train_lda`], calling `observer(sweep, state)` after every sweep (1-based).
pub fn train_lda_observed(
    docs: &[BowDoc],
    vocab_size: usize,
    config: &LdaConfig,
    mut observer: impl FnMut(usize, &GibbsState),
) -> Result<LdaModel> {
    config.validate()?;
    if vocab_size == 0 {
        return Err(Error::Config("LDA: vocabulary is empty".into()));
    }
    if docs.iter().all(BowDoc::is_empty) {
        return Err(Error::NoDocuments);
    }
    if let Some((d, w)) = docs
        .iter()
        .find_map(|d| d.counts.keys().find(|&&w| w as usize >= vocab_size).map(|w| (d, w)))
    {
        return Err(Error::Data(format!(
            "document {} uses term id {w} outside the vocabulary of {vocab_size}",
            d.doc_id
        )));
    }
    let k_count = config.num_topics;
    let distinct = docs
        .iter()
        .flat_map(|d| d.counts.keys())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    if k_count > distinct {
        log::warn!("LDA: {k_count} topics requested for {distinct} distinct terms");
    }

    let alpha = config.alpha();
    let beta = config.beta;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = GibbsState::init(docs, vocab_size, k_count, &mut rng);
    let mut weights = vec![0.0; k_count];
    let mut phi_acc = vec![0.0; k_count * vocab_size];
    let mut theta_acc = vec![0.0; docs.len() * k_count];
    let mut snapshots = 0usize;

    for sweep in 1..=config.iterations {
        state.sweep(alpha, beta, &mut rng, &mut weights);
        observer(sweep, &state);
        let sampled = sweep > config.burn_in && (sweep - config.burn_in).is_multiple_of(config.sample_lag);
        let last_chance = sweep == config.iterations && snapshots == 0;
        if sampled || last_chance {
            accumulate(&state, alpha, beta, &mut phi_acc, &mut theta_acc);
            snapshots += 1;
        }
    }

    let scale = snapshots as f64;
    let phi = phi_acc
        .chunks(vocab_size)
        .map(|row| row.iter().map(|x| x / scale).collect())
        .collect();
    let theta = theta_acc
        .chunks(k_count)
        .map(|row| row.iter().map(|x| x / scale).collect())
        .collect();
    Ok(LdaModel {
        config: config.clone(),
        vocab_size,
        vocab_fingerprint: None,
        doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
        phi,
        theta,
        n_dk: state.n_dk.chunks(k_count).map(<[u32]>::to_vec).collect(),
        n_kv: state.n_kv.chunks(vocab_size).map(<[u32]>::to_vec).collect(),
        z: state.z,
    })
}

fn accumulate(state: &GibbsState, alpha: f64, beta: f64, phi: &mut [f64], theta: &mut [f64]) {
    let k_count = state.num_topics;
    let v = state.vocab_size;
    let v_beta = v as f64 * beta;
    for k in 0..k_count {
        let denom = state.n_k[k] as f64 + v_beta;
        for w in 0..v {
            phi[k * v + w] += (state.n_kv[k * v + w] as f64 + beta) / denom;
        }
    }
    let k_alpha = k_count as f64 * alpha;
    for (d, doc) in state.words.iter().enumerate() {
        let denom = doc.len() as f64 + k_alpha;
        for k in 0..k_count {
            theta[d * k_count + k] += (state.n_dk[d * k_count + k] as f64 + alpha) / denom;
        }
    }
}

impl LdaModel {
    pub fn num_topics(&self) -> usize {
        self.config.num_topics
    }

    pub fn with_vocab_fingerprint(mut self, fingerprint: String) -> Self {
        self.vocab_fingerprint = Some(fingerprint);
        self
    }

    /// The `n` highest-probability term ids of topic `k`, ties by lower id.
    pub fn top_keywords(&self, k: usize, n: usize) -> Result<Vec<u32>> {
        let row = self
            .phi
            .get(k)
            .ok_or_else(|| Error::Config(format!("topic {k} out of range")))?;
        Ok(top_indices(row, n))
    }

    /// Topic with the most assigned tokens in document `d`, ties by lower id;
    /// `None` for empty documents.
    pub fn main_topic(&self, d: usize) -> Option<usize> {
        main_topic_of(self.n_dk.get(d)?)
    }

    pub fn main_topic_by_id(&self, doc_id: &str) -> Option<usize> {
        let d = self.doc_ids.iter().position(|id| id == doc_id)?;
        self.main_topic(d)
    }

    /// Training-set perplexity; `docs` must be the documents the model was trained on.
    pub fn perplexity(&self, docs: &[BowDoc]) -> Result<f64> {
        if docs.len() != self.theta.len() {
            return Err(Error::Data(format!(
                "perplexity needs the {} training documents, got {}",
                self.theta.len(),
                docs.len()
            )));
        }
        perplexity_with(&self.theta, &self.phi, docs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

pub fn main_topic_of(counts: &[u32]) -> Option<usize> {
    let mut best: Option<(usize, u32)> = None;
    for (k, &c) in counts.iter().enumerate() {
        if c > 0 && best.is_none_or(|(_, b)| c > b) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k)
}

/// Indices of the `n` largest values, ties by lower index.
pub fn top_indices(row: &[f64], n: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..row.len() as u32).collect();
    ids.sort_by(|&a, &b| {
        row[b as usize]
            .total_cmp(&row[a as usize])
            .then(a.cmp(&b))
    });
    ids.truncate(n);
    ids
}

/// `exp(-Σ count · ln Σ_k θ_dk φ_kw / N)` over all tokens of `docs`.
pub fn perplexity_with(theta: &[Vec<f64>], phi: &[Vec<f64>], docs: &[BowDoc]) -> Result<f64> {
    let mut log_likelihood = 0.0;
    let mut tokens = 0u64;
    for (d, doc) in docs.iter().enumerate() {
        for (&w, &c) in &doc.counts {
            let p: f64 = theta[d]
                .iter()
                .zip(phi)
                .map(|(t, row)| t * row[w as usize])
                .sum();
            assert!(p > 0.0, "zero probability for term {w} in doc {d}");
            log_likelihood += c as f64 * p.ln();
            tokens += c as u64;
        }
    }
    if tokens == 0 {
        return Err(Error::NoDocuments);
    }
    Ok((-log_likelihood / tokens as f64).exp())
}
