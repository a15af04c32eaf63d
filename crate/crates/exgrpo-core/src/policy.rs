//! The differentiable student policy.
//!
//! A context-conditioned autoregressive softmax model over a closed
//! vocabulary. Each next-token distribution is a softmax over one row of a
//! dense logit table; the row is selected by hashing the last few tokens of
//! the context into a fixed number of buckets. The model is small enough
//! that log-probabilities and gradients are exact, which lets every
//! training objective be checked against central finite differences.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved token spelled exactly as it appears in rendered text.
pub const THINK_OPEN: &str = "<think>";
/// Closing marker paired with [`THINK_OPEN`].
pub const THINK_CLOSE: &str = "</think>";
/// End-of-sequence token; sampling stops when it is drawn.
pub const EOS: &str = "<eos>";

const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 4] = b"XGPO";

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),
    #[error("token index {0} out of range for vocabulary of size {1}")]
    InvalidIndex(usize, usize),
    #[error("parameter layouts differ: ({0}, {1}) vs ({2}, {3})")]
    LayoutMismatch(usize, usize, usize, usize),
    #[error("{0} must be non-empty")]
    EmptyInput(&'static str),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

/// Ordered, bijective token <-> index mapping.
///
/// The standard constructor always appends the reserved markers
/// (`<think>`, `</think>`, `<eos>`) after the caller's tokens, so any
/// vocabulary built through it can render think-wrapped output and
/// terminate sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    eos: usize,
    think_open: usize,
    think_close: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from distinct plain tokens plus the reserved markers.
    pub fn new<I, S>(plain: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = Vec::new();
        for t in plain {
            let t = t.into();
            assert!(!tokens.contains(&t), "duplicate vocabulary token {t:?}");
            assert!(
                t != THINK_OPEN && t != THINK_CLOSE && t != EOS,
                "reserved token {t:?} passed as plain"
            );
            tokens.push(t);
        }
        tokens.push(THINK_OPEN.to_string());
        tokens.push(THINK_CLOSE.to_string());
        tokens.push(EOS.to_string());
        Self::from_token_list(tokens)
    }

    fn from_token_list(tokens: Vec<String>) -> Self {
        let index: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        assert_eq!(index.len(), tokens.len(), "vocabulary tokens must be distinct");
        let eos = index[EOS];
        let think_open = index[THINK_OPEN];
        let think_close = index[THINK_CLOSE];
        Self { tokens, index, eos, think_open, think_close }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> usize {
        self.eos
    }

    pub fn think_open(&self) -> usize {
        self.think_open
    }

    pub fn think_close(&self) -> usize {
        self.think_close
    }

    pub fn token(&self, idx: usize) -> Option<&str> {
        self.tokens.get(idx).map(String::as_str)
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Whitespace-splits `text` and maps each piece to its index.
    pub fn encode(&self, text: &str) -> Result<TokenSequence, PolicyError> {
        let mut out = Vec::new();
        for piece in text.split_whitespace() {
            match self.index.get(piece) {
                Some(&i) => out.push(i),
                None => return Err(PolicyError::UnknownToken(piece.to_string())),
            }
        }
        Ok(TokenSequence(out))
    }

    pub fn decode(&self, seq: &TokenSequence) -> String {
        seq.0
            .iter()
            .filter_map(|&i| self.tokens.get(i).map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Restores the index map after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.tokens).expect("token list serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        let tokens: Vec<String> = serde_json::from_str(json)?;
        Ok(Self::from_token_list(tokens))
    }
}

/// Ordered token indices, always interpreted against one vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<usize>);

impl TokenSequence {
    pub fn new(tokens: Vec<usize>) -> Self {
        Self(tokens)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &TokenSequence) -> TokenSequence {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        TokenSequence(v)
    }
}

/// Seeded bucketing of the trailing token window into feature rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub buckets: usize,
    pub window: usize,
    pub seed: u64,
}

// Sentinel hashed in place of tokens before the start of the context.
const PAD: u64 = u64::MAX;

impl FeatureMap {
    pub fn new(buckets: usize, window: usize, seed: u64) -> Self {
        assert!(buckets >= 1 && window >= 1);
        Self { buckets, window, seed }
    }

    /// Feature row for the next-token distribution after `context`.
    pub fn bucket(&self, context: &[usize]) -> usize {
        let mut h = self.seed ^ 0x9e37_79b9_7f4a_7c15;
        let start = context.len().saturating_sub(self.window);
        let tail = &context[start..];
        for i in 0..self.window {
            let t = if i < self.window - tail.len() {
                PAD
            } else {
                tail[i - (self.window - tail.len())] as u64
            };
            h ^= t.wrapping_mul(0xa24b_aed4_963e_e407);
            h = h.rotate_left(23).wrapping_mul(0x9fb2_1c65_1e98_df25);
        }
        (h % self.buckets as u64) as usize
    }
}

/// Sparse gradient over the `(buckets, vocab)` logit table.
///
/// Only feature rows visited by the batch carry entries; every other row is
/// implicitly zero, matching the structure of the analytic gradients.
#[derive(Debug, Clone, Default)]
pub struct Gradient {
    rows: std::collections::BTreeMap<usize, Vec<f64>>,
    vocab: usize,
}

impl Gradient {
    pub fn new(vocab: usize) -> Self {
        Self { rows: Default::default(), vocab }
    }

    pub fn row_mut(&mut self, feature: usize) -> &mut [f64] {
        let vocab = self.vocab;
        self.rows.entry(feature).or_insert_with(|| vec![0.0; vocab])
    }

    pub fn rows(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().map(|(&f, v)| (f, v.as_slice()))
    }

    pub fn scale(&mut self, factor: f64) {
        for row in self.rows.values_mut() {
            for x in row.iter_mut() {
                *x *= factor;
            }
        }
    }

    /// self += factor * other
    pub fn axpy(&mut self, factor: f64, other: &Gradient) {
        assert_eq!(self.vocab, other.vocab);
        for (f, row) in other.rows() {
            let dst = self.row_mut(f);
            for (d, s) in dst.iter_mut().zip(row) {
                *d += factor * s;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.rows
            .values()
            .flat_map(|r| r.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.rows.values().flatten().all(|x| x.is_finite())
    }

    /// Entry at flat coordinate `feature * vocab + token`; zero if unvisited.
    pub fn get(&self, feature: usize, token: usize) -> f64 {
        self.rows.get(&feature).map_or(0.0, |r| r[token])
    }

    pub fn to_dense(&self, buckets: usize) -> Vec<f64> {
        let mut dense = vec![0.0; buckets * self.vocab];
        for (f, row) in self.rows() {
            dense[f * self.vocab..(f + 1) * self.vocab].copy_from_slice(row);
        }
        dense
    }
}

/// Full parameter vector of the student policy, laid out feature-row-major.
///
/// Snapshots (for the behavior policy and the KL reference) are deep
/// copies; mutating the live parameters never changes a snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    theta: Vec<f64>,
    feature: FeatureMap,
    vocab_size: usize,
}

impl PolicyParameters {
    pub fn zeros(feature: FeatureMap, vocab_size: usize) -> Self {
        Self { theta: vec![0.0; feature.buckets * vocab_size], feature, vocab_size }
    }

    pub fn feature(&self) -> FeatureMap {
        self.feature
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn buckets(&self) -> usize {
        self.feature.buckets
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn snapshot(&self) -> PolicyParameters {
        self.clone()
    }

    fn same_layout(&self, other: &PolicyParameters) -> Result<(), PolicyError> {
        if self.feature != other.feature || self.vocab_size != other.vocab_size {
            return Err(PolicyError::LayoutMismatch(
                self.feature.buckets,
                self.vocab_size,
                other.feature.buckets,
                other.vocab_size,
            ));
        }
        Ok(())
    }

    fn check_indices(&self, seq: &TokenSequence) -> Result<(), PolicyError> {
        for &t in &seq.0 {
            if t >= self.vocab_size {
                return Err(PolicyError::InvalidIndex(t, self.vocab_size));
            }
        }
        Ok(())
    }

    fn logits(&self, feature_row: usize) -> &[f64] {
        &self.theta[feature_row * self.vocab_size..(feature_row + 1) * self.vocab_size]
    }

    /// Next-token probabilities after `context`. Sums to 1 within 1e-12.
    pub fn distribution(&self, context: &[usize]) -> Vec<f64> {
        softmax(self.logits(self.feature.bucket(context)))
    }

    fn log_distribution(&self, context: &[usize]) -> Vec<f64> {
        log_softmax(self.logits(self.feature.bucket(context)))
    }

    /// Exact log-probability of `continuation` following `context`.
    pub fn log_prob(
        &self,
        context: &TokenSequence,
        continuation: &TokenSequence,
    ) -> Result<f64, PolicyError> {
        if continuation.is_empty() {
            return Err(PolicyError::EmptyInput("continuation"));
        }
        self.check_indices(context)?;
        self.check_indices(continuation)?;
        let mut ctx = context.0.clone();
        let mut total = 0.0;
        for &t in &continuation.0 {
            total += self.log_distribution(&ctx)[t];
            ctx.push(t);
        }
        Ok(total)
    }

    /// Per-token log-probabilities of `continuation` following `context`.
    pub fn token_log_probs(
        &self,
        context: &TokenSequence,
        continuation: &TokenSequence,
    ) -> Result<Vec<f64>, PolicyError> {
        self.check_indices(context)?;
        self.check_indices(continuation)?;
        let mut ctx = context.0.clone();
        let mut out = Vec::with_capacity(continuation.len());
        for &t in &continuation.0 {
            out.push(self.log_distribution(&ctx)[t]);
            ctx.push(t);
        }
        Ok(out)
    }

    /// Autoregressive categorical sampling until EOS or `max_len` tokens.
    pub fn sample<R: Rng>(
        &self,
        context: &TokenSequence,
        eos: usize,
        rng: &mut R,
        max_len: usize,
    ) -> TokenSequence {
        assert!(max_len >= 1);
        let mut ctx = context.0.clone();
        let mut out = Vec::new();
        for _ in 0..max_len {
            let probs = self.distribution(&ctx);
            let t = categorical(&probs, rng);
            out.push(t);
            ctx.push(t);
            if t == eos {
                break;
            }
        }
        TokenSequence(out)
    }

    /// Greedy (argmax) decoding, ties broken by lowest token index.
    pub fn greedy(&self, context: &TokenSequence, eos: usize, max_len: usize) -> TokenSequence {
        let mut ctx = context.0.clone();
        let mut out = Vec::new();
        for _ in 0..max_len {
            let probs = self.distribution(&ctx);
            let mut best = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = i;
                }
            }
            out.push(best);
            ctx.push(best);
            if best == eos {
                break;
            }
        }
        TokenSequence(out)
    }

    /// Negative log-likelihood and its exact gradient over a batch of
    /// (context, target) pairs. Gradient rows are softmax-minus-one-hot
    /// accumulated per visited feature row.
    pub fn sft_loss_and_grad(
        &self,
        batch: &[(TokenSequence, TokenSequence)],
    ) -> Result<(f64, Gradient), PolicyError> {
        if batch.is_empty() {
            return Err(PolicyError::EmptyInput("batch"));
        }
        let mut loss = 0.0;
        let mut grad = Gradient::new(self.vocab_size);
        for (context, target) in batch {
            if target.is_empty() {
                return Err(PolicyError::EmptyInput("target"));
            }
            self.check_indices(context)?;
            self.check_indices(target)?;
            let mut ctx = context.0.clone();
            for &t in &target.0 {
                let row = self.feature.bucket(&ctx);
                let probs = softmax(self.logits(row));
                loss -= probs[t].ln();
                let g = grad.row_mut(row);
                for (v, &p) in probs.iter().enumerate() {
                    g[v] += p - if v == t { 1.0 } else { 0.0 };
                }
                ctx.push(t);
            }
        }
        Ok((loss, grad))
    }

    /// Gradient of the summed log-likelihood of `continuation` (the ascent
    /// direction for that sequence's probability).
    pub fn log_prob_grad(
        &self,
        context: &TokenSequence,
        continuation: &TokenSequence,
    ) -> Result<Gradient, PolicyError> {
        self.check_indices(context)?;
        self.check_indices(continuation)?;
        let mut grad = Gradient::new(self.vocab_size);
        let mut ctx = context.0.clone();
        for &t in &continuation.0 {
            let row = self.feature.bucket(&ctx);
            let probs = softmax(self.logits(row));
            let g = grad.row_mut(row);
            for (v, &p) in probs.iter().enumerate() {
                g[v] += if v == t { 1.0 } else { 0.0 } - p;
            }
            ctx.push(t);
        }
        Ok(grad)
    }

    /// Mean KL(self || reference) over the next-token distributions at the
    /// given context states. Nonnegative; zero iff the per-state
    /// distributions coincide.
    pub fn kl_divergence(
        &self,
        reference: &PolicyParameters,
        states: &[TokenSequence],
    ) -> Result<f64, PolicyError> {
        Ok(self.kl_divergence_and_grad(reference, states)?.0)
    }

    /// KL value together with its gradient with respect to `self`'s logits.
    pub fn kl_divergence_and_grad(
        &self,
        reference: &PolicyParameters,
        states: &[TokenSequence],
    ) -> Result<(f64, Gradient), PolicyError> {
        self.same_layout(reference)?;
        if states.is_empty() {
            return Err(PolicyError::EmptyInput("states"));
        }
        let mut total = 0.0;
        let mut grad = Gradient::new(self.vocab_size);
        let scale = 1.0 / states.len() as f64;
        for state in states {
            self.check_indices(state)?;
            let row = self.feature.bucket(&state.0);
            let logp = log_softmax(self.logits(row));
            let logq = log_softmax(reference.logits(row));
            let kl: f64 = logp
                .iter()
                .zip(&logq)
                .map(|(&lp, &lq)| lp.exp() * (lp - lq))
                .sum();
            total += kl;
            // d KL / d theta[row, v] = p_v * ((log p_v - log q_v) - KL)
            let g = grad.row_mut(row);
            for v in 0..self.vocab_size {
                g[v] += scale * logp[v].exp() * ((logp[v] - logq[v]) - kl);
            }
        }
        Ok((total * scale, grad))
    }

    /// theta += step * grad (sparse update over visited rows only).
    pub fn apply_gradient(&mut self, step: f64, grad: &Gradient) {
        for (f, row) in grad.rows() {
            let base = f * self.vocab_size;
            for (v, &g) in row.iter().enumerate() {
                self.theta[base + v] += step * g;
            }
        }
    }

    /// Binary checkpoint: header {magic, version, B, |V|, seed, window} then
    /// raw little-endian doubles.
    pub fn write_checkpoint<P: AsRef<Path>>(&self, path: P) -> Result<(), PolicyError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(CHECKPOINT_MAGIC)?;
        f.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        f.write_all(&(self.feature.buckets as u64).to_le_bytes())?;
        f.write_all(&(self.vocab_size as u64).to_le_bytes())?;
        f.write_all(&self.feature.seed.to_le_bytes())?;
        f.write_all(&(self.feature.window as u32).to_le_bytes())?;
        for x in &self.theta {
            f.write_all(&x.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<P: AsRef<Path>>(path: P) -> Result<Self, PolicyError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(PolicyError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut f)?;
        if version != CHECKPOINT_VERSION {
            return Err(PolicyError::Checkpoint(format!("unsupported version {version}")));
        }
        let buckets = read_u64(&mut f)? as usize;
        let vocab_size = read_u64(&mut f)? as usize;
        let seed = read_u64(&mut f)?;
        let window = read_u32(&mut f)? as usize;
        let mut theta = vec![0.0; buckets * vocab_size];
        for x in theta.iter_mut() {
            let mut buf = [0u8; 8];
            f.read_exact(&mut buf)?;
            *x = f64::from_le_bytes(buf);
        }
        Ok(Self { theta, feature: FeatureMap::new(buckets, window, seed), vocab_size })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, std::io::Error> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, std::io::Error> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&x| x - log_sum).collect()
}

fn categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
