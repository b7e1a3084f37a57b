//! Next-token scorers over code-token streams.
//!
//! [`MarkovScorer`] is an interpolated-backoff n-gram model:
//!
//! ```text
//! P_0(w)     = (c(w) + δ) / (N + δ|V|)
//! P_k(w | h) = (1 − λ)·(c(h, w) + δ) / (c(h) + δ|V|) + λ·P_{k−1}(w | h')
//! ```
//!
//! where `h` is the last `k` context tokens and `h'` its last `k − 1`. A
//! context never seen in training contributes nothing, so `P_k = P_{k−1}`.
//! `|V|` counts the code tokens of the scorer's index type.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rqvae::IndexType;
use crate::vocab::{TokenId, TokenVocab};

/// Anything that can score the next token given a context.
pub trait SequenceScorer: Sync {
    /// Log-probabilities aligned with `candidates`, renormalized so their
    /// exponentials sum to one.
    fn next_token_logprobs(&self, context: &[TokenId], candidates: &[TokenId]) -> Result<Vec<f64>>;

    fn contains(&self, token: TokenId) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovConfig {
    pub order: usize,
    pub delta: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for MarkovConfig {
    fn default() -> Self {
        Self {
            order: 8,
            delta: 0.1,
            lambda: 0.4,
            seed: 0,
        }
    }
}

impl MarkovConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidConfig(format!("scorer delta must be positive, got {}", self.delta)));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!("scorer lambda must be in [0, 1), got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Counts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

impl Counts {
    fn add(&mut self, w: TokenId) {
        self.total += 1;
        *self.next.entry(w).or_default() += 1;
    }

    fn get(&self, w: TokenId) -> u64 {
        self.next.get(&w).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovScorer {
    index_type: IndexType,
    template_id: usize,
    cfg: MarkovConfig,
    vocab: BTreeSet<TokenId>,
    unigram: Counts,
    contexts: HashMap<Vec<TokenId>, Counts>,
}

/// Streams used for template `t`: the full set for `t = 1`, otherwise a
/// bootstrap resample seeded by `(seed, t)`.
pub fn template_streams(streams: &[Vec<TokenId>], template_id: usize, seed: u64) -> Vec<&[TokenId]> {
    if template_id <= 1 {
        return streams.iter().map(Vec::as_slice).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(template_id as u64);
    (0..streams.len())
        .map(|_| streams[rng.random_range(0..streams.len())].as_slice())
        .collect()
}

impl MarkovScorer {
    /// A model with no counts: every distribution is uniform.
    pub fn untrained(index_type: IndexType, vocab: &TokenVocab, cfg: MarkovConfig) -> Result<Self> {
        cfg.validate()?;
        let tokens: BTreeSet<TokenId> = vocab.code_tokens(index_type).into_iter().collect();
        if tokens.is_empty() {
            return Err(Error::Empty("scorer vocabulary"));
        }
        Ok(Self {
            index_type,
            template_id: 1,
            cfg,
            vocab: tokens,
            unigram: Counts::default(),
            contexts: HashMap::new(),
        })
    }

    /// Counts n-grams of every order up to `cfg.order` over the per-user
    /// token streams chosen for `template_id`.
    pub fn train(
        index_type: IndexType,
        vocab: &TokenVocab,
        streams: &[Vec<TokenId>],
        template_id: usize,
        cfg: MarkovConfig,
    ) -> Result<Self> {
        let mut model = Self::untrained(index_type, vocab, cfg)?;
        model.template_id = template_id;
        if streams.iter().all(Vec::is_empty) {
            return Err(Error::Empty("scorer training streams"));
        }
        for stream in template_streams(streams, template_id, cfg.seed) {
            for (i, &w) in stream.iter().enumerate() {
                if !model.vocab.contains(&w) {
                    return Err(Error::UnknownToken(w));
                }
                model.unigram.add(w);
                for k in 1..=cfg.order.min(i) {
                    model.contexts.entry(stream[i - k..i].to_vec()).or_default().add(w);
                }
            }
        }
        Ok(model)
    }

    pub fn index_type(&self) -> IndexType {
        self.index_type
    }

    pub fn template_id(&self) -> usize {
        self.template_id
    }

    pub fn config(&self) -> &MarkovConfig {
        &self.cfg
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn smoothed(&self, c: u64, total: u64) -> f64 {
        (c as f64 + self.cfg.delta) / (total as f64 + self.cfg.delta * self.vocab.len() as f64)
    }

    /// Count tables that apply to `context`, shortest first.
    fn active_contexts(&self, context: &[TokenId]) -> Vec<&Counts> {
        let mut out = Vec::new();
        for k in 1..=self.cfg.order.min(context.len()) {
            match self.contexts.get(&context[context.len() - k..]) {
                Some(c) => out.push(c),
                None => break,
            }
        }
        out
    }

    fn prob_with(&self, active: &[&Counts], w: TokenId) -> f64 {
        let lambda = self.cfg.lambda;
        active.iter().fold(self.smoothed(self.unigram.get(w), self.unigram.total), |lower, c| {
            (1.0 - lambda) * self.smoothed(c.get(w), c.total) + lambda * lower
        })
    }

    /// Probability of `w` under the full-vocabulary distribution.
    pub fn prob(&self, context: &[TokenId], w: TokenId) -> f64 {
        self.prob_with(&self.active_contexts(context), w)
    }

    /// Mean negative log-likelihood per token, each token predicted from all
    /// tokens before it in its stream.
    pub fn mean_nll(&self, streams: &[Vec<TokenId>]) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for s in streams {
            for i in 0..s.len() {
                sum -= self.prob(&s[..i], s[i]).ln();
                n += 1;
            }
        }
        sum / n.max(1) as f64
    }

    /// Writes the count tables as sorted `context<TAB>token<TAB>count` lines
    /// (context tokens space-separated, empty for unigrams) after a header.
    pub fn write_checkpoint<W: Write>(&self, vocab: &TokenVocab, mut out: W) -> std::io::Result<()> {
        let name = |t: TokenId| vocab.token(t).unwrap_or("?");
        writeln!(
            out,
            "markov-scorer v1\tindex_type={}\ttemplate={}\torder={}\tdelta={}\tlambda={}\tseed={}",
            self.index_type, self.template_id, self.cfg.order, self.cfg.delta, self.cfg.lambda, self.cfg.seed
        )?;
        let mut rows: Vec<(&[TokenId], TokenId, u64)> = Vec::new();
        for (&w, &c) in &self.unigram.next {
            rows.push((&[], w, c));
        }
        for (ctx, counts) in &self.contexts {
            for (&w, &c) in &counts.next {
                rows.push((ctx, w, c));
            }
        }
        rows.sort_unstable();
        for (ctx, w, c) in rows {
            let ctx: Vec<&str> = ctx.iter().map(|&t| name(t)).collect();
            writeln!(out, "{}\t{}\t{c}", ctx.join(" "), name(w))?;
        }
        Ok(())
    }

    pub fn save(&self, vocab: &TokenVocab, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(vocab, &mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(vocab: &TokenVocab, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let mut fields = header.split('\t');
        if fields.next() != Some("markov-scorer v1") {
            return Err(Error::format(path, 1, "expected `markov-scorer v1` header"));
        }
        let kv: HashMap<&str, &str> = fields.filter_map(|f| f.split_once('=')).collect();
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::format(path, 1, format!("header lacks `{k}`")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::format(path, 1, format!("bad `{k}`"))) };
        let index_type: IndexType = get("index_type")?.parse()?;
        let cfg = MarkovConfig {
            order: num("order")? as usize,
            delta: num("delta")?,
            lambda: num("lambda")?,
            seed: get("seed")?.parse().map_err(|_| Error::format(path, 1, "bad `seed`"))?,
        };
        let mut model = Self::untrained(index_type, vocab, cfg)?;
        model.template_id = num("template")? as usize;
        let lookup = |n: usize, tok: &str| -> Result<TokenId> {
            vocab
                .id(tok)
                .filter(|t| model.vocab.contains(t))
                .ok_or_else(|| Error::format(path, n, format!("unknown token `{tok}`")))
        };
        for (n, line) in lines.enumerate().map(|(n, l)| (n + 2, l)) {
            let parts: Vec<&str> = line.split('\t').collect();
            let [ctx, tok, count] = parts[..] else {
                return Err(Error::format(path, n, "expected `context<TAB>token<TAB>count`"));
            };
            let w = lookup(n, tok)?;
            let c: u64 = count.parse().map_err(|_| Error::format(path, n, "bad count"))?;
            let counts = if ctx.is_empty() {
                &mut model.unigram
            } else {
                let key = ctx.split(' ').map(|t| lookup(n, t)).collect::<Result<Vec<_>>>()?;
                model.contexts.entry(key).or_default()
            };
            counts.total += c;
            *counts.next.entry(w).or_default() += c;
        }
        Ok(model)
    }
}

impl SequenceScorer for MarkovScorer {
    fn next_token_logprobs(&self, context: &[TokenId], candidates: &[TokenId]) -> Result<Vec<f64>> {
        if candidates.is_empty() {
            return Err(Error::Empty("candidate set"));
        }
        if let Some(&t) = context.iter().chain(candidates).find(|t| !self.vocab.contains(t)) {
            return Err(Error::UnknownToken(t));
        }
        let active = self.active_contexts(context);
        let probs: Vec<f64> = candidates.iter().map(|&w| self.prob_with(&active, w)).collect();
        let log_z = probs.iter().sum::<f64>().ln();
        Ok(probs.into_iter().map(|p| p.ln() - log_z).collect())
    }

    fn contains(&self, token: TokenId) -> bool {
        self.vocab.contains(&token)
    }
}
