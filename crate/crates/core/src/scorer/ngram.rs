use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use super::{ScorerError, TokenScorer};
use crate::corpus::{KnowledgeBase, Query, TokenId, FIRST_TOKEN};

/// Longest n-gram the packed 128-bit keys can hold.
pub const MAX_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NGramConfig {
    pub order: usize,
    /// Interpolation weights for orders 1..=order. Defaults to weights
    /// proportional to the order.
    pub weights: Option<Vec<f64>>,
    /// Add-alpha smoothing constant.
    pub alpha: f64,
    /// Logit bonus for query keyword tokens.
    pub beta: f64,
}

impl Default for NGramConfig {
    fn default() -> Self {
        Self {
            order: 3,
            weights: None,
            alpha: 0.1,
            beta: 2.0,
        }
    }
}

/// Interpolated add-alpha k-gram model with a query-affinity bonus.
///
/// `P(t | h) = Σ_j λ_j (c(h_j t) + α) / (c(h_j ·) + α V)` where `h_j` is the
/// last `j - 1` context tokens; when the context is shorter than `order - 1`
/// the weights of the available orders are renormalized. Tokens among the
/// query keywords then get `exp(β)` times their probability and the result
/// is renormalized in closed form, so scoring a handful of tokens never
/// touches the whole vocabulary.
#[derive(Clone, Debug)]
pub struct NGramScorer {
    config: NGramConfig,
    weights: Vec<f64>,
    vocab_size: usize,
    unigrams: Vec<u64>,
    total: u64,
    /// `grams[j]`: counts of (j+1)-grams, j >= 1.
    grams: Vec<FxHashMap<u128, u32>>,
    /// `contexts[j]`: number of j-grams followed by a token inside a document.
    contexts: Vec<FxHashMap<u128, u32>>,
}

#[inline]
fn pack(tokens: &[TokenId]) -> u128 {
    tokens.iter().fold(0u128, |acc, &t| (acc << 32) | t as u128)
}

impl NGramScorer {
    pub fn train(kb: &KnowledgeBase, config: NGramConfig) -> Result<Self, ScorerError> {
        let k = config.order;
        if k < 1 {
            return Err(ScorerError::Config("n-gram order must be at least 1".into()));
        }
        if k > MAX_ORDER {
            return Err(ScorerError::Config(format!(
                "n-gram order above {MAX_ORDER} is not supported"
            )));
        }
        if !(config.alpha > 0.0) {
            return Err(ScorerError::Config("alpha must be positive".into()));
        }
        if !(config.beta >= 0.0) {
            return Err(ScorerError::Config("beta must be non-negative".into()));
        }
        let weights = match &config.weights {
            Some(w) => {
                if w.len() != k || w.iter().any(|&x| !(x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(ScorerError::Config(format!(
                        "interpolation weights must be {k} non-negative values summing to 1"
                    )));
                }
                w.clone()
            }
            None => {
                let z = (k * (k + 1) / 2) as f64;
                (1..=k).map(|j| j as f64 / z).collect()
            }
        };
        let vocab_size = kb.vocab_size();
        let mut unigrams = vec![0u64; vocab_size];
        let mut grams: Vec<FxHashMap<u128, u32>> = vec![Default::default(); k];
        let mut contexts: Vec<FxHashMap<u128, u32>> = vec![Default::default(); k];
        let mut total = 0u64;
        for doc in kb.docs() {
            let toks = &doc.tokens;
            for (i, &t) in toks.iter().enumerate() {
                unigrams[t as usize] += 1;
                total += 1;
                for j in 1..k {
                    if i < j {
                        break;
                    }
                    *grams[j].entry(pack(&toks[i - j..=i])).or_insert(0) += 1;
                    *contexts[j].entry(pack(&toks[i - j..i])).or_insert(0) += 1;
                }
            }
        }
        Ok(Self {
            config,
            weights,
            vocab_size,
            unigrams,
            total,
            grams,
            contexts,
        })
    }

    pub fn config(&self) -> &NGramConfig {
        &self.config
    }

    /// Interpolated probability before the query bonus.
    fn base_prob(&self, context: &[TokenId], t: TokenId) -> f64 {
        let alpha = self.config.alpha;
        let av = alpha * self.vocab_size as f64;
        let avail = self.weights.len().min(context.len() + 1);
        let wsum: f64 = self.weights[..avail].iter().sum();
        let uni = self.unigrams.get(t as usize).copied().unwrap_or(0) as f64;
        let mut p = self.weights[0] * (uni + alpha) / (self.total as f64 + av);
        let mut buf = [0 as TokenId; MAX_ORDER];
        for j in 1..avail {
            let hist = &context[context.len() - j..];
            let ctx_count = self.contexts[j].get(&pack(hist)).copied().unwrap_or(0) as f64;
            buf[..j].copy_from_slice(hist);
            buf[j] = t;
            let c = self.grams[j].get(&pack(&buf[..=j])).copied().unwrap_or(0) as f64;
            p += self.weights[j] * (c + alpha) / (ctx_count + av);
        }
        p / wsum
    }

    fn bonus_tokens(&self, query: &Query) -> Vec<TokenId> {
        if self.config.beta == 0.0 {
            return Vec::new();
        }
        query
            .keyword_tokens()
            .into_iter()
            .filter(|&t| t >= FIRST_TOKEN && (t as usize) < self.vocab_size)
            .collect()
    }

    /// `ln Z` of the bonus renormalization.
    fn log_norm(&self, context: &[TokenId], bonus: &[TokenId]) -> f64 {
        if bonus.is_empty() {
            return 0.0;
        }
        let mass: f64 = bonus.iter().map(|&t| self.base_prob(context, t)).sum();
        (1.0 + (self.config.beta.exp() - 1.0) * mass).ln()
    }

    fn logprob(&self, context: &[TokenId], t: TokenId, bonus: &[TokenId], log_norm: f64) -> f64 {
        if t as usize >= self.vocab_size {
            return f64::NEG_INFINITY;
        }
        let b = if bonus.binary_search(&t).is_ok() {
            self.config.beta
        } else {
            0.0
        };
        self.base_prob(context, t).ln() + b - log_norm
    }
}

impl TokenScorer for NGramScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn score_next(&self, query: &Query, context: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        let bonus = self.bonus_tokens(query);
        let z = self.log_norm(context, &bonus);
        Ok((0..self.vocab_size as TokenId)
            .map(|t| self.logprob(context, t, &bonus, z))
            .collect())
    }

    fn score_tokens(&self, query: &Query, context: &[TokenId], tokens: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        let bonus = self.bonus_tokens(query);
        let z = self.log_norm(context, &bonus);
        Ok(tokens.iter().map(|&t| self.logprob(context, t, &bonus, z)).collect())
    }
}
