//! Autoregressive next-token scorers.
//!
//! A scorer maps `(query, context)` to a log-distribution over the shared
//! token vocabulary. The decoder only ever needs the entries of the tokens
//! the index allows, so scorers may answer [`TokenScorer::score_tokens`]
//! without materializing the whole vector.

mod external;
mod ngram;
mod oracle;

pub use external::{Endpoint, ExternalScorer, PROTOCOL_VERSION};
pub use ngram::{NGramConfig, NGramScorer};
pub use oracle::OracleScorer;

use thiserror::Error;

use crate::corpus::{Query, TokenId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScorerError {
    #[error("invalid scorer config: {0}")]
    Config(String),
    #[error("scorer protocol violation: {0}")]
    Protocol(String),
    #[error("scorer did not answer within {after_ms} ms")]
    Timeout { after_ms: u64 },
    #[error("scorer vocabulary has {found} tokens, index expects {expected}")]
    VocabMismatch { expected: usize, found: usize },
    #[error("scorer transport: {0}")]
    Transport(String),
}

pub trait TokenScorer: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Log-probabilities of every token given the context.
    fn score_next(&self, query: &Query, context: &[TokenId]) -> Result<Vec<f64>, ScorerError>;

    /// Log-probabilities (under the full distribution) of the listed tokens.
    fn score_tokens(&self, query: &Query, context: &[TokenId], tokens: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        let full = self.score_next(query, context)?;
        Ok(tokens
            .iter()
            .map(|&t| full.get(t as usize).copied().unwrap_or(f64::NEG_INFINITY))
            .collect())
    }
}

impl<S: TokenScorer + ?Sized> TokenScorer for &S {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn score_next(&self, query: &Query, context: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        (**self).score_next(query, context)
    }
    fn score_tokens(&self, query: &Query, context: &[TokenId], tokens: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        (**self).score_tokens(query, context, tokens)
    }
}

impl<S: TokenScorer + ?Sized> TokenScorer for Box<S> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn score_next(&self, query: &Query, context: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        (**self).score_next(query, context)
    }
    fn score_tokens(&self, query: &Query, context: &[TokenId], tokens: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        (**self).score_tokens(query, context, tokens)
    }
}

/// `Σ_j log F(c_j | c_<j, Q)`, summed left to right.
pub fn sequence_score<S: TokenScorer + ?Sized>(
    scorer: &S,
    query: &Query,
    tokens: &[TokenId],
) -> Result<f64, ScorerError> {
    let mut total = 0.0;
    for j in 0..tokens.len() {
        total += scorer.score_tokens(query, &tokens[..j], &tokens[j..=j])?[0];
    }
    Ok(total)
}

/// Numerically stable `log Σ exp(x)`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
