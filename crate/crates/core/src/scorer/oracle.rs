use super::{ScorerError, TokenScorer};
use crate::corpus::{Query, TokenId};

/// Test oracle: certainty on the next target token while the context is a
/// proper prefix of the target, uniform otherwise.
///
/// With no fixed target the query's own `target` is followed, which lets one
/// scorer serve a whole batch.
#[derive(Clone, Debug)]
pub struct OracleScorer {
    vocab_size: usize,
    target: Option<Vec<TokenId>>,
}

impl OracleScorer {
    pub fn new(target: Vec<TokenId>, vocab_size: usize) -> Self {
        Self {
            vocab_size,
            target: Some(target),
        }
    }

    pub fn per_query(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            target: None,
        }
    }

    fn target<'a>(&'a self, query: &'a Query) -> Option<&'a [TokenId]> {
        self.target.as_deref().or(query.target.as_deref())
    }

    fn forced(&self, query: &Query, context: &[TokenId]) -> Option<TokenId> {
        let target = self.target(query)?;
        (context.len() < target.len() && target.starts_with(context)).then(|| target[context.len()])
    }
}

impl TokenScorer for OracleScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn score_next(&self, query: &Query, context: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        Ok(match self.forced(query, context) {
            Some(t) => {
                let mut v = vec![f64::NEG_INFINITY; self.vocab_size];
                v[t as usize] = 0.0;
                v
            }
            None => vec![-(self.vocab_size as f64).ln(); self.vocab_size],
        })
    }

    fn score_tokens(&self, query: &Query, context: &[TokenId], tokens: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        let forced = self.forced(query, context);
        let uniform = -(self.vocab_size as f64).ln();
        Ok(tokens
            .iter()
            .map(|&t| match forced {
                Some(f) if f == t => 0.0,
                Some(_) => f64::NEG_INFINITY,
                None if (t as usize) < self.vocab_size => uniform,
                None => f64::NEG_INFINITY,
            })
            .collect())
    }
}
