//! Knowledge-guided constrained beam search.
//!
//! Each step asks the index which tokens may follow every growing beam,
//! scores only those tokens, renormalizes the scorer's distribution over
//! them and expands the beams group by group with a Hamming diversity
//! penalty between groups. From `min_len` on, a beam whose clue occurs in a
//! single document is finalized on the spot; beams still ambiguous after
//! `max_len` steps are dropped. Documents are ranked by the best clue that
//! resolved to them.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Query, TokenId, FIRST_TOKEN, SEP};
use crate::fm_index::{ClueIndex, Distinct, SearchInterval};
use crate::scorer::{logsumexp, ScorerError, TokenScorer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Constrained generation of a whole document from its first token.
    FullDocument,
    /// Constrained generation of a document's first sentence, looked up as
    /// an identifier.
    FirstSentence,
    /// Constrained generation of the shortest corpus-unique span.
    KnowledgeClue,
    /// Unconstrained generation, looked up afterwards.
    FreeText,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::FullDocument,
        Strategy::FirstSentence,
        Strategy::KnowledgeClue,
        Strategy::FreeText,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::FullDocument => "full_document",
            Strategy::FirstSentence => "first_sentence",
            Strategy::KnowledgeClue => "knowledge_clue",
            Strategy::FreeText => "free_text",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub num_beams: usize,
    pub num_groups: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Subtracted once per token beyond `min_len`.
    pub length_penalty: f64,
    /// Subtracted per earlier group that picked the same token this step.
    pub diversity_penalty: f64,
    pub strategy: Strategy,
    /// Tokens that end a sentence (first-sentence strategy).
    pub terminators: Vec<TokenId>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            num_beams: 20,
            num_groups: 4,
            min_len: 10,
            max_len: 15,
            length_penalty: 0.5,
            diversity_penalty: 1.0,
            strategy: Strategy::KnowledgeClue,
            terminators: Vec::new(),
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        let bad = |m: &str| Err(DecodeError::Config(m.to_owned()));
        if self.num_groups == 0 || self.num_beams == 0 {
            return bad("num_beams and num_groups must be positive");
        }
        if !self.num_beams.is_multiple_of(self.num_groups) {
            return bad("num_beams must be divisible by num_groups");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        if !(self.length_penalty >= 0.0) || !(self.diversity_penalty >= 0.0) {
            return bad("penalties must be non-negative");
        }
        Ok(())
    }

    fn beams_per_group(&self) -> usize {
        self.num_beams / self.num_groups
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("query {0:?} is empty")]
    EmptyQuery(String),
    #[error("invalid decode config: {0}")]
    Config(String),
    #[error("scorer covers {scorer} tokens but the index holds ids up to {index}")]
    VocabMismatch { index: usize, scorer: usize },
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedDoc {
    pub doc_id: u32,
    pub clue: Vec<TokenId>,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Beams that resolved to a single document.
    pub finalized: usize,
    /// Beams dropped because their text maps to several documents.
    pub dropped_ambiguous: usize,
    /// Beams with no allowable continuation.
    pub dead_ends: usize,
    /// Free-text outputs that do not occur in the corpus.
    pub discarded_absent: usize,
    pub steps: usize,
    pub scorer_calls: usize,
    /// Wall time of every scorer call, in milliseconds. Not serialized so
    /// that result files stay reproducible.
    #[serde(skip)]
    pub scorer_latency_ms: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub ranked: Vec<RankedDoc>,
    pub diagnostics: Diagnostics,
}

/// Every beam state carries the index interval of its tokens.
#[derive(Clone, Debug)]
struct Beam {
    tokens: Vec<TokenId>,
    interval: SearchInterval,
    logprob: f64,
}

struct Candidate {
    beam: usize,
    token: TokenId,
    logprob: f64,
    rank: f64,
}

/// Log-probabilities of `allowed` renormalized over `allowed`. Tokens the
/// scorer rules out stay at `-inf`.
pub fn renormalized_step<S: TokenScorer + ?Sized>(
    scorer: &S,
    query: &Query,
    context: &[TokenId],
    allowed: &[TokenId],
) -> Result<Vec<f64>, ScorerError> {
    let raw = scorer.score_tokens(query, context, allowed)?;
    let z = logsumexp(&raw);
    if z == f64::NEG_INFINITY {
        return Ok(vec![f64::NEG_INFINITY; raw.len()]);
    }
    Ok(raw.into_iter().map(|x| x - z).collect())
}

/// Score of `tokens` under the index-masked, renormalized scorer, summed
/// left to right exactly as the decoder accumulates it.
pub fn constrained_sequence_score<S: TokenScorer + ?Sized>(
    scorer: &S,
    index: &ClueIndex,
    query: &Query,
    tokens: &[TokenId],
) -> Result<f64, DecodeError> {
    let mut interval = index.full_interval();
    let mut total = 0.0;
    for (j, &t) in tokens.iter().enumerate() {
        let next = index.get_next(interval).unwrap_or_default();
        let allowed: Vec<TokenId> = next.iter().map(|(t, _)| *t).collect();
        let Some(pos) = allowed.iter().position(|&a| a == t) else {
            return Ok(f64::NEG_INFINITY);
        };
        total += renormalized_step(scorer, query, &tokens[..j], &allowed)?[pos];
        interval = next[pos].1;
    }
    Ok(total)
}

struct Search<'a, S: ?Sized> {
    query: &'a Query,
    index: &'a ClueIndex,
    scorer: &'a S,
    config: &'a DecodeConfig,
    diag: Diagnostics,
    finished: Vec<RankedDoc>,
}

enum StepOutcome {
    Grow,
    Finalize(u32),
    Drop,
    Discard,
}

impl<'a, S: TokenScorer + ?Sized> Search<'a, S> {
    fn score(&mut self, context: &[TokenId], allowed: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        let started = Instant::now();
        let out = renormalized_step(self.scorer, self.query, context, allowed);
        self.diag.scorer_calls += 1;
        self.diag.scorer_latency_ms.push(started.elapsed().as_secs_f64() * 1e3);
        out
    }

    fn free_vocab(&self) -> Vec<TokenId> {
        (FIRST_TOKEN..self.scorer.vocab_size() as TokenId).collect()
    }

    fn step_limit(&self) -> usize {
        match self.config.strategy {
            Strategy::KnowledgeClue | Strategy::FreeText => self.config.max_len,
            // whole documents (or their first sentence) plus the closing separator
            Strategy::FullDocument | Strategy::FirstSentence => {
                (0..self.index.doc_count() as u32)
                    .map(|d| self.index.doc_len(d))
                    .max()
                    .unwrap_or(0)
                    + 1
            }
        }
    }

    fn root(&self) -> Beam {
        let interval = match self.config.strategy {
            Strategy::FullDocument | Strategy::FirstSentence => self.index.doc_start_interval(),
            _ => self.index.full_interval(),
        };
        Beam {
            tokens: Vec::new(),
            interval,
            logprob: 0.0,
        }
    }

    /// Allowable next tokens, or `None` for a dead end.
    fn allowed(&self, beam: &Beam) -> Option<Vec<TokenId>> {
        match self.config.strategy {
            Strategy::FreeText => Some(self.free_vocab()),
            Strategy::KnowledgeClue => {
                let next = self.index.get_next(beam.interval).ok()?;
                (!next.is_empty()).then(|| next.into_iter().map(|(t, _)| t).collect())
            }
            Strategy::FullDocument | Strategy::FirstSentence => {
                let mut toks: Vec<TokenId> = self
                    .index
                    .get_next(beam.interval)
                    .ok()?
                    .into_iter()
                    .map(|(t, _)| t)
                    .collect();
                if !beam.tokens.is_empty() && !self.index.extend(beam.interval, SEP).is_empty() {
                    toks.insert(0, SEP);
                }
                (!toks.is_empty()).then_some(toks)
            }
        }
    }

    fn outcome(&self, token: TokenId, child: SearchInterval, len: usize) -> StepOutcome {
        let distinct = |iv| match self.index.valid_distinct(iv) {
            Distinct::Unique(d) => StepOutcome::Finalize(d),
            Distinct::Ambiguous => StepOutcome::Drop,
            Distinct::Absent => StepOutcome::Discard,
        };
        match self.config.strategy {
            Strategy::KnowledgeClue | Strategy::FreeText => {
                if len < self.config.min_len {
                    return StepOutcome::Grow;
                }
                match distinct(child) {
                    StepOutcome::Drop => StepOutcome::Grow,
                    other => other,
                }
            }
            Strategy::FullDocument => {
                if token == SEP {
                    distinct(child)
                } else {
                    StepOutcome::Grow
                }
            }
            Strategy::FirstSentence => {
                if token == SEP || self.config.terminators.contains(&token) {
                    distinct(child)
                } else {
                    StepOutcome::Grow
                }
            }
        }
    }

    fn finalize(&mut self, tokens: Vec<TokenId>, logprob: f64, doc: u32) {
        let clue: Vec<TokenId> = tokens.into_iter().filter(|&t| t != SEP).collect();
        let over = clue.len().saturating_sub(self.config.min_len) as f64;
        self.diag.finalized += 1;
        self.finished.push(RankedDoc {
            doc_id: doc,
            score: logprob - self.config.length_penalty * over,
            clue,
        });
    }

    fn run(mut self) -> Result<RetrievalResult, DecodeError> {
        let k = self.config.beams_per_group();
        let groups = self.config.num_groups;
        let mut beams: Vec<Vec<Beam>> = vec![vec![self.root()]; groups];
        let mut slots = vec![k; groups];
        let limit = self.step_limit();
        for step in 1..=limit {
            if beams.iter().all(Vec::is_empty) {
                break;
            }
            self.diag.steps = step;
            let mut picked: HashMap<TokenId, usize> = HashMap::new();
            for g in 0..groups {
                let group = std::mem::take(&mut beams[g]);
                let mut cands: Vec<Candidate> = Vec::new();
                let mut alive: Vec<(Beam, Vec<TokenId>)> = Vec::new();
                for beam in group {
                    match self.allowed(&beam) {
                        Some(toks) => alive.push((beam, toks)),
                        None => self.diag.dead_ends += 1,
                    }
                }
                for (bi, (beam, toks)) in alive.iter().enumerate() {
                    let lps = self.score(&beam.tokens, toks)?;
                    for (&t, lp) in toks.iter().zip(lps) {
                        if lp == f64::NEG_INFINITY {
                            continue;
                        }
                        let penalty = self.config.diversity_penalty * picked.get(&t).copied().unwrap_or(0) as f64;
                        cands.push(Candidate {
                            beam: bi,
                            token: t,
                            logprob: beam.logprob + lp,
                            rank: beam.logprob + lp - penalty,
                        });
                    }
                }
                cands.sort_by(|a, b| {
                    b.rank
                        .partial_cmp(&a.rank)
                        .unwrap_or(Ordering::Equal)
                        .then(a.beam.cmp(&b.beam))
                        .then(a.token.cmp(&b.token))
                });
                cands.truncate(slots[g]);
                let mut next = Vec::with_capacity(cands.len());
                for c in cands {
                    *picked.entry(c.token).or_insert(0) += 1;
                    let parent = &alive[c.beam].0;
                    let child = self.index.extend(parent.interval, c.token);
                    let mut tokens = parent.tokens.clone();
                    tokens.push(c.token);
                    match self.outcome(c.token, child, tokens.len()) {
                        StepOutcome::Grow => next.push(Beam {
                            tokens,
                            interval: child,
                            logprob: c.logprob,
                        }),
                        StepOutcome::Finalize(d) => self.finalize(tokens, c.logprob, d),
                        StepOutcome::Drop => self.diag.dropped_ambiguous += 1,
                        StepOutcome::Discard => self.diag.discarded_absent += 1,
                    }
                }
                // past the minimum length, finished beams give up their slot
                let shrinks = matches!(self.config.strategy, Strategy::KnowledgeClue | Strategy::FreeText);
                if shrinks && step >= self.config.min_len {
                    slots[g] = next.len();
                }
                beams[g] = next;
            }
        }
        // Whatever is still growing never became unique.
        for group in &beams {
            for beam in group {
                if self.config.strategy == Strategy::FreeText && beam.interval.is_empty() {
                    self.diag.discarded_absent += 1;
                } else {
                    self.diag.dropped_ambiguous += 1;
                }
            }
        }
        Ok(RetrievalResult {
            query_id: self.query.id.clone(),
            ranked: rank(std::mem::take(&mut self.finished)),
            diagnostics: self.diag,
        })
    }
}

fn better(a: &RankedDoc, b: &RankedDoc) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.clue.len().cmp(&b.clue.len()))
        .then(a.doc_id.cmp(&b.doc_id))
        .then(a.clue.cmp(&b.clue))
}

/// Best clue per document, documents by descending score, then shorter
/// clue, then lower id.
fn rank(mut finished: Vec<RankedDoc>) -> Vec<RankedDoc> {
    finished.sort_by(better);
    let mut seen = std::collections::HashSet::new();
    finished.retain(|r| seen.insert(r.doc_id));
    finished
}

fn check<S: TokenScorer + ?Sized>(
    query: &Query,
    index: &ClueIndex,
    scorer: &S,
    config: &DecodeConfig,
) -> Result<(), DecodeError> {
    config.validate()?;
    if query.text_tokens.is_empty() {
        return Err(DecodeError::EmptyQuery(query.id.clone()));
    }
    if scorer.vocab_size() < index.vocab_bound() {
        return Err(DecodeError::VocabMismatch {
            index: index.vocab_bound(),
            scorer: scorer.vocab_size(),
        });
    }
    Ok(())
}

/// Decodes one query with the strategy named in `config`.
pub fn decode<S: TokenScorer + ?Sized>(
    query: &Query,
    index: &ClueIndex,
    scorer: &S,
    config: &DecodeConfig,
) -> Result<RetrievalResult, DecodeError> {
    check(query, index, scorer, config)?;
    Search {
        query,
        index,
        scorer,
        config,
        diag: Diagnostics::default(),
        finished: Vec::new(),
    }
    .run()
}

/// Decodes one query with an explicit strategy, other settings from `config`.
pub fn decode_strategy_variants<S: TokenScorer + ?Sized>(
    query: &Query,
    index: &ClueIndex,
    scorer: &S,
    config: &DecodeConfig,
    strategy: Strategy,
) -> Result<RetrievalResult, DecodeError> {
    let config = DecodeConfig {
        strategy,
        ..config.clone()
    };
    decode(query, index, scorer, &config)
}

/// Independent decodes, in input order. A failing query yields an `Err` in
/// its slot and the rest of the batch still runs.
pub fn batch_retrieve<S: TokenScorer + ?Sized>(
    queries: &[Query],
    index: &ClueIndex,
    scorer: &S,
    config: &DecodeConfig,
) -> Vec<Result<RetrievalResult, DecodeError>> {
    queries.par_iter().map(|q| decode(q, index, scorer, config)).collect()
}
