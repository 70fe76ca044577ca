//! Pseudo-relevance P@K / R@K and the benchmark and ablation runners.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{KnowledgeBase, Query, Tokenizer, TokenizerMode};
use crate::decoder::{batch_retrieve, DecodeConfig, RetrievalResult, Strategy};
use crate::fm_index::ClueIndex;
use crate::scorer::TokenScorer;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no queries to evaluate")]
    EmptyQuerySet,
    #[error("invalid metric {0:?}, expected P@K or R@K with K >= 1")]
    BadMetric(String),
    #[error("no results for queries: {}", .0.join(", "))]
    MissingResults(Vec<String>),
    #[error("no strategies to compare")]
    NoStrategies,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeMode {
    /// Relevant iff the document contains a gold answer after normalization.
    AnswerSubstring,
    /// Relevant iff listed among the query's gold document ids.
    ExplicitQrels,
}

/// The relevant set of one query.
#[derive(Clone, Debug, PartialEq)]
pub struct Judgment {
    pub mode: JudgeMode,
    pub relevant: BTreeSet<u32>,
}

impl Judgment {
    pub fn is_relevant(&self, doc: u32) -> bool {
        self.relevant.contains(&doc)
    }

    fn hits(&self, ranked: &[u32], k: usize) -> usize {
        let mut seen = BTreeSet::new();
        ranked
            .iter()
            .take(k)
            .filter(|&&d| seen.insert(d) && self.is_relevant(d))
            .count()
    }
}

/// Judges queries against a knowledge base. Explicit gold ids win over
/// answer strings; queries with neither cannot be judged.
pub struct RelevanceJudge<'a> {
    kb: &'a KnowledgeBase,
    normalized_docs: Vec<String>,
}

impl<'a> RelevanceJudge<'a> {
    pub fn new(kb: &'a KnowledgeBase) -> Self {
        let tok = kb.tokenizer();
        let normalized_docs = kb.docs().par_iter().map(|d| normalize(tok, &d.raw_text)).collect();
        Self { kb, normalized_docs }
    }

    pub fn judge(&self, query: &Query) -> Option<Judgment> {
        if let Some(ids) = query.gold_doc_ids.as_ref().filter(|v| !v.is_empty()) {
            return Some(Judgment {
                mode: JudgeMode::ExplicitQrels,
                relevant: ids.iter().copied().collect(),
            });
        }
        let answers: Vec<String> = query
            .gold_answers
            .iter()
            .flatten()
            .map(|a| normalize(self.kb.tokenizer(), a))
            .filter(|a| !a.is_empty())
            .collect();
        if answers.is_empty() {
            return None;
        }
        let relevant = self
            .normalized_docs
            .iter()
            .enumerate()
            .filter(|(_, text)| answers.iter().any(|a| text.contains(a.as_str())))
            .map(|(i, _)| i as u32)
            .collect();
        Some(Judgment {
            mode: JudgeMode::AnswerSubstring,
            relevant,
        })
    }
}

/// Tokenizer-canonical text. In word mode it is padded with spaces so that
/// substring tests only match whole words.
fn normalize(tok: &Tokenizer, text: &str) -> String {
    let canon = tok.canonical(text);
    match tok.mode() {
        _ if canon.trim().is_empty() => String::new(),
        TokenizerMode::Word => format!(" {canon} "),
        TokenizerMode::Byte => canon,
    }
}

/// `|relevant ∩ top-K| / K`; missing slots count as non-relevant.
pub fn precision_at_k(ranked: &[u32], judgment: &Judgment, k: usize) -> f64 {
    assert!(k >= 1, "K must be at least 1");
    judgment.hits(ranked, k) as f64 / k as f64
}

/// Hit@K for answer judging, `|relevant ∩ top-K| / |relevant|` for qrels.
pub fn recall_at_k(ranked: &[u32], judgment: &Judgment, k: usize) -> f64 {
    assert!(k >= 1, "K must be at least 1");
    let hits = judgment.hits(ranked, k);
    match judgment.mode {
        JudgeMode::AnswerSubstring => (hits > 0) as u8 as f64,
        JudgeMode::ExplicitQrels if judgment.relevant.is_empty() => 0.0,
        JudgeMode::ExplicitQrels => hits as f64 / judgment.relevant.len() as f64,
    }
}

/// Expected hit@K when `k` of `n` documents are drawn uniformly without
/// replacement and `relevant` of them count: `1 - C(n-r, k) / C(n, k)`.
pub fn random_recall_at_k(n: usize, relevant: usize, k: usize) -> f64 {
    let k = k.min(n);
    let miss: f64 = (0..k)
        .map(|i| (n.saturating_sub(relevant + i)) as f64 / (n - i) as f64)
        .product();
    1.0 - miss
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Precision(usize),
    Recall(usize),
}

impl Metric {
    pub fn compute(&self, ranked: &[u32], judgment: &Judgment) -> f64 {
        match *self {
            Metric::Precision(k) => precision_at_k(ranked, judgment, k),
            Metric::Recall(k) => recall_at_k(ranked, judgment, k),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::Precision(k) => write!(f, "P@{k}"),
            Metric::Recall(k) => write!(f, "R@{k}"),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, EvalError> {
        let bad = || EvalError::BadMetric(s.to_owned());
        let (kind, k) = s.trim().split_once('@').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        match kind.to_ascii_uppercase().as_str() {
            "P" => Ok(Metric::Precision(k)),
            "R" => Ok(Metric::Recall(k)),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub metrics: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            metrics: ["P@1", "P@5", "R@5", "R@10"].map(String::from).to_vec(),
        }
    }
}

impl EvalConfig {
    pub fn parsed(&self) -> Result<Vec<Metric>, EvalError> {
        self.metrics.iter().map(|m| m.parse()).collect()
    }
}

/// Hashes identifying what produced a report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub index_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub relevant: usize,
    pub retrieved: Vec<u32>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DecodeTotals {
    pub finalized: usize,
    pub dropped_ambiguous: usize,
    pub dead_ends: usize,
    pub discarded_absent: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub label: String,
    pub meta: RunMeta,
    /// Macro averages over judged queries, in the requested order.
    pub metrics: Vec<(String, f64)>,
    pub judged: usize,
    /// Queries without judging data.
    pub excluded: Vec<String>,
    /// Queries whose decode failed; scored as empty rankings.
    pub failed: Vec<(String, String)>,
    pub totals: DecodeTotals,
    pub per_query: Vec<QueryMetrics>,
}

impl MetricReport {
    pub fn get(&self, metric: &str) -> Option<f64> {
        self.metrics.iter().find(|(m, _)| m == metric).map(|(_, v)| *v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Scores ranked doc lists against judgments. `results` pairs query ids
/// with ranked doc ids; every judged query must appear.
pub fn evaluate_rankings(
    label: &str,
    queries: &[Query],
    results: &BTreeMap<String, Vec<u32>>,
    judge: &RelevanceJudge,
    metrics: &[Metric],
    meta: RunMeta,
) -> Result<MetricReport, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::EmptyQuerySet);
    }
    let judged: Vec<(&Query, Option<Judgment>)> = queries.par_iter().map(|q| (q, judge.judge(q))).collect();
    let missing: Vec<String> = judged
        .iter()
        .filter(|(q, j)| j.is_some() && !results.contains_key(&q.id))
        .map(|(q, _)| q.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingResults(missing));
    }
    let excluded = judged
        .iter()
        .filter(|(_, j)| j.is_none())
        .map(|(q, _)| q.id.clone())
        .collect();
    let per_query: Vec<QueryMetrics> = judged
        .par_iter()
        .filter_map(|(q, j)| {
            let j = j.as_ref()?;
            let ranked = &results[&q.id];
            Some(QueryMetrics {
                query_id: q.id.clone(),
                relevant: j.relevant.len(),
                retrieved: ranked.clone(),
                metrics: metrics.iter().map(|m| (m.to_string(), m.compute(ranked, j))).collect(),
            })
        })
        .collect();
    let n = per_query.len();
    let averages = metrics
        .iter()
        .map(|m| {
            let key = m.to_string();
            // sequential sum keeps the average bit-identical across runs
            let sum: f64 = per_query.iter().map(|p| p.metrics[&key]).sum();
            (key, if n == 0 { 0.0 } else { sum / n as f64 })
        })
        .collect();
    Ok(MetricReport {
        label: label.to_owned(),
        meta,
        metrics: averages,
        judged: n,
        excluded,
        failed: Vec::new(),
        totals: DecodeTotals::default(),
        per_query,
    })
}

/// Retrieves every query and scores the rankings.
pub fn run_benchmark<S: TokenScorer + ?Sized>(
    queries: &[Query],
    kb: &KnowledgeBase,
    index: &ClueIndex,
    scorer: &S,
    decode: &DecodeConfig,
    eval: &EvalConfig,
    meta: RunMeta,
) -> Result<MetricReport, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::EmptyQuerySet);
    }
    let metrics = eval.parsed()?;
    let outcomes = batch_retrieve(queries, index, scorer, decode);
    let judge = RelevanceJudge::new(kb);
    report_from_outcomes(decode.strategy.name(), queries, &outcomes, &judge, &metrics, meta)
}

fn report_from_outcomes(
    label: &str,
    queries: &[Query],
    outcomes: &[Result<RetrievalResult, crate::decoder::DecodeError>],
    judge: &RelevanceJudge,
    metrics: &[Metric],
    meta: RunMeta,
) -> Result<MetricReport, EvalError> {
    let mut rankings = BTreeMap::new();
    let mut failed = Vec::new();
    let mut totals = DecodeTotals::default();
    for (q, out) in queries.iter().zip(outcomes) {
        match out {
            Ok(r) => {
                rankings.insert(q.id.clone(), r.ranked.iter().map(|d| d.doc_id).collect());
                let d = &r.diagnostics;
                totals.finalized += d.finalized;
                totals.dropped_ambiguous += d.dropped_ambiguous;
                totals.dead_ends += d.dead_ends;
                totals.discarded_absent += d.discarded_absent;
            }
            Err(e) => {
                rankings.insert(q.id.clone(), Vec::new());
                failed.push((q.id.clone(), e.to_string()));
            }
        }
    }
    let mut report = evaluate_rankings(label, queries, &rankings, judge, metrics, meta)?;
    report.failed = failed;
    report.totals = totals;
    Ok(report)
}

/// One report per strategy, all other settings shared.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation<S: TokenScorer + ?Sized>(
    strategies: &[Strategy],
    queries: &[Query],
    kb: &KnowledgeBase,
    index: &ClueIndex,
    scorer: &S,
    decode: &DecodeConfig,
    eval: &EvalConfig,
    meta: RunMeta,
) -> Result<Vec<MetricReport>, EvalError> {
    if strategies.is_empty() {
        return Err(EvalError::NoStrategies);
    }
    if queries.is_empty() {
        return Err(EvalError::EmptyQuerySet);
    }
    let metrics = eval.parsed()?;
    let judge = RelevanceJudge::new(kb);
    strategies
        .iter()
        .map(|&s| {
            let cfg = DecodeConfig {
                strategy: s,
                ..decode.clone()
            };
            let outcomes = batch_retrieve(queries, index, scorer, &cfg);
            report_from_outcomes(s.name(), queries, &outcomes, &judge, &metrics, meta.clone())
        })
        .collect()
}

/// Fixed-width table, one row per report, values in percent.
pub fn render_table(reports: &[MetricReport]) -> String {
    let label_w = reports.iter().map(|r| r.label.len()).max().unwrap_or(0).max(8);
    let names: Vec<&str> = reports
        .first()
        .map(|r| r.metrics.iter().map(|(m, _)| m.as_str()).collect())
        .unwrap_or_default();
    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "run");
    for n in &names {
        let _ = write!(out, " {n:>7}");
    }
    let _ = writeln!(out, " {:>7} {:>9} {:>9}", "queries", "ambiguous", "absent");
    for r in reports {
        let _ = write!(out, "{:<label_w$}", r.label);
        for (_, v) in &r.metrics {
            let _ = write!(out, " {:>7.1}", v * 100.0);
        }
        let _ = writeln!(
            out,
            " {:>7} {:>9} {:>9}",
            r.judged, r.totals.dropped_ambiguous, r.totals.discarded_absent
        );
    }
    out
}
