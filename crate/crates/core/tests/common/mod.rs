//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use clue_core::corpus::{KnowledgeBase, Query, RawDocument, TokenId};
use clue_core::decoder::Strategy;
use clue_core::fm_index::{ClueIndex, Distinct, Occurrence};
use clue_core::scorer::{ScorerError, TokenScorer};
use clue_core::seed::derive_seed;

pub fn kb_from_texts(texts: &[String]) -> KnowledgeBase {
    KnowledgeBase::ingest(
        texts
            .iter()
            .map(|t| RawDocument::new("", t.as_str()))
            .collect::<Vec<_>>(),
        Default::default(),
    )
    .expect("ingest")
}

pub fn kb_and_index(docs: Vec<RawDocument>) -> (KnowledgeBase, ClueIndex) {
    let kb = KnowledgeBase::ingest(docs, Default::default()).expect("ingest");
    let index = ClueIndex::build(&kb).expect("build");
    (kb, index)
}

/// Every window of up to `max_len` tokens, enumerated position by position.
pub struct NaiveScanner {
    docs: Vec<Vec<TokenId>>,
    windows: HashMap<Vec<TokenId>, Vec<Occurrence>>,
    max_len: usize,
}

impl NaiveScanner {
    pub fn new(kb: &KnowledgeBase, max_len: usize) -> Self {
        let docs: Vec<Vec<TokenId>> = kb.docs().iter().map(|d| d.tokens.clone()).collect();
        let mut windows: HashMap<Vec<TokenId>, Vec<Occurrence>> = HashMap::new();
        for (d, toks) in docs.iter().enumerate() {
            for start in 0..toks.len() {
                for len in 1..=max_len.min(toks.len() - start) {
                    windows
                        .entry(toks[start..start + len].to_vec())
                        .or_default()
                        .push(Occurrence {
                            doc: d as u32,
                            offset: start as u32,
                        });
                }
            }
        }
        Self { docs, windows, max_len }
    }

    /// Patterns of length 1..=max_len that occur somewhere.
    pub fn present(&self) -> impl Iterator<Item = &Vec<TokenId>> {
        self.windows.keys()
    }

    /// Occurrences sorted by (doc, offset); works for any pattern length.
    pub fn locate(&self, pattern: &[TokenId]) -> Vec<Occurrence> {
        if pattern.len() <= self.max_len {
            return self.windows.get(pattern).cloned().unwrap_or_default();
        }
        let mut out = Vec::new();
        for (d, toks) in self.docs.iter().enumerate() {
            for (start, w) in toks.windows(pattern.len()).enumerate() {
                if w == pattern {
                    out.push(Occurrence {
                        doc: d as u32,
                        offset: start as u32,
                    });
                }
            }
        }
        out
    }

    pub fn count(&self, pattern: &[TokenId]) -> usize {
        self.locate(pattern).len()
    }

    /// Tokens that follow some occurrence inside the same document.
    pub fn next_tokens(&self, pattern: &[TokenId]) -> BTreeSet<TokenId> {
        if pattern.is_empty() {
            return self.docs.iter().flatten().copied().collect();
        }
        self.locate(pattern)
            .iter()
            .filter_map(|o| {
                self.docs[o.doc as usize]
                    .get(o.offset as usize + pattern.len())
                    .copied()
            })
            .collect()
    }

    pub fn distinct(&self, pattern: &[TokenId]) -> Distinct {
        let docs: BTreeSet<u32> = self.locate(pattern).iter().map(|o| o.doc).collect();
        match docs.len() {
            0 => Distinct::Absent,
            1 => Distinct::Unique(*docs.iter().next().unwrap()),
            _ => Distinct::Ambiguous,
        }
    }

    pub fn doc_tokens(&self, doc: u32) -> &[TokenId] {
        &self.docs[doc as usize]
    }

    /// Documents a decoded clue identifies under `strategy`. Free clues
    /// match anywhere; anchored ones match at a document start, and must
    /// cover the whole document unless they end on a terminator.
    pub fn resolve(&self, strategy: Strategy, clue: &[TokenId], terminators: &[TokenId]) -> BTreeSet<u32> {
        let docs = |pred: &dyn Fn(&[TokenId]) -> bool| -> BTreeSet<u32> {
            (0..self.docs.len() as u32)
                .filter(|&d| pred(&self.docs[d as usize]))
                .collect()
        };
        match strategy {
            Strategy::KnowledgeClue | Strategy::FreeText => self.locate(clue).iter().map(|o| o.doc).collect(),
            Strategy::FullDocument => docs(&|d| d == clue),
            Strategy::FirstSentence if clue.last().is_some_and(|t| terminators.contains(t)) => {
                docs(&|d| d.starts_with(clue))
            }
            Strategy::FirstSentence => docs(&|d| d == clue),
        }
    }
}

/// Checks count, locate, get_next and valid_distinct against the scanner
/// for every pattern up to the scanner's window length, including every
/// one-token extension of a present pattern that does not occur. Returns
/// the number of patterns checked, or a description of the first mismatch.
pub fn check_index_against_scanner(index: &ClueIndex, scan: &NaiveScanner) -> Result<usize, String> {
    let alphabet: Vec<TokenId> = scan.next_tokens(&[]).into_iter().collect();
    let mut checked = 0;

    // the empty pattern
    let root = index.full_interval();
    let next: BTreeSet<TokenId> = index
        .get_next(root)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|(t, _)| *t)
        .collect();
    if next != scan.next_tokens(&[]) {
        return Err(format!("get_next(empty) = {next:?}"));
    }

    let mut patterns: Vec<&Vec<TokenId>> = scan.present().collect();
    patterns.sort();
    for p in patterns {
        checked += 1;
        let iv = index.interval_of(p);
        let want = scan.locate(p);
        if iv.width() != want.len() || index.count(p) != want.len() {
            return Err(format!("count({p:?}) = {} want {}", iv.width(), want.len()));
        }
        let mut got = index.locate(iv);
        got.sort();
        if got != want {
            return Err(format!("locate({p:?}) = {got:?} want {want:?}"));
        }
        let d = index.valid_distinct(iv);
        if d != scan.distinct(p) {
            return Err(format!("valid_distinct({p:?}) = {d:?} want {:?}", scan.distinct(p)));
        }
        let children = index.get_next(iv).map_err(|e| e.to_string())?;
        let got_next: BTreeSet<TokenId> = children.iter().map(|(t, _)| *t).collect();
        let want_next = scan.next_tokens(p);
        if got_next != want_next {
            return Err(format!("get_next({p:?}) = {got_next:?} want {want_next:?}"));
        }
        for (t, child) in &children {
            if *child != index.extend(iv, *t) || child.width() > iv.width() {
                return Err(format!("child interval of {p:?}+{t} disagrees with extend"));
            }
        }
        if p.len() < scan.max_len {
            for &t in &alphabet {
                if want_next.contains(&t) {
                    continue;
                }
                checked += 1;
                let mut q = p.clone();
                q.push(t);
                if !index.extend(iv, t).is_empty() || index.count(&q) != 0 {
                    return Err(format!("absent pattern {q:?} reported present"));
                }
                if index.valid_distinct(index.interval_of(&q)) != Distinct::Absent {
                    return Err(format!("absent pattern {q:?} not reported absent"));
                }
            }
        }
    }
    Ok(checked)
}

/// Scorer with pseudo-random logits derived from (seed, query, context,
/// token). Deterministic, and every token gets a finite score.
#[derive(Clone, Debug)]
pub struct RandomScorer {
    pub vocab: usize,
    pub seed: u64,
    /// Logit spread; larger makes the beam search greedier.
    pub temperature: f64,
}

impl RandomScorer {
    fn logit(&self, query: &Query, context: &[TokenId], t: TokenId) -> f64 {
        let mut parts: Vec<u64> = Vec::with_capacity(context.len() + 3);
        parts.extend(query.text_tokens.iter().map(|&x| x as u64));
        parts.push(u64::MAX);
        parts.extend(context.iter().map(|&x| x as u64));
        parts.push(t as u64);
        let h = derive_seed(self.seed, &parts);
        (h >> 11) as f64 / (1u64 << 53) as f64 * self.temperature
    }
}

impl TokenScorer for RandomScorer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn score_next(&self, query: &Query, context: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        let logits: Vec<f64> = (0..self.vocab)
            .map(|t| self.logit(query, context, t as TokenId))
            .collect();
        let z = clue_core::scorer::logsumexp(&logits);
        Ok(logits.into_iter().map(|l| l - z).collect())
    }
}
