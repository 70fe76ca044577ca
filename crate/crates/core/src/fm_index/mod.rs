//! FM-index over the separator-joined corpus.
//!
//! The indexed text is `SEP D_0 SEP D_1 ... SEP D_{N-1} SEP`, stored
//! reversed and terminated by a sentinel. Backward search over the reversed
//! text extends a pattern on the right, which is exactly what left-to-right
//! decoding needs: appending one clue token is one LF step.
//!
//! Every document is preceded by a separator, so the rows of the separator
//! symbol double as a "starts at a document boundary" anchor.

mod bits;
mod sais;
mod wavelet;

pub use bits::RankBits;
pub use sais::suffix_array;
pub use wavelet::WaveletMatrix;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{KnowledgeBase, TokenId, SEP};
use crate::store::{Reader, StoreError, Writer};

pub const DEFAULT_SAMPLE_RATE: u32 = 32;

const SENTINEL_SYM: u32 = 0;
const SEP_SYM: u32 = SEP + 1;

#[inline]
fn sym(t: TokenId) -> u32 {
    t + 1
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IndexError {
    #[error("get_next called on an empty interval")]
    EmptyInterval,
    #[error("clue occurs in more than one document")]
    Ambiguous,
    #[error("clue does not occur in the corpus")]
    Absent,
    #[error("cannot index an empty knowledge base")]
    EmptyKnowledgeBase,
}

/// Half-open row range of the occurrences of a pattern, plus the number of
/// pattern tokens (an anchoring separator is not counted).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SearchInterval {
    pub lo: usize,
    pub hi: usize,
    pub pattern_len: usize,
}

impl SearchInterval {
    pub fn width(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.lo >= self.hi
    }
}

/// Outcome of a uniqueness test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distinct {
    Unique(u32),
    Ambiguous,
    Absent,
}

/// An occurrence resolved to its document.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Occurrence {
    pub doc: u32,
    pub offset: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClueIndex {
    text_len: usize,
    sigma: usize,
    counts: Vec<u64>,
    bwt: WaveletMatrix,
    sampled: RankBits,
    samples: Vec<u32>,
    sample_rate: u32,
    doc_starts: Vec<u64>,
    doc_lens: Vec<u32>,
}

impl ClueIndex {
    pub fn build(kb: &KnowledgeBase) -> Result<Self, IndexError> {
        Self::build_with_rate(kb, DEFAULT_SAMPLE_RATE)
    }

    pub fn build_with_rate(kb: &KnowledgeBase, sample_rate: u32) -> Result<Self, IndexError> {
        if kb.is_empty() {
            return Err(IndexError::EmptyKnowledgeBase);
        }
        let sample_rate = sample_rate.max(1);
        let text_len = kb.total_tokens() + kb.len() + 1;
        let mut doc_starts = Vec::with_capacity(kb.len());
        let mut doc_lens = Vec::with_capacity(kb.len());
        let mut forward = Vec::with_capacity(text_len);
        let mut max_sym = SEP_SYM;
        for doc in kb.docs() {
            forward.push(SEP_SYM);
            doc_starts.push(forward.len() as u64);
            doc_lens.push(doc.tokens.len() as u32);
            for &t in &doc.tokens {
                let s = sym(t);
                max_sym = max_sym.max(s);
                forward.push(s);
            }
        }
        forward.push(SEP_SYM);
        debug_assert_eq!(forward.len(), text_len);

        let mut reversed = forward;
        reversed.reverse();
        reversed.push(SENTINEL_SYM);
        let sigma = max_sym as usize + 1;

        let sa = suffix_array(&reversed, sigma);
        let rows = reversed.len();
        let bwt: Vec<u32> = sa.iter().map(|&p| reversed[(p as usize + rows - 1) % rows]).collect();

        let mut counts = vec![0u64; sigma + 1];
        for &c in &reversed {
            counts[c as usize + 1] += 1;
        }
        for c in 1..=sigma {
            counts[c] += counts[c - 1];
        }
        drop(reversed);

        let sampled = RankBits::from_fn(rows, |i| sa[i].is_multiple_of(sample_rate));
        let samples: Vec<u32> = sa.iter().copied().filter(|&p| p % sample_rate == 0).collect();
        drop(sa);

        Ok(Self {
            text_len,
            sigma,
            counts,
            bwt: WaveletMatrix::new(&bwt, sigma),
            sampled,
            samples,
            sample_rate,
            doc_starts,
            doc_lens,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_starts.len()
    }

    pub fn doc_len(&self, doc: u32) -> usize {
        self.doc_lens[doc as usize] as usize
    }

    /// Number of rows (indexed symbols including separators and sentinel).
    pub fn rows(&self) -> usize {
        self.text_len + 1
    }

    /// Largest token id the index can hold plus one.
    pub fn vocab_bound(&self) -> usize {
        self.sigma - 1
    }

    /// Interval of the empty pattern: the whole index.
    pub fn full_interval(&self) -> SearchInterval {
        SearchInterval {
            lo: 0,
            hi: self.rows(),
            pattern_len: 0,
        }
    }

    /// Interval of the empty pattern anchored at document starts. Extending
    /// it yields only occurrences that begin a document.
    pub fn doc_start_interval(&self) -> SearchInterval {
        SearchInterval {
            lo: self.counts[SEP_SYM as usize] as usize,
            hi: self.counts[SEP_SYM as usize + 1] as usize,
            pattern_len: 0,
        }
    }

    /// Backward-search step: the interval of `pattern · t`.
    pub fn extend(&self, interval: SearchInterval, t: TokenId) -> SearchInterval {
        let c = sym(t);
        let pattern_len = interval.pattern_len + 1;
        if interval.is_empty() || c as usize >= self.sigma {
            return SearchInterval {
                lo: 0,
                hi: 0,
                pattern_len,
            };
        }
        let base = self.counts[c as usize] as usize;
        SearchInterval {
            lo: base + self.bwt.rank(c, interval.lo),
            hi: base + self.bwt.rank(c, interval.hi),
            pattern_len,
        }
    }

    pub fn interval_from(&self, start: SearchInterval, pattern: &[TokenId]) -> SearchInterval {
        pattern.iter().fold(start, |iv, &t| self.extend(iv, t))
    }

    pub fn interval_of(&self, pattern: &[TokenId]) -> SearchInterval {
        self.interval_from(self.full_interval(), pattern)
    }

    pub fn count(&self, pattern: &[TokenId]) -> usize {
        self.interval_of(pattern).width()
    }

    /// Every token that can follow the pattern, with its extended interval.
    /// Separators and the sentinel are never returned, so a clue cannot
    /// cross a document boundary. Tokens come back in ascending order.
    pub fn get_next(&self, interval: SearchInterval) -> Result<Vec<(TokenId, SearchInterval)>, IndexError> {
        if interval.is_empty() {
            return Err(IndexError::EmptyInterval);
        }
        let mut out = Vec::new();
        let pattern_len = interval.pattern_len + 1;
        self.bwt
            .distinct_in_range(interval.lo, interval.hi, &mut |c, rlo, rhi| {
                if c == SENTINEL_SYM || c == SEP_SYM {
                    return;
                }
                let base = self.counts[c as usize] as usize;
                out.push((
                    c - 1,
                    SearchInterval {
                        lo: base + rlo,
                        hi: base + rhi,
                        pattern_len,
                    },
                ));
            });
        Ok(out)
    }

    /// Position in the reversed text of the suffix at `row`.
    fn resolve_row(&self, mut row: usize) -> usize {
        let mut steps = 0;
        while !self.sampled.get(row) {
            let (c, rank) = self.bwt.access_rank(row);
            row = self.counts[c as usize] as usize + rank;
            steps += 1;
        }
        self.samples[self.sampled.rank1(row)] as usize + steps
    }

    fn occurrence_at_row(&self, row: usize, pattern_len: usize) -> Option<Occurrence> {
        let q = self.resolve_row(row);
        let p = self.text_len.checked_sub(q + pattern_len)?;
        self.doc_of(p)
    }

    fn doc_of(&self, p: usize) -> Option<Occurrence> {
        let idx = self.doc_starts.partition_point(|&s| s as usize <= p);
        let doc = idx.checked_sub(1)?;
        let offset = p - self.doc_starts[doc] as usize;
        (offset < self.doc_lens[doc] as usize).then_some(Occurrence {
            doc: doc as u32,
            offset: offset as u32,
        })
    }

    /// All occurrences inside documents, sorted by (doc, offset).
    pub fn locate(&self, interval: SearchInterval) -> Vec<Occurrence> {
        let mut out: Vec<Occurrence> = (interval.lo..interval.hi)
            .filter_map(|row| self.occurrence_at_row(row, interval.pattern_len))
            .collect();
        out.sort_unstable();
        out
    }

    /// Whether every occurrence lies in one document. Stops at the first
    /// occurrence from a second document.
    pub fn valid_distinct(&self, interval: SearchInterval) -> Distinct {
        let mut found: Option<u32> = None;
        for row in interval.lo..interval.hi {
            if let Some(occ) = self.occurrence_at_row(row, interval.pattern_len) {
                match found {
                    None => found = Some(occ.doc),
                    Some(d) if d != occ.doc => return Distinct::Ambiguous,
                    _ => {}
                }
            }
        }
        found.map_or(Distinct::Absent, Distinct::Unique)
    }

    /// Resolves a unique clue to its document.
    pub fn lookup_doc(&self, clue: &[TokenId]) -> Result<u32, IndexError> {
        match self.valid_distinct(self.interval_of(clue)) {
            Distinct::Unique(d) => Ok(d),
            Distinct::Ambiguous => Err(IndexError::Ambiguous),
            Distinct::Absent => Err(IndexError::Absent),
        }
    }

    pub(crate) fn write_to(&self, w: &mut Writer) {
        w.u64(self.text_len as u64);
        w.u64(self.sigma as u64);
        w.u32(self.sample_rate);
        w.u64s(&self.counts);
        self.bwt.write_to(w);
        self.sampled.write_to(w);
        w.u32s(&self.samples);
        w.u64s(&self.doc_starts);
        w.u32s(&self.doc_lens);
    }

    pub(crate) fn read_from(r: &mut Reader) -> Result<Self, StoreError> {
        let bad = crate::store::corrupt_error;
        let text_len = r.usize()?;
        let sigma = r.usize()?;
        let sample_rate = r.u32()?;
        let counts = r.u64s()?;
        let bwt = WaveletMatrix::read_from(r)?;
        let sampled = RankBits::read_from(r)?;
        let samples = r.u32s()?;
        let doc_starts = r.u64s()?;
        let doc_lens = r.u32s()?;
        let rows = text_len + 1;
        if counts.len() != sigma + 1 || counts.last().copied() != Some(rows as u64) {
            return Err(bad("index symbol counts inconsistent"));
        }
        if bwt.len() != rows || sampled.len() != rows || samples.len() != sampled.count_ones() {
            return Err(bad("index arrays have inconsistent lengths"));
        }
        if doc_starts.len() != doc_lens.len() || doc_starts.is_empty() || sample_rate == 0 {
            return Err(bad("index document table inconsistent"));
        }
        Ok(Self {
            text_len,
            sigma,
            counts,
            bwt,
            sampled,
            samples,
            sample_rate,
            doc_starts,
            doc_lens,
        })
    }
}
