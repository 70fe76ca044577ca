use crate::store::{Reader, StoreError, Writer};

const WORDS_PER_BLOCK: usize = 8;

/// Plain bitvector with a one-level rank directory (one cumulative count per
/// 512 bits).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankBits {
    words: Vec<u64>,
    blocks: Vec<u64>,
    len: usize,
    ones: usize,
}

impl RankBits {
    pub fn from_fn(len: usize, mut bit: impl FnMut(usize) -> bool) -> Self {
        let mut words = vec![0u64; len.div_ceil(64)];
        for i in 0..len {
            if bit(i) {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        Self::from_words(words, len)
    }

    fn from_words(words: Vec<u64>, len: usize) -> Self {
        let mut blocks = Vec::with_capacity(words.len() / WORDS_PER_BLOCK + 1);
        let mut acc = 0u64;
        for chunk in words.chunks(WORDS_PER_BLOCK) {
            blocks.push(acc);
            acc += chunk.iter().map(|w| w.count_ones() as u64).sum::<u64>();
        }
        blocks.push(acc);
        Self {
            words,
            blocks,
            len,
            ones: acc as usize,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn count_ones(&self) -> usize {
        self.ones
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    /// Number of set bits in `[0, i)`.
    #[inline]
    pub fn rank1(&self, i: usize) -> usize {
        debug_assert!(i <= self.len);
        let word = i / 64;
        let block = word / WORDS_PER_BLOCK;
        let mut r = self.blocks[block] as usize;
        for w in &self.words[block * WORDS_PER_BLOCK..word] {
            r += w.count_ones() as usize;
        }
        let rem = i % 64;
        if rem != 0 {
            r += (self.words[word] & ((1u64 << rem) - 1)).count_ones() as usize;
        }
        r
    }

    #[inline]
    pub fn rank0(&self, i: usize) -> usize {
        i - self.rank1(i)
    }

    pub(crate) fn write_to(&self, w: &mut Writer) {
        w.u64(self.len as u64);
        w.u64s(&self.words);
    }

    pub(crate) fn read_from(r: &mut Reader) -> Result<Self, StoreError> {
        let len = r.usize()?;
        let words = r.u64s()?;
        if words.len() != len.div_ceil(64) {
            return Err(crate::store::corrupt_error("bitvector length mismatch"));
        }
        Ok(Self::from_words(words, len))
    }
}
