use super::bits::RankBits;
use crate::store::{Reader, StoreError, Writer};

/// Wavelet matrix over `u32` symbols: rank in O(log σ) and enumeration of
/// the distinct symbols of a range in O(k log σ).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WaveletMatrix {
    levels: Vec<RankBits>,
    zeros: Vec<usize>,
    len: usize,
}

impl WaveletMatrix {
    pub fn new(seq: &[u32], sigma: usize) -> Self {
        let width = (usize::BITS - sigma.saturating_sub(1).leading_zeros()).max(1) as usize;
        let mut cur = seq.to_vec();
        let mut next_zero = Vec::with_capacity(seq.len());
        let mut next_one = Vec::with_capacity(seq.len());
        let mut levels = Vec::with_capacity(width);
        let mut zeros = Vec::with_capacity(width);
        for level in 0..width {
            let shift = width - 1 - level;
            let bv = RankBits::from_fn(cur.len(), |i| (cur[i] >> shift) & 1 == 1);
            next_zero.clear();
            next_one.clear();
            for &c in &cur {
                if (c >> shift) & 1 == 1 {
                    next_one.push(c);
                } else {
                    next_zero.push(c);
                }
            }
            zeros.push(next_zero.len());
            levels.push(bv);
            cur.clear();
            cur.extend_from_slice(&next_zero);
            cur.extend_from_slice(&next_one);
        }
        Self {
            levels,
            zeros,
            len: seq.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn width(&self) -> usize {
        self.levels.len()
    }

    /// Occurrences of `c` in `[0, i)`.
    pub fn rank(&self, c: u32, i: usize) -> usize {
        if self.width() < 32 && (c >> self.width()) != 0 {
            return 0;
        }
        let (mut s, mut e) = (0, i);
        for (level, bv) in self.levels.iter().enumerate() {
            if (c >> (self.width() - 1 - level)) & 1 == 0 {
                s = bv.rank0(s);
                e = bv.rank0(e);
            } else {
                s = self.zeros[level] + bv.rank1(s);
                e = self.zeros[level] + bv.rank1(e);
            }
        }
        e - s
    }

    /// Symbol at `i` together with its rank at `i`.
    pub fn access_rank(&self, i: usize) -> (u32, usize) {
        let (mut pos, mut s, mut c) = (i, 0, 0u32);
        for (level, bv) in self.levels.iter().enumerate() {
            if bv.get(pos) {
                c = (c << 1) | 1;
                pos = self.zeros[level] + bv.rank1(pos);
                s = self.zeros[level] + bv.rank1(s);
            } else {
                c <<= 1;
                pos = bv.rank0(pos);
                s = bv.rank0(s);
            }
        }
        (c, pos - s)
    }

    pub fn access(&self, i: usize) -> u32 {
        self.access_rank(i).0
    }

    /// Calls `f(c, rank(c, lo), rank(c, hi))` for every distinct symbol in
    /// `[lo, hi)`, in ascending symbol order.
    pub fn distinct_in_range(&self, lo: usize, hi: usize, f: &mut impl FnMut(u32, usize, usize)) {
        if lo < hi {
            self.descend(0, 0, lo, hi, 0, f);
        }
    }

    fn descend(
        &self,
        level: usize,
        s: usize,
        lo: usize,
        hi: usize,
        prefix: u32,
        f: &mut impl FnMut(u32, usize, usize),
    ) {
        if level == self.width() {
            f(prefix, lo - s, hi - s);
            return;
        }
        let bv = &self.levels[level];
        let (s0, lo0, hi0) = (bv.rank0(s), bv.rank0(lo), bv.rank0(hi));
        if lo0 < hi0 {
            self.descend(level + 1, s0, lo0, hi0, prefix << 1, f);
        }
        let z = self.zeros[level];
        let (lo1, hi1) = (z + (lo - lo0), z + (hi - hi0));
        if lo1 < hi1 {
            self.descend(level + 1, z + (s - s0), lo1, hi1, (prefix << 1) | 1, f);
        }
    }

    pub(crate) fn write_to(&self, w: &mut Writer) {
        w.u64(self.len as u64);
        w.u32(self.levels.len() as u32);
        for (bv, &z) in self.levels.iter().zip(&self.zeros) {
            w.u64(z as u64);
            bv.write_to(w);
        }
    }

    pub(crate) fn read_from(r: &mut Reader) -> Result<Self, StoreError> {
        let len = r.usize()?;
        let width = r.u32()? as usize;
        if width == 0 || width > 32 {
            return Err(crate::store::corrupt_error("wavelet width out of range"));
        }
        let mut levels = Vec::with_capacity(width);
        let mut zeros = Vec::with_capacity(width);
        for _ in 0..width {
            let z = r.usize()?;
            let bv = RankBits::read_from(r)?;
            if bv.len() != len || z != len - bv.count_ones() {
                return Err(crate::store::corrupt_error("wavelet level inconsistent"));
            }
            zeros.push(z);
            levels.push(bv);
        }
        Ok(Self { levels, zeros, len })
    }
}
