/// Fixed-size bit set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub(crate) struct BitSet {
    words: Vec<u64>,
}

impl BitSet {
    pub fn new(len: usize) -> Self {
        BitSet {
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_words(words: Vec<u64>, len: usize) -> Self {
        debug_assert_eq!(words.len(), len.div_ceil(64));
        BitSet { words }
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.words[i >> 6] & (1 << (i & 63)) != 0
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        self.words[i >> 6] |= 1 << (i & 63);
    }

    /// Sets bit `i`; returns whether it was previously clear.
    #[inline]
    pub fn insert(&mut self, i: usize) -> bool {
        let w = &mut self.words[i >> 6];
        let m = 1u64 << (i & 63);
        let fresh = *w & m == 0;
        *w |= m;
        fresh
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// Bit set with constant-time rank, mapping set positions to dense slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct RankBitmap {
    bits: BitSet,
    /// Number of set bits before each word.
    ranks: Vec<u32>,
}

impl RankBitmap {
    pub fn new(bits: BitSet) -> Self {
        let mut ranks = Vec::with_capacity(bits.words.len());
        let mut acc = 0u32;
        for w in &bits.words {
            ranks.push(acc);
            acc += w.count_ones();
        }
        RankBitmap { bits, ranks }
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.bits.get(i)
    }

    /// Slot of position `i` if set.
    #[inline]
    pub fn slot(&self, i: usize) -> Option<usize> {
        let w = self.bits.words[i >> 6];
        let m = 1u64 << (i & 63);
        if w & m == 0 {
            return None;
        }
        Some(self.ranks[i >> 6] as usize + (w & (m - 1)).count_ones() as usize)
    }

    pub fn bits(&self) -> &BitSet {
        &self.bits
    }

    pub fn memory_bytes(&self) -> usize {
        self.bits.words.len() * 8 + self.ranks.len() * 4
    }
}
