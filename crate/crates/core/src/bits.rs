//! Packed bitstrings over GF(2).
//!
//! Bit `i` lives in word `i / 64` at position `i % 64` (LSB first). Bits past
//! `len` in the last word are always zero, so word-level equality, parity and
//! popcount never see garbage.

use std::fmt;

use rand::Rng;

#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitString {
    words: Vec<u64>,
    len: usize,
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut words: Vec<u64> = (0..len.div_ceil(64)).map(|_| rng.gen()).collect();
        mask_tail(&mut words, len);
        Self { words, len }
    }

    /// Takes ownership of packed words; bits past `len` are cleared.
    pub fn from_words(mut words: Vec<u64>, len: usize) -> Self {
        words.resize(len.div_ceil(64), 0);
        mask_tail(&mut words, len);
        Self { words, len }
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut out = Self::default();
        for b in bits {
            out.push(b);
        }
        out
    }

    /// Parses a string of `0`/`1` characters; any other character is an error.
    pub fn from_bit_str(s: &str) -> Option<Self> {
        let mut out = Self::default();
        for c in s.chars() {
            match c {
                '0' => out.push(false),
                '1' => out.push(true),
                _ => return None,
            }
        }
        Some(out)
    }

    /// Builds a bitstring of `len` bits from a hex string, most significant
    /// nibble first; bit 0 is the top bit of the first nibble.
    pub fn from_hex(hex: &str, len: usize) -> Option<Self> {
        let mut out = Self::zeros(len);
        for (n, c) in hex.chars().enumerate() {
            let v = c.to_digit(16)?;
            for k in 0..4 {
                let idx = n * 4 + k;
                if v & (8 >> k) != 0 {
                    if idx >= len {
                        return None;
                    }
                    out.set(idx, true);
                }
            }
        }
        Some(out)
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(self.len.div_ceil(4));
        for n in 0..self.len.div_ceil(4) {
            let mut v = 0u32;
            for k in 0..4 {
                let idx = n * 4 + k;
                if idx < self.len && self.get(idx) {
                    v |= 8 >> k;
                }
            }
            s.push(char::from_digit(v, 16).unwrap());
        }
        s
    }

    /// Packs the bits into bytes, bit 0 as the MSB of byte 0.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for i in self.iter_ones() {
            out[i / 8] |= 0x80 >> (i % 8);
        }
        out
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: bool) {
        debug_assert!(i < self.len);
        let m = 1u64 << (i & 63);
        if v {
            self.words[i >> 6] |= m;
        } else {
            self.words[i >> 6] &= !m;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i >> 6] ^= 1u64 << (i & 63);
    }

    pub fn push(&mut self, v: bool) {
        if self.len % 64 == 0 {
            self.words.push(0);
        }
        self.len += 1;
        if v {
            let i = self.len - 1;
            self.words[i >> 6] |= 1u64 << (i & 63);
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn parity(&self) -> bool {
        self.words.iter().fold(0u64, |acc, w| acc ^ w).count_ones() & 1 == 1
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let t = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + t)
            })
        })
    }

    /// Bitwise XOR. Panics on a length mismatch.
    pub fn xor(&self, other: &Self) -> Self {
        assert_eq!(self.len, other.len, "xor of unequal-length bitstrings");
        Self {
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a ^ b)
                .collect(),
            len: self.len,
        }
    }

    pub fn hamming_distance(&self, other: &Self) -> usize {
        assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    /// Copies `len` bits starting at `start`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.len);
        let mut out = Self::zeros(len);
        for (k, w) in out.words.iter_mut().enumerate() {
            *w = self.window64(start + k * 64);
        }
        mask_tail(&mut out.words, len);
        out
    }

    /// The 64 bits starting at `start`, zero-filled past the end.
    #[inline]
    pub fn window64(&self, start: usize) -> u64 {
        let wi = start >> 6;
        let sh = start & 63;
        let lo = self.words.get(wi).copied().unwrap_or(0);
        if sh == 0 {
            lo
        } else {
            let hi = self.words.get(wi + 1).copied().unwrap_or(0);
            (lo >> sh) | (hi << (64 - sh))
        }
    }

    pub fn reversed(&self) -> Self {
        let mut out = Self::zeros(self.len);
        for i in self.iter_ones() {
            out.set(self.len - 1 - i, true);
        }
        out
    }

    /// Keeps only the positions where `keep` is true.
    pub fn select(&self, keep: impl Fn(usize) -> bool) -> Self {
        let mut out = Self::default();
        for i in 0..self.len {
            if keep(i) {
                out.push(self.get(i));
            }
        }
        out
    }

    pub fn extend_from(&mut self, other: &Self) {
        for b in other.iter() {
            self.push(b);
        }
    }

    /// Removes and returns the first `n` bits.
    pub fn drain_front(&mut self, n: usize) -> Self {
        assert!(n <= self.len);
        let head = self.slice(0, n);
        *self = self.slice(n, self.len - n);
        head
    }
}

fn mask_tail(words: &mut [u64], len: usize) {
    let r = len % 64;
    if r != 0 {
        if let Some(last) = words.last_mut() {
            *last &= (1u64 << r) - 1;
        }
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            write!(f, "BitString(")?;
            for b in self.iter() {
                f.write_str(if b { "1" } else { "0" })?;
            }
            write!(f, ")")
        } else {
            write!(f, "BitString(len={}, ones={})", self.len, self.count_ones())
        }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn push_get_roundtrip() {
        let s = BitString::from_bit_str("1011001").unwrap();
        assert_eq!(s.len(), 7);
        assert_eq!(s.to_string(), "1011001");
        assert_eq!(s.count_ones(), 4);
        assert!(!s.parity());
    }

    #[test]
    fn slice_crosses_words() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = BitString::random(300, &mut rng);
        let sl = s.slice(61, 130);
        for i in 0..130 {
            assert_eq!(sl.get(i), s.get(61 + i));
        }
        assert_eq!(sl.words().len(), 3);
    }

    #[test]
    fn hex_roundtrip() {
        let s = BitString::from_bit_str("1010000111").unwrap();
        let h = s.to_hex();
        assert_eq!(h, "a1c");
        assert_eq!(BitString::from_hex(&h, 10).unwrap(), s);
    }

    #[test]
    fn random_respects_tail_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = BitString::random(65, &mut rng);
        assert_eq!(s.words()[1] >> 1, 0);
    }

    #[test]
    fn drain_front_splits() {
        let mut s = BitString::from_bit_str("110010").unwrap();
        let head = s.drain_front(2);
        assert_eq!(head.to_string(), "11");
        assert_eq!(s.to_string(), "0010");
    }
}
