//! Toeplitz hashing over GF(2).
//!
//! The m x n matrix is `T[i][j] = s[i - j + n - 1]` for a seed `s` of
//! `n + m - 1` bits, so the first row is `s[n-1], s[n-2], .., s[0]` and the
//! first column is `s[n-1..n+m-1]`.

use rand::Rng;
use thiserror::Error;

use crate::bits::BitString;

/// Block width used by [`toeplitz_hash_blockwise`].
pub const TOEPLITZ_BLOCK_BITS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToeplitzError {
    #[error("seed must have n + m - 1 = {expected} bits, got {got}")]
    SeedLength { expected: usize, got: usize },
    #[error("output length {m} exceeds input length {n}")]
    OutputTooLong { n: usize, m: usize },
    #[error("input has {got} bits, seed expects {expected}")]
    InputLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToeplitzSeed {
    bits: BitString,
    /// `bits` reversed, so that row `i` reads a contiguous window.
    rev: BitString,
    n: usize,
    m: usize,
}

impl ToeplitzSeed {
    pub fn new(seed_bits: BitString, n: usize, m: usize) -> Result<Self, ToeplitzError> {
        if m > n {
            return Err(ToeplitzError::OutputTooLong { n, m });
        }
        let expected = (n + m).saturating_sub(1);
        if seed_bits.len() != expected {
            return Err(ToeplitzError::SeedLength {
                expected,
                got: seed_bits.len(),
            });
        }
        Ok(Self {
            rev: seed_bits.reversed(),
            bits: seed_bits,
            n,
            m,
        })
    }

    pub fn random<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Self, ToeplitzError> {
        Self::new(BitString::random((n + m).saturating_sub(1), rng), n, m)
    }

    pub fn bits(&self) -> &BitString {
        &self.bits
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Matrix entry `T[i][j]`.
    pub fn entry(&self, i: usize, j: usize) -> bool {
        self.bits.get(i + self.n - 1 - j)
    }

    fn check(&self, input: &BitString) -> Result<(), ToeplitzError> {
        if input.len() != self.n {
            return Err(ToeplitzError::InputLength {
                expected: self.n,
                got: input.len(),
            });
        }
        Ok(())
    }
}

/// Hashes `input` to `seed.m()` bits.
///
/// Works in 64 x 64 tiles: each tile times a 64-bit chunk of the input is a
/// carry-less product of a seed slice and that chunk, so the whole hash is
/// the middle slice of the GF(2) polynomial product `s(z) x(z)`: output bit
/// `i` is the coefficient of `z^(i + n - 1)`.
pub fn toeplitz_hash(input: &BitString, seed: &ToeplitzSeed) -> Result<BitString, ToeplitzError> {
    seed.check(input)?;
    let (n, m) = (seed.n, seed.m);
    if m == 0 {
        return Ok(BitString::zeros(0));
    }
    let sw = seed.bits.words();
    let q_lo = (n - 1) / 64;
    let q_hi = (n + m - 2) / 64;
    // acc[k] holds product word q_lo - 1 + k.
    let mut acc = vec![0u64; q_hi - q_lo + 3];
    let mul = clmul_fn();
    for (b, &xw) in input.words().iter().enumerate() {
        if xw == 0 {
            continue;
        }
        let a0 = (q_lo + 1).saturating_sub(b + 2).min(sw.len());
        let a1 = (q_hi + 1).saturating_sub(b).min(sw.len());
        for a in a0..a1 {
            let (lo, hi) = mul(sw[a], xw);
            let k = a + b + 1 - q_lo;
            acc[k] ^= lo;
            acc[k + 1] ^= hi;
        }
    }
    let r = (n - 1) % 64;
    let words: Vec<u64> = (1..acc.len() - 1)
        .map(|k| {
            if r == 0 {
                acc[k]
            } else {
                (acc[k] >> r) | (acc[k + 1] << (64 - r))
            }
        })
        .collect();
    Ok(BitString::from_words(words, m))
}

type Clmul = fn(u64, u64) -> (u64, u64);

fn clmul_fn() -> Clmul {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("pclmulqdq") {
            return clmul_x86;
        }
    }
    clmul_soft
}

/// 64 x 64 -> 128-bit carry-less product as `(low, high)` words.
fn clmul_soft(a: u64, b: u64) -> (u64, u64) {
    let (mut lo, mut hi) = (0u64, 0u64);
    let mut bits = b;
    while bits != 0 {
        let i = bits.trailing_zeros();
        lo ^= a << i;
        if i > 0 {
            hi ^= a >> (64 - i);
        }
        bits &= bits - 1;
    }
    (lo, hi)
}

#[cfg(target_arch = "x86_64")]
fn clmul_x86(a: u64, b: u64) -> (u64, u64) {
    // SAFETY: only handed out by `clmul_fn` after the feature check.
    unsafe { clmul_x86_inner(a, b) }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "pclmulqdq,sse2")]
unsafe fn clmul_x86_inner(a: u64, b: u64) -> (u64, u64) {
    use std::arch::x86_64::{
        _mm_clmulepi64_si128, _mm_cvtsi128_si64, _mm_set_epi64x, _mm_srli_si128,
    };
    let p = _mm_clmulepi64_si128(_mm_set_epi64x(0, a as i64), _mm_set_epi64x(0, b as i64), 0);
    let lo = _mm_cvtsi128_si64(p) as u64;
    let hi = _mm_cvtsi128_si64(_mm_srli_si128(p, 8)) as u64;
    (lo, hi)
}

/// Blockwise product: every `block x block` tile of a Toeplitz matrix is
/// itself Toeplitz, with a seed that is a slice of the full seed.
pub fn toeplitz_hash_blockwise(
    input: &BitString,
    seed: &ToeplitzSeed,
    block: usize,
) -> Result<BitString, ToeplitzError> {
    seed.check(input)?;
    assert!(block > 0, "block width must be positive");
    let (n, m) = (seed.n, seed.m);
    let total = seed.rev.len();
    let mut out = BitString::zeros(m);
    let mut c0 = 0;
    while c0 < n {
        let cl = block.min(n - c0);
        let xs = input.slice(c0, cl);
        if xs.count_ones() == 0 {
            c0 += cl;
            continue;
        }
        let mut r0 = 0;
        while r0 < m {
            let rl = block.min(m - r0);
            // Tile seed is s[o .. o + rl + cl - 1]; its reversal starts at
            // `base` in the reversed full seed.
            let o = r0 + n - c0 - cl;
            let base = total - o - (rl + cl - 1);
            for i in 0..rl {
                let start = base + rl - 1 - i;
                let acc = xs.words().iter().enumerate().fold(0u64, |acc, (w, &xw)| {
                    acc ^ (seed.rev.window64(start + 64 * w) & xw)
                });
                if acc.count_ones() & 1 == 1 {
                    out.flip(r0 + i);
                }
            }
            r0 += rl;
        }
        c0 += cl;
    }
    Ok(out)
}

/// Row-by-row product with the full matrix.
pub fn toeplitz_hash_direct(
    input: &BitString,
    seed: &ToeplitzSeed,
) -> Result<BitString, ToeplitzError> {
    seed.check(input)?;
    let mut out = BitString::zeros(seed.m);
    for i in 0..seed.m {
        // Row i is rev[m-1-i .. m-1-i+n].
        let start = seed.m - 1 - i;
        let acc = input
            .words()
            .iter()
            .enumerate()
            .fold(0u64, |acc, (w, &xw)| {
                acc ^ (seed.rev.window64(start + 64 * w) & xw)
            });
        out.set(i, acc.count_ones() & 1 == 1);
    }
    Ok(out)
}
