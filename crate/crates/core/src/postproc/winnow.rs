//! Winnow reconciliation: parity exchange per block, Hamming syndrome on
//! mismatched blocks, optional privacy-maintenance discards.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitString;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WinnowConfig {
    /// Block size of the first pass; `None` picks it from the expected QBER.
    pub initial_block: Option<usize>,
    pub max_passes: usize,
    /// Blocks whose expected or corrected error rate exceeds this are refused.
    pub error_ceiling: f64,
    /// Drop one bit per disclosed parity and one per syndrome bit.
    pub privacy_discard: bool,
}

impl Default for WinnowConfig {
    fn default() -> Self {
        Self {
            initial_block: None,
            max_passes: 10,
            error_ceiling: 0.11,
            privacy_discard: true,
        }
    }
}

/// First-pass block size for a given expected error rate: the power of two
/// nearest to `1 / (3 e)`, so a first-pass block holds about a third of an
/// error. Clamped to `[4, 1024]`.
pub fn initial_block_size(qber: f64) -> usize {
    if !(qber > 0.0) {
        return 1024;
    }
    let k = (1.0 / (3.0 * qber)).log2().round().clamp(2.0, 10.0);
    1 << k as u32
}

#[derive(Debug, Clone, PartialEq)]
pub struct WinnowOutcome {
    /// Alice's string after the same permutations and discards as Bob's.
    pub alice: BitString,
    /// Bob's corrected string.
    pub bob: BitString,
    pub disclosed_bits: u64,
    pub discarded_bits: u64,
    pub corrections: u64,
    pub passes: usize,
    /// Classical round trips used (parity exchange and syndrome exchange
    /// count separately).
    pub round_trips: u64,
    /// Whether the last pass saw no parity mismatch.
    pub clean: bool,
}

impl WinnowOutcome {
    /// Disclosed bits per Shannon limit, `disclosed / (n h(e))`.
    pub fn efficiency(&self, input_len: usize, qber: f64) -> f64 {
        self.disclosed_bits as f64 / (input_len as f64 * crate::keyrate::h2(qber))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReconcileError {
    #[error("bitstrings differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("reconciliation did not converge (error rate {error_rate:.4}, ceiling {ceiling})")]
    NonConverging { error_rate: f64, ceiling: f64 },
}

/// Runs Winnow on Bob's copy against Alice's, both held locally. Every bit
/// either side would reveal is counted in `disclosed_bits`.
pub fn winnow_reconcile(
    alice: &BitString,
    bob: &BitString,
    expected_qber: f64,
    seed: u64,
    config: &WinnowConfig,
) -> Result<WinnowOutcome, ReconcileError> {
    if alice.len() != bob.len() {
        return Err(ReconcileError::LengthMismatch(alice.len(), bob.len()));
    }
    if !(expected_qber <= config.error_ceiling) {
        return Err(ReconcileError::NonConverging {
            error_rate: expected_qber,
            ceiling: config.error_ceiling,
        });
    }
    let n0 = alice.len();
    let mut a: Vec<u8> = alice.iter().map(u8::from).collect();
    let mut b: Vec<u8> = bob.iter().map(u8::from).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut block = config
        .initial_block
        .unwrap_or_else(|| initial_block_size(expected_qber))
        .max(2);

    let mut out = WinnowOutcome {
        alice: BitString::default(),
        bob: BitString::default(),
        disclosed_bits: 0,
        discarded_bits: 0,
        corrections: 0,
        passes: 0,
        round_trips: 0,
        clean: a.is_empty(),
    };
    let mut perm: Vec<u32> = Vec::new();
    while out.passes < config.max_passes && !a.is_empty() {
        out.passes += 1;
        perm.clear();
        perm.extend(0..a.len() as u32);
        perm.shuffle(&mut rng);
        a = perm.iter().map(|&i| a[i as usize]).collect();
        b = perm.iter().map(|&i| b[i as usize]).collect();

        let stats = winnow_pass(&mut a, &mut b, block, config.privacy_discard);
        out.disclosed_bits += stats.disclosed;
        out.discarded_bits += stats.discarded;
        out.corrections += stats.corrections;
        out.round_trips += 1 + u64::from(stats.mismatched > 0);
        out.clean = stats.mismatched == 0;
        if out.clean {
            break;
        }
        block *= 2;
    }

    let rate = out.corrections as f64 / n0.max(1) as f64;
    if !out.clean || rate > config.error_ceiling {
        return Err(ReconcileError::NonConverging {
            error_rate: rate.max(expected_qber),
            ceiling: config.error_ceiling,
        });
    }
    out.alice = BitString::from_bools(a.iter().map(|&v| v == 1));
    out.bob = BitString::from_bools(b.iter().map(|&v| v == 1));
    Ok(out)
}

struct PassStats {
    disclosed: u64,
    discarded: u64,
    corrections: u64,
    mismatched: u64,
}

fn winnow_pass(a: &mut Vec<u8>, b: &mut Vec<u8>, block: usize, discard: bool) -> PassStats {
    let n = a.len();
    let mut st = PassStats {
        disclosed: 0,
        discarded: 0,
        corrections: 0,
        mismatched: 0,
    };
    let mut keep = vec![true; n];
    let mut start = 0;
    while start < n {
        let len = block.min(n - start);
        let (ba, bb) = (&a[start..start + len], &mut b[start..start + len]);
        let pa = ba.iter().fold(0u8, |x, &v| x ^ v);
        let pb = bb.iter().fold(0u8, |x, &v| x ^ v);
        st.disclosed += 1;
        if discard {
            keep[start] = false;
        }
        if pa != pb {
            st.mismatched += 1;
            let m = syndrome_bits(len);
            st.disclosed += m as u64;
            let diff = syndrome(ba) ^ syndrome(bb);
            if diff < len {
                bb[diff] ^= 1;
                st.corrections += 1;
            }
            if discard {
                for j in 0..m {
                    keep[start + (1 << j)] = false;
                }
            }
        }
        start += len;
    }
    if discard {
        let mut k = 0;
        a.retain(|_| {
            k += 1;
            keep[k - 1]
        });
        k = 0;
        b.retain(|_| {
            k += 1;
            keep[k - 1]
        });
        st.discarded = (n - a.len()) as u64;
    }
    st
}

/// Number of syndrome bits that locate one error in a block of `len` bits.
fn syndrome_bits(len: usize) -> usize {
    if len <= 1 {
        0
    } else {
        (usize::BITS - (len - 1).leading_zeros()) as usize
    }
}

/// XOR of the in-block indices of set bits; two strings differing in one
/// position have syndromes whose XOR is that position.
fn syndrome(bits: &[u8]) -> usize {
    bits.iter()
        .enumerate()
        .fold(0, |s, (i, &v)| if v == 1 { s ^ i } else { s })
}
