//! Classical post-processing: sifting, Winnow reconciliation, CRC
//! verification, Toeplitz privacy amplification and authentication cost.

mod toeplitz;
mod winnow;

pub use toeplitz::{
    toeplitz_hash, toeplitz_hash_blockwise, toeplitz_hash_direct, ToeplitzError, ToeplitzSeed,
    TOEPLITZ_BLOCK_BITS,
};
pub use winnow::{
    initial_block_size, winnow_reconcile, ReconcileError, WinnowConfig, WinnowOutcome,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bits::BitString;
use crate::keyrate::{Basis, Intensity, KeyLengthResult};

/// Sifted bits accumulated before privacy amplification.
pub const ACCUMULATION_BITS: usize = 256 * 1024;
/// Pooled key spent authenticating one classical round trip.
pub const AUTH_BITS_PER_ROUND_TRIP: u64 = 64;
/// Length of the CRC tag exchanged during verification.
pub const CRC_TAG_BITS: u64 = 32;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SiftedBlock {
    pub bits_alice: BitString,
    pub bits_bob: BitString,
    pub basis_labels: Vec<Basis>,
    pub intensity_labels: Vec<Intensity>,
}

impl SiftedBlock {
    pub fn len(&self) -> usize {
        self.bits_alice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits_alice.is_empty()
    }

    pub fn errors(&self) -> usize {
        self.bits_alice.hamming_distance(&self.bits_bob)
    }

    pub fn qber(&self) -> Option<f64> {
        (!self.is_empty()).then(|| self.errors() as f64 / self.len() as f64)
    }

    pub fn append(&mut self, other: &SiftedBlock) {
        self.bits_alice.extend_from(&other.bits_alice);
        self.bits_bob.extend_from(&other.bits_bob);
        self.basis_labels.extend_from_slice(&other.basis_labels);
        self.intensity_labels
            .extend_from_slice(&other.intensity_labels);
    }
}

/// Keeps the positions where Bob registered a detection (`Some` basis) in
/// the basis Alice used. Both bases are kept and tagged.
///
/// Panics if the inputs differ in length.
pub fn sift(
    raw_alice: &BitString,
    raw_bob: &BitString,
    bases_alice: &[Basis],
    bases_bob: &[Option<Basis>],
    intensities: &[Intensity],
) -> SiftedBlock {
    let n = raw_alice.len();
    assert!(
        raw_bob.len() == n
            && bases_alice.len() == n
            && bases_bob.len() == n
            && intensities.len() == n,
        "sift inputs must have equal lengths"
    );
    let mut out = SiftedBlock::default();
    for i in 0..n {
        if bases_bob[i] == Some(bases_alice[i]) {
            out.bits_alice.push(raw_alice.get(i));
            out.bits_bob.push(raw_bob.get(i));
            out.basis_labels.push(bases_alice[i]);
            out.intensity_labels.push(intensities[i]);
        }
    }
    out
}

/// CRC-32 (IEEE) of the packed bits.
pub fn crc32(bits: &BitString) -> u32 {
    crc32fast::hash(&bits.to_bytes())
}

/// True iff the strings have equal length and equal CRC-32 digests.
pub fn crc_verify(bits_alice: &BitString, bits_bob: &BitString) -> bool {
    bits_alice.len() == bits_bob.len() && crc32(bits_alice) == crc32(bits_bob)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CompressedLength {
    pub bits: usize,
    /// The key length exceeded the available bits and was cut down.
    pub clamped: bool,
}

/// Output length of privacy amplification for a window: the finite-key
/// length, clamped to the reconciled length.
pub fn compress_length(sifted_len: usize, result: &KeyLengthResult) -> CompressedLength {
    let k = result.k_tot.max(0.0).floor();
    if k > sifted_len as f64 {
        CompressedLength {
            bits: sifted_len,
            clamped: true,
        }
    } else {
        CompressedLength {
            bits: k as usize,
            clamped: false,
        }
    }
}

/// Authentication key spent on `round_trips` classical exchanges.
pub fn auth_cost_bits(round_trips: u64) -> u64 {
    round_trips * AUTH_BITS_PER_ROUND_TRIP
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockOutcome {
    Accepted(ProcessedBlock),
    Discarded(DiscardReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    NonConverging,
    CrcMismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedBlock {
    pub key_alice: BitString,
    pub key_bob: BitString,
    pub reconciled_len: usize,
    pub disclosed_bits: u64,
    pub verification_bits: u64,
    pub round_trips: u64,
    pub auth_bits: u64,
    pub clamped: bool,
}

/// Reconciles, verifies and compresses one sifted block to at most
/// `key_bits` bits. The Toeplitz seed comes from `seed`, standing in for the
/// shared random numbers of both devices.
pub fn process_block(
    alice: &BitString,
    bob: &BitString,
    expected_qber: f64,
    key_bits: usize,
    seed: u64,
    config: &WinnowConfig,
) -> BlockOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rec = match winnow_reconcile(alice, bob, expected_qber, rng.gen(), config) {
        Ok(r) => r,
        Err(_) => return BlockOutcome::Discarded(DiscardReason::NonConverging),
    };
    if !crc_verify(&rec.alice, &rec.bob) {
        return BlockOutcome::Discarded(DiscardReason::CrcMismatch);
    }
    let n = rec.alice.len();
    let m = key_bits.min(n);
    let ts = ToeplitzSeed::random(n, m, &mut rng).expect("m <= n");
    let key_alice = toeplitz_hash(&rec.alice, &ts).expect("length checked");
    let key_bob = toeplitz_hash(&rec.bob, &ts).expect("length checked");
    // sifting, reconciliation rounds, verification
    let round_trips = 1 + rec.round_trips + 1;
    BlockOutcome::Accepted(ProcessedBlock {
        key_alice,
        key_bob,
        reconciled_len: n,
        disclosed_bits: rec.disclosed_bits,
        verification_bits: CRC_TAG_BITS,
        round_trips,
        auth_bits: auth_cost_bits(round_trips),
        clamped: key_bits > n,
    })
}

/// Flips each bit of `bits` independently with probability `ber`.
pub fn flip_with_rate<R: Rng + ?Sized>(bits: &BitString, ber: f64, rng: &mut R) -> BitString {
    let mut out = bits.clone();
    for i in 0..out.len() {
        if rng.gen::<f64>() < ber {
            out.flip(i);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kl(k: f64) -> KeyLengthResult {
        KeyLengthResult {
            k_z: k / 2.0,
            k_x: k / 2.0,
            k_tot: k,
            rate_bps: 0.0,
            per_pulse_rate: 0.0,
            abort: None,
        }
    }

    #[test]
    fn sift_keeps_matching_detections() {
        use Basis::{X, Z};
        let a = BitString::from_bit_str("10110").unwrap();
        let b = BitString::from_bit_str("10011").unwrap();
        let s = sift(
            &a,
            &b,
            &[Z, X, Z, X, Z],
            &[Some(Z), Some(Z), None, Some(X), Some(Z)],
            &[Intensity::Signal; 5],
        );
        assert_eq!(s.bits_alice.to_string(), "110");
        assert_eq!(s.bits_bob.to_string(), "111");
        assert_eq!(s.basis_labels, vec![Z, X, Z]);
        assert_eq!(s.errors(), 1);
    }

    #[test]
    fn crc_detects_single_flip() {
        let a = BitString::from_bit_str("1100101").unwrap();
        let mut b = a.clone();
        assert!(crc_verify(&a, &b));
        b.flip(6);
        assert!(!crc_verify(&a, &b));
        assert!(!crc_verify(
            &a,
            &BitString::from_bit_str("11001010").unwrap()
        ));
    }

    #[test]
    fn compress_length_clamps() {
        assert_eq!(compress_length(100, &kl(0.0)).bits, 0);
        assert_eq!(
            compress_length(100, &kl(250.7)),
            CompressedLength {
                bits: 100,
                clamped: true
            }
        );
        assert_eq!(compress_length(100, &kl(42.9)).bits, 42);
    }

    #[test]
    fn pipeline_yields_equal_keys() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = BitString::random(8192, &mut rng);
        let b = flip_with_rate(&a, 0.02, &mut rng);
        match process_block(&a, &b, 0.02, 3000, 5, &WinnowConfig::default()) {
            BlockOutcome::Accepted(p) => {
                assert_eq!(p.key_alice, p.key_bob);
                assert_eq!(p.key_alice.len(), 3000);
                assert_eq!(p.auth_bits, 64 * p.round_trips);
            }
            other => panic!("{other:?}"),
        }
    }
}
