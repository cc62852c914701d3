use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{KeyError, Millis, PairKey};
use crate::bits::BitString;
use crate::topology::{ordered, NodeId};

/// Pre-shared authentication key each pool starts with.
pub const AUTH_RESERVE_BITS: u64 = 32_768;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cause {
    Generated,
    ConsumedApp,
    /// Key moved into the authentication reserve.
    ConsumedAuth,
    /// Credit on the end-to-end pool or debit on a relay leg.
    Relayed,
}

impl Cause {
    pub const ALL: [Cause; 4] = [
        Cause::Generated,
        Cause::ConsumedApp,
        Cause::ConsumedAuth,
        Cause::Relayed,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Cause::Generated => "generated",
            Cause::ConsumedApp => "consumed_app",
            Cause::ConsumedAuth => "consumed_auth",
            Cause::Relayed => "relayed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerEntry {
    pub time_ms: Millis,
    pub delta_bits: i64,
    pub cause: Cause,
    /// Stream offset of the first bit credited or debited.
    pub offset: u64,
}

/// A consumed range of a pool's key stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KeyLease {
    pub pair: PairKey,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    /// QKD output; material comes from the pool's own stream.
    Generated,
    /// Copied from a relay leg's stream starting at `offset`.
    Relayed { leg: PairKey, offset: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Segment {
    start: u64,
    len: u64,
    origin: Origin,
}

/// Key shared by one pair of nodes. Both ends hold the same stream; bits are
/// handed out first-in first-out, so consumed ranges never overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyPool {
    pub pair: PairKey,
    stored_bits: u64,
    auth_reserve_bits: u64,
    produced: u64,
    cursor: u64,
    ledger: Vec<LedgerEntry>,
    segments: Vec<Segment>,
    seed: u64,
    coalesce_ms: Millis,
}

impl KeyPool {
    pub fn new(pair: PairKey, seed: u64) -> Self {
        Self {
            pair: ordered(pair.0, pair.1),
            stored_bits: 0,
            auth_reserve_bits: AUTH_RESERVE_BITS,
            produced: 0,
            cursor: 0,
            ledger: Vec::new(),
            segments: Vec::new(),
            seed,
            coalesce_ms: 0,
        }
    }

    /// Merges each ledger entry into the previous one when both have the
    /// same cause and fall in the same `ms`-wide bucket; 0 keeps every entry.
    /// Merged ranges stay exact because the stream is first-in first-out.
    pub fn set_coalescing(&mut self, ms: Millis) {
        self.coalesce_ms = ms;
    }

    fn log(&mut self, e: LedgerEntry) {
        if self.coalesce_ms > 0 {
            if let Some(last) = self.ledger.last_mut() {
                if last.cause == e.cause
                    && (last.delta_bits < 0) == (e.delta_bits < 0)
                    && last.time_ms / self.coalesce_ms == e.time_ms / self.coalesce_ms
                {
                    last.delta_bits += e.delta_bits;
                    return;
                }
            }
        }
        self.ledger.push(e);
    }

    pub fn stored_bits(&self) -> u64 {
        self.stored_bits
    }

    pub fn auth_reserve_bits(&self) -> u64 {
        self.auth_reserve_bits
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    /// Sum of all ledger deltas; equals `stored_bits`.
    pub fn replay(&self) -> i64 {
        self.ledger.iter().map(|e| e.delta_bits).sum()
    }

    /// Total bits ever consumed from the stream.
    pub fn consumed_offset(&self) -> u64 {
        self.cursor
    }

    pub fn total(&self, cause: Cause) -> i64 {
        self.ledger
            .iter()
            .filter(|e| e.cause == cause)
            .map(|e| e.delta_bits)
            .sum()
    }

    fn push_segment(&mut self, len: u64, origin: Origin) -> u64 {
        let start = self.produced;
        match self.segments.last_mut() {
            Some(last) if last.origin == Origin::Generated && origin == Origin::Generated => {
                last.len += len
            }
            _ => self.segments.push(Segment { start, len, origin }),
        }
        self.produced += len;
        self.stored_bits += len;
        start
    }

    /// Credits freshly distilled key and tops up the authentication reserve.
    pub fn credit(&mut self, time_ms: Millis, bits: u64) -> u64 {
        if bits == 0 {
            return self.produced;
        }
        let offset = self.push_segment(bits, Origin::Generated);
        self.log(LedgerEntry {
            time_ms,
            delta_bits: bits as i64,
            cause: Cause::Generated,
            offset,
        });
        self.replenish_auth(time_ms);
        offset
    }

    fn credit_relayed(&mut self, time_ms: Millis, bits: u64, leg: PairKey, leg_offset: u64) -> u64 {
        let offset = self.push_segment(
            bits,
            Origin::Relayed {
                leg,
                offset: leg_offset,
            },
        );
        self.log(LedgerEntry {
            time_ms,
            delta_bits: bits as i64,
            cause: Cause::Relayed,
            offset,
        });
        offset
    }

    /// Debits `bits` from the front of the stream. Nothing changes on error.
    pub fn consume(
        &mut self,
        time_ms: Millis,
        bits: u64,
        cause: Cause,
    ) -> Result<KeyLease, KeyError> {
        if cause == Cause::ConsumedApp {
            self.replenish_auth(time_ms);
        }
        if cause == Cause::Generated {
            return Err(KeyError::BadCause(cause));
        }
        self.debit(time_ms, bits, cause)
    }

    fn debit(&mut self, time_ms: Millis, bits: u64, cause: Cause) -> Result<KeyLease, KeyError> {
        if bits > self.stored_bits {
            return Err(KeyError::InsufficientKey {
                leg: self.pair,
                requested: bits,
                available: self.stored_bits,
            });
        }
        let lease = KeyLease {
            pair: self.pair,
            offset: self.cursor,
            len: bits,
        };
        if bits > 0 {
            self.cursor += bits;
            self.stored_bits -= bits;
            self.log(LedgerEntry {
                time_ms,
                delta_bits: -(bits as i64),
                cause,
                offset: lease.offset,
            });
        }
        Ok(lease)
    }

    /// Uses `bits` of the authentication reserve.
    pub fn consume_auth(&mut self, bits: u64) -> Result<(), KeyError> {
        if bits > self.auth_reserve_bits {
            return Err(KeyError::AuthFailure { pair: self.pair });
        }
        self.auth_reserve_bits -= bits;
        Ok(())
    }

    /// Refills the reserve from stored key once it falls below half, if
    /// enough key is stored. Returns whether it did.
    pub fn replenish_auth(&mut self, time_ms: Millis) -> bool {
        let deficit = AUTH_RESERVE_BITS - self.auth_reserve_bits.min(AUTH_RESERVE_BITS);
        if self.auth_reserve_bits >= AUTH_RESERVE_BITS / 2 || deficit > self.stored_bits {
            return false;
        }
        self.debit(time_ms, deficit, Cause::ConsumedAuth)
            .expect("checked above");
        self.auth_reserve_bits = AUTH_RESERVE_BITS;
        true
    }

    /// Out-of-band reload of the initial authentication key.
    pub fn manual_reset_auth(&mut self) {
        self.auth_reserve_bits = AUTH_RESERVE_BITS;
    }

    fn keystream(&self, offset: u64, len: u64) -> BitString {
        let first = offset / 64;
        let last = (offset + len).div_ceil(64);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(u128::from(first) * 2);
        let words: Vec<u64> = (first..last).map(|_| rng.next_u64()).collect();
        let all = BitString::from_words(words, ((last - first) * 64) as usize);
        all.slice((offset - first * 64) as usize, len as usize)
    }
}

/// Every pool in the network, keyed by unordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyStore {
    pools: BTreeMap<PairKey, KeyPool>,
    seed: u64,
    coalesce_ms: Millis,
}

/// What a relay publishes and what each end ends up holding.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayOutcome {
    pub lease: KeyLease,
    pub published: BitString,
    pub key_a: BitString,
    pub key_b: BitString,
}

impl KeyStore {
    pub fn new(seed: u64) -> Self {
        Self {
            pools: BTreeMap::new(),
            seed,
            coalesce_ms: 0,
        }
    }

    /// Ledger coalescing for every pool, present and future.
    pub fn set_coalescing(&mut self, ms: Millis) {
        self.coalesce_ms = ms;
        for p in self.pools.values_mut() {
            p.set_coalescing(ms);
        }
    }

    fn pool_seed(&self, pair: PairKey) -> u64 {
        // splitmix64 of the pair folded into the store seed
        let mut z = self.seed ^ (u64::from(pair.0) << 32 | u64::from(pair.1));
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn pool(&self, a: NodeId, b: NodeId) -> Option<&KeyPool> {
        self.pools.get(&ordered(a, b))
    }

    /// The pool for `(a, b)`, created empty with a full reserve if absent.
    pub fn pool_mut(&mut self, a: NodeId, b: NodeId) -> &mut KeyPool {
        let pair = ordered(a, b);
        let seed = self.pool_seed(pair);
        let ms = self.coalesce_ms;
        self.pools.entry(pair).or_insert_with(|| {
            let mut p = KeyPool::new(pair, seed);
            p.set_coalescing(ms);
            p
        })
    }

    pub fn pools(&self) -> impl Iterator<Item = &KeyPool> {
        self.pools.values()
    }

    pub fn stored(&self, a: NodeId, b: NodeId) -> u64 {
        self.pool(a, b).map_or(0, KeyPool::stored_bits)
    }

    pub fn credit(&mut self, a: NodeId, b: NodeId, time_ms: Millis, bits: u64) -> u64 {
        self.pool_mut(a, b).credit(time_ms, bits)
    }

    pub fn consume(
        &mut self,
        a: NodeId,
        b: NodeId,
        time_ms: Millis,
        bits: u64,
        cause: Cause,
    ) -> Result<KeyLease, KeyError> {
        match self.pools.get_mut(&ordered(a, b)) {
            Some(p) => p.consume(time_ms, bits, cause),
            None if bits == 0 => Ok(KeyLease {
                pair: ordered(a, b),
                offset: 0,
                len: 0,
            }),
            None => Err(KeyError::InsufficientKey {
                leg: (a, b),
                requested: bits,
                available: 0,
            }),
        }
    }

    /// The key bits covered by `lease`, as both ends of the pair hold them.
    pub fn material(&self, lease: &KeyLease) -> BitString {
        let Some(pool) = self.pools.get(&lease.pair) else {
            return BitString::zeros(lease.len as usize);
        };
        let mut out = BitString::default();
        let end = lease.offset + lease.len;
        let first = pool
            .segments
            .partition_point(|s| s.start + s.len <= lease.offset);
        for seg in &pool.segments[first..] {
            if seg.start >= end {
                break;
            }
            let lo = lease.offset.max(seg.start);
            let hi = end.min(seg.start + seg.len);
            let part = match seg.origin {
                Origin::Generated => pool.keystream(lo, hi - lo),
                Origin::Relayed { leg, offset } => self.material(&KeyLease {
                    pair: leg,
                    offset: offset + (lo - seg.start),
                    len: hi - lo,
                }),
            };
            out.extend_from(&part);
        }
        out
    }

    /// Relays `len` bits from `a` to `b` through `relay`: the relay publishes
    /// `K_ar xor K_rb`, `b` strips its own leg key and recovers `K_ar`.
    pub fn relay_key(
        &mut self,
        a: NodeId,
        relay: NodeId,
        b: NodeId,
        len: u64,
        time_ms: Millis,
    ) -> Result<RelayOutcome, KeyError> {
        for leg in [(a, relay), (relay, b)] {
            let have = self.stored(leg.0, leg.1);
            if have < len {
                return Err(KeyError::InsufficientKey {
                    leg,
                    requested: len,
                    available: have,
                });
            }
        }
        let la = self
            .pool_mut(a, relay)
            .debit(time_ms, len, Cause::Relayed)?;
        let lb = self
            .pool_mut(relay, b)
            .debit(time_ms, len, Cause::Relayed)?;
        let k_ar = self.material(&la);
        let k_rb = self.material(&lb);
        let published = k_ar.xor(&k_rb);
        let key_b = published.xor(&k_rb);
        let offset = self
            .pool_mut(a, b)
            .credit_relayed(time_ms, len, la.pair, la.offset);
        Ok(RelayOutcome {
            lease: KeyLease {
                pair: ordered(a, b),
                offset,
                len,
            },
            published,
            key_a: k_ar,
            key_b,
        })
    }

    /// Ledger of every pool as `timestamp_s,pair,delta_bits,cause`, in time
    /// order (pool order within one timestamp).
    pub fn write_ledger_csv<W: Write>(
        &self,
        mut w: W,
        names: impl Fn(NodeId) -> String,
    ) -> io::Result<()> {
        writeln!(w, "timestamp_s,pair,delta_bits,cause")?;
        let mut rows: Vec<(Millis, &PairKey, usize, &LedgerEntry)> = Vec::new();
        for (pair, p) in &self.pools {
            for (i, e) in p.ledger.iter().enumerate() {
                rows.push((e.time_ms, pair, i, e));
            }
        }
        rows.sort_by_key(|r| (r.0, *r.1, r.2));
        for (t, pair, _, e) in rows {
            writeln!(
                w,
                "{}.{:03},{}-{},{},{}",
                t / 1000,
                t % 1000,
                names(pair.0),
                names(pair.1),
                e.delta_bits,
                e.cause.label()
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consume_is_all_or_nothing() {
        let mut s = KeyStore::new(1);
        s.credit(1, 2, 0, 1000);
        let l = s.consume(2, 1, 5, 999, Cause::ConsumedApp).unwrap();
        assert_eq!((l.offset, l.len), (0, 999));
        assert_eq!(s.stored(1, 2), 1);
        let before = s.clone();
        let e = s.consume(1, 2, 6, 2, Cause::ConsumedApp).unwrap_err();
        assert_eq!(
            e,
            KeyError::InsufficientKey {
                leg: (1, 2),
                requested: 2,
                available: 1
            }
        );
        assert_eq!(s, before);
        assert_eq!(s.pool(1, 2).unwrap().replay(), 1);
    }

    #[test]
    fn material_is_stable_across_splits() {
        let mut s = KeyStore::new(9);
        s.credit(3, 4, 0, 500);
        s.credit(3, 4, 1, 300);
        let whole = s.material(&KeyLease {
            pair: (3, 4),
            offset: 0,
            len: 800,
        });
        let a = s.consume(3, 4, 2, 130, Cause::ConsumedApp).unwrap();
        let b = s.consume(3, 4, 2, 670, Cause::ConsumedApp).unwrap();
        let mut joined = s.material(&a);
        joined.extend_from(&s.material(&b));
        assert_eq!(joined, whole);
        assert_ne!(whole.count_ones(), 0);
    }

    #[test]
    fn reserve_refills_below_half() {
        let mut p = KeyPool::new((1, 2), 0);
        p.consume_auth(AUTH_RESERVE_BITS / 2).unwrap();
        assert!(!p.replenish_auth(0));
        p.consume_auth(1).unwrap();
        assert!(!p.replenish_auth(0), "nothing stored to refill from");
        p.credit(10, 100_000);
        assert_eq!(p.auth_reserve_bits(), AUTH_RESERVE_BITS);
        assert_eq!(p.stored_bits(), 100_000 - (AUTH_RESERVE_BITS / 2 + 1));
        assert_eq!(
            p.total(Cause::ConsumedAuth),
            -((AUTH_RESERVE_BITS / 2 + 1) as i64)
        );
        assert_eq!(p.replay(), p.stored_bits() as i64);
    }

    #[test]
    fn relay_xor_round_trip() {
        let mut s = KeyStore::new(4);
        s.credit(1, 10, 0, 64);
        s.credit(10, 2, 0, 64);
        let o = s.relay_key(1, 10, 2, 64, 1).unwrap();
        assert_eq!(o.key_a, o.key_b);
        assert_eq!(s.material(&o.lease), o.key_a);
        assert_eq!(s.stored(1, 2), 64);
        assert_eq!(s.stored(1, 10) + s.stored(2, 10), 0);
        let e = s.relay_key(1, 10, 2, 1, 2).unwrap_err();
        assert_eq!(
            e,
            KeyError::InsufficientKey {
                leg: (1, 10),
                requested: 1,
                available: 0
            }
        );
    }

    #[test]
    fn ledger_csv_shape() {
        let mut s = KeyStore::new(0);
        s.credit(1, 2, 1500, 10);
        s.consume(1, 2, 2000, 4, Cause::ConsumedApp).unwrap();
        let mut out = Vec::new();
        s.write_ledger_csv(&mut out, |id| format!("N{id}")).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "timestamp_s,pair,delta_bits,cause\n1.500,N1-N2,10,generated\n2.000,N1-N2,-4,consumed_app\n"
        );
    }
}
