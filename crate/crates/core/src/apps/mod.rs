//! One-time-pad applications that draw on the key pools.

mod capacity;

pub use capacity::{
    call_route, capacity_scenario, published_rates, AppEvent, AppEventKind, CapacityConfig,
    CapacityReport, TrajectoryRow, PUBLISHED_RATES_CSV, REFERENCE_CAPACITY_PLAN,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitString;
use crate::keymgmt::{Cause, KeyError, KeyLease, KeyStore, Millis, PairKey};
use crate::topology::{ordered, NetworkGraph, NodeId};

pub const VOICE_BPS: u64 = 2_400;
pub const FILE_BPS: u64 = 320_000;
pub const TEXT_MESSAGE_BITS: u64 = 2_000;
/// One text message every this many seconds.
pub const TEXT_INTERVAL_S: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionKind {
    Voice,
    File,
    Text,
}

impl SessionKind {
    pub fn label(self) -> &'static str {
        match self {
            SessionKind::Voice => "voice",
            SessionKind::File => "file",
            SessionKind::Text => "text",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionSpec {
    pub kind: SessionKind,
    pub pair: PairKey,
    pub start_s: u64,
    pub duration_s: u64,
    /// Replaces the kind's default demand.
    pub bits_per_s: Option<u64>,
}

impl SessionSpec {
    pub fn voice(a: NodeId, b: NodeId, start_s: u64, duration_s: u64) -> Self {
        Self {
            kind: SessionKind::Voice,
            pair: ordered(a, b),
            start_s,
            duration_s,
            bits_per_s: None,
        }
    }

    /// Key needed for second `i` of content.
    pub fn demand(&self, i: u64) -> u64 {
        if let Some(r) = self.bits_per_s {
            return r;
        }
        match self.kind {
            SessionKind::Voice => VOICE_BPS,
            SessionKind::File => FILE_BPS,
            SessionKind::Text if i % TEXT_INTERVAL_S == 0 => TEXT_MESSAGE_BITS,
            SessionKind::Text => 0,
        }
    }

    pub fn total_demand(&self) -> u64 {
        (0..self.duration_s).map(|i| self.demand(i)).sum()
    }
}

/// Ciphertext plus the key range it used.
#[derive(Debug, Clone, PartialEq)]
pub struct OtpCiphertext {
    pub pair: PairKey,
    pub offset: u64,
    pub payload: BitString,
}

impl OtpCiphertext {
    pub fn lease(&self) -> KeyLease {
        KeyLease {
            pair: self.pair,
            offset: self.offset,
            len: self.payload.len() as u64,
        }
    }
}

/// XORs `plaintext` with fresh key of pair `(a, b)`, debiting the pool.
pub fn encrypt(
    plaintext: &BitString,
    pools: &mut KeyStore,
    a: NodeId,
    b: NodeId,
    time_ms: Millis,
) -> Result<OtpCiphertext, KeyError> {
    let lease = pools.consume(a, b, time_ms, plaintext.len() as u64, Cause::ConsumedApp)?;
    Ok(OtpCiphertext {
        pair: lease.pair,
        offset: lease.offset,
        payload: plaintext.xor(&pools.material(&lease)),
    })
}

pub fn decrypt(ct: &OtpCiphertext, pools: &KeyStore) -> BitString {
    ct.payload.xor(&pools.material(&ct.lease()))
}

/// Makes `(route[0], route.last())` hold at least `bits`, relaying through
/// the intermediate nodes of `route` as needed. Fails without touching any
/// pool if a leg is short. Returns the bits relayed into the end pair.
pub fn fetch_key(
    pools: &mut KeyStore,
    route: &[NodeId],
    bits: u64,
    time_ms: Millis,
) -> Result<u64, KeyError> {
    let a = route[0];
    let m = route.len() - 1;
    if m <= 1 {
        return Ok(0);
    }
    // need[k]: bits to relay into (a, route[k]).
    let mut need = vec![0u64; m + 1];
    need[m] = bits.saturating_sub(pools.stored(a, route[m]));
    for k in (2..m).rev() {
        need[k] = need[k + 1].saturating_sub(pools.stored(a, route[k]));
    }
    for k in 2..=m {
        if need[k] == 0 {
            continue;
        }
        let leg = (route[k - 1], route[k]);
        let have = pools.stored(leg.0, leg.1);
        if have < need[k] {
            return Err(KeyError::InsufficientKey {
                leg,
                requested: need[k],
                available: have,
            });
        }
        if k == 2 {
            let have = pools.stored(a, route[1]);
            if have < need[2] {
                return Err(KeyError::InsufficientKey {
                    leg: (a, route[1]),
                    requested: need[2],
                    available: have,
                });
            }
        }
    }
    for k in 2..=m {
        if need[k] > 0 {
            pools.relay_key(a, route[k - 1], route[k], need[k], time_ms)?;
        }
    }
    Ok(need[m])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionReport {
    pub spec: SessionSpec,
    pub demanded_bits: u64,
    pub consumed_bits: u64,
    /// Half-open `[start, end)` seconds during which the session waited for key.
    pub stall_intervals: Vec<(u64, u64)>,
    pub completed: bool,
    pub finished_at_s: Option<u64>,
    pub relayed_bits: u64,
    pub decrypt_failures: u64,
}

impl SessionReport {
    pub fn stall_seconds(&self) -> u64 {
        self.stall_intervals.iter().map(|(a, b)| b - a).sum()
    }
}

/// What one second of a session did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Waiting,
    Sent(u64),
    Stalled,
    Done,
}

/// A session stepped once per simulated second. A second whose key is not
/// available is a stall; the content is held back and sent later.
#[derive(Debug, Clone)]
pub struct SessionRunner {
    pub spec: SessionSpec,
    pub route: Vec<NodeId>,
    next_chunk: u64,
    report: SessionReport,
    stall_from: Option<u64>,
    rng: ChaCha8Rng,
}

impl SessionRunner {
    /// `route` runs from one end of the pair to the other; two nodes means a
    /// direct pool.
    pub fn new(spec: SessionSpec, route: Vec<NodeId>, seed: u64) -> Self {
        assert!(route.len() >= 2);
        assert_eq!(ordered(route[0], *route.last().unwrap()), spec.pair);
        Self {
            spec,
            route,
            next_chunk: 0,
            report: SessionReport {
                spec,
                demanded_bits: spec.total_demand(),
                consumed_bits: 0,
                stall_intervals: Vec::new(),
                completed: spec.duration_s == 0,
                finished_at_s: (spec.duration_s == 0).then_some(spec.start_s),
                relayed_bits: 0,
                decrypt_failures: 0,
            },
            stall_from: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_done(&self) -> bool {
        self.report.completed
    }

    pub fn is_stalled(&self) -> bool {
        self.stall_from.is_some()
    }

    pub fn relayed_bits(&self) -> u64 {
        self.report.relayed_bits
    }

    /// Spends second `now_s` stalled without touching any pool, e.g. while
    /// a node on the route is down.
    pub fn hold(&mut self, now_s: u64) -> Step {
        if self.report.completed {
            return Step::Done;
        }
        if now_s < self.spec.start_s {
            return Step::Waiting;
        }
        self.stall_from.get_or_insert(now_s);
        Step::Stalled
    }

    /// Runs second `now_s`.
    pub fn step(&mut self, now_s: u64, pools: &mut KeyStore) -> Step {
        if self.report.completed {
            return Step::Done;
        }
        if now_s < self.spec.start_s {
            return Step::Waiting;
        }
        let bits = self.spec.demand(self.next_chunk);
        let t = now_s * 1000;
        let (a, b) = (self.route[0], *self.route.last().unwrap());
        let ok = match fetch_key(pools, &self.route, bits, t) {
            Ok(relayed) => {
                self.report.relayed_bits += relayed;
                let pt = BitString::random(bits as usize, &mut self.rng);
                match encrypt(&pt, pools, a, b, t) {
                    Ok(ct) => {
                        if decrypt(&ct, pools) != pt {
                            self.report.decrypt_failures += 1;
                        }
                        true
                    }
                    Err(_) => false,
                }
            }
            Err(_) => false,
        };
        if !ok {
            self.stall_from.get_or_insert(now_s);
            return Step::Stalled;
        }
        if let Some(s) = self.stall_from.take() {
            self.report.stall_intervals.push((s, now_s));
        }
        self.report.consumed_bits += bits;
        self.next_chunk += 1;
        if self.next_chunk >= self.spec.duration_s {
            self.report.completed = true;
            self.report.finished_at_s = Some(now_s + 1);
        }
        Step::Sent(bits)
    }

    /// Closes any open stall at `now_s` and returns the report.
    pub fn finish(mut self, now_s: u64) -> SessionReport {
        if let Some(s) = self.stall_from.take() {
            self.report.stall_intervals.push((s, now_s));
        }
        self.report
    }
}

/// Runs `spec` on the pair's own pool, with no new key arriving, until it
/// completes or `deadline_s`.
pub fn run_session(spec: &SessionSpec, pools: &mut KeyStore, deadline_s: u64) -> SessionReport {
    let mut r = SessionRunner::new(
        *spec,
        vec![spec.pair.0, spec.pair.1],
        u64::from(spec.pair.0) << 32 | u64::from(spec.pair.1),
    );
    let mut t = spec.start_s;
    while t < deadline_s && !r.is_done() {
        r.step(t, pools);
        t += 1;
    }
    r.finish(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntry {
    pub kind: SessionKind,
    pub a: String,
    pub b: String,
    pub start_s: u64,
    pub duration_s: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits_per_s: Option<u64>,
}

/// Session plan file: a list of `[[sessions]]` records naming nodes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionPlan {
    #[serde(default)]
    pub sessions: Vec<PlanEntry>,
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("malformed session plan: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("session {index}: unknown node {name}")]
    UnknownNode { index: usize, name: String },
    #[error("session {index}: both ends are {name}")]
    SamePair { index: usize, name: String },
}

impl SessionPlan {
    pub fn from_toml_str(s: &str) -> Result<Self, PlanError> {
        Ok(toml::from_str(s)?)
    }

    pub fn resolve(&self, graph: &NetworkGraph) -> Result<Vec<SessionSpec>, PlanError> {
        self.sessions
            .iter()
            .enumerate()
            .map(|(index, e)| {
                let id = |name: &str| {
                    graph.id_of(name).ok_or_else(|| PlanError::UnknownNode {
                        index,
                        name: name.to_string(),
                    })
                };
                let (a, b) = (id(&e.a)?, id(&e.b)?);
                if a == b {
                    return Err(PlanError::SamePair {
                        index,
                        name: e.a.clone(),
                    });
                }
                Ok(SessionSpec {
                    kind: e.kind,
                    pair: ordered(a, b),
                    start_s: e.start_s,
                    duration_s: e.duration_s,
                    bits_per_s: e.bits_per_s,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn otp_matches_hand_xor() {
        let key = BitString::from_bit_str("1010").unwrap();
        let pt = BitString::from_bit_str("1111").unwrap();
        assert_eq!(pt.xor(&key).to_string(), "0101");

        let mut pools = KeyStore::new(2);
        pools.credit(1, 2, 0, 10);
        let pt = BitString::from_bit_str("11110000").unwrap();
        let ct = encrypt(&pt, &mut pools, 1, 2, 0).unwrap();
        assert_eq!(ct.payload.xor(&pools.material(&ct.lease())), pt);
        assert_eq!(decrypt(&ct, &pools), pt);
        let ct2 = encrypt(&BitString::zeros(2), &mut pools, 2, 1, 0).unwrap();
        assert_eq!(ct2.offset, 8);
        assert!(encrypt(&BitString::zeros(1), &mut pools, 1, 2, 0).is_err());
    }

    #[test]
    fn voice_call_arithmetic() {
        let mut pools = KeyStore::new(0);
        pools.credit(1, 2, 0, 1_000_000);
        let spec = SessionSpec::voice(1, 2, 0, 360);
        let r = run_session(&spec, &mut pools, 10_000);
        assert!(r.completed);
        assert_eq!(r.consumed_bits, 864_000);
        assert!(r.stall_intervals.is_empty());
        assert_eq!(
            pools.pool(1, 2).unwrap().total(Cause::ConsumedApp),
            -864_000
        );
        assert_eq!(r.finished_at_s, Some(360));
    }

    #[test]
    fn short_pool_stalls() {
        let mut pools = KeyStore::new(0);
        pools.credit(1, 2, 0, 10_000);
        let r = run_session(&SessionSpec::voice(1, 2, 5, 60), &mut pools, 100);
        assert!(!r.completed);
        assert_eq!(r.consumed_bits, 4 * 2400);
        assert_eq!(r.stall_intervals, vec![(9, 100)]);
        let r = run_session(&SessionSpec::voice(1, 2, 0, 0), &mut pools, 100);
        assert!(r.completed);
        assert_eq!(r.consumed_bits, 0);
    }

    #[test]
    fn relayed_fetch_is_atomic() {
        let mut pools = KeyStore::new(0);
        pools.credit(1, 10, 0, 5000);
        pools.credit(10, 11, 0, 100);
        pools.credit(11, 2, 0, 5000);
        let before = pools.clone();
        let e = fetch_key(&mut pools, &[1, 10, 11, 2], 2400, 0).unwrap_err();
        assert!(matches!(e, KeyError::InsufficientKey { leg: (10, 11), .. }));
        assert_eq!(pools, before);
        pools.credit(10, 11, 0, 5000);
        assert_eq!(
            fetch_key(&mut pools, &[1, 10, 11, 2], 2400, 0).unwrap(),
            2400
        );
        assert_eq!(pools.stored(1, 2), 2400);
        assert_eq!(pools.stored(1, 11), 0);
    }

    #[test]
    fn text_demand() {
        let s = SessionSpec {
            kind: SessionKind::Text,
            pair: (1, 2),
            start_s: 0,
            duration_s: 25,
            bits_per_s: None,
        };
        assert_eq!(s.total_demand(), 3 * TEXT_MESSAGE_BITS);
    }
}
