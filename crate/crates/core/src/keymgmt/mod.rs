//! Key pools, pairing scheduler, node join and trusted-relay key relaying.
//!
//! All pool mutation goes through [`KeyStore`]; the simulator owns the single
//! instance and drives it from its event loop.

mod join;
mod pool;
mod schedule;

pub use join::{JoinConfig, JoinRecord, JoinRegistry, JOIN_DEADLINE_MS};
pub use pool::{Cause, KeyLease, KeyPool, KeyStore, LedgerEntry, RelayOutcome, AUTH_RESERVE_BITS};
pub use schedule::{
    enumerate_pairs, PairingSchedule, ScheduleParams, PAIRING_LATENCIES_S,
    SWITCHING_INTERVAL_RANGE_S,
};

use thiserror::Error;

use crate::topology::NodeId;

/// Simulated time in milliseconds.
pub type Millis = u64;

/// Unordered node pair, lower id first.
pub type PairKey = (NodeId, NodeId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum KeyError {
    #[error("not enough key on {}-{}: need {requested} bits, have {available}", leg.0, leg.1)]
    InsufficientKey {
        leg: (NodeId, NodeId),
        requested: u64,
        available: u64,
    },
    #[error("authentication reserve of {}-{} is exhausted; reset it by hand", pair.0, pair.1)]
    AuthFailure { pair: PairKey },
    #[error("node {0} has already joined")]
    AlreadyJoined(NodeId),
    #[error("{0:?} is not a debit cause")]
    BadCause(Cause),
}
