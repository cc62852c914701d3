use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{KeyError, KeyStore, Millis};
use crate::postproc::AUTH_BITS_PER_ROUND_TRIP;
use crate::topology::NodeId;

/// Longest time from power-on to being schedulable.
pub const JOIN_DEADLINE_MS: Millis = 120_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JoinConfig {
    pub boot_ms: Millis,
    /// The key management server polls for heartbeat frames on this period.
    pub poll_interval_ms: Millis,
    pub handshake_ms: Millis,
    pub handshake_round_trips: u64,
}

impl Default for JoinConfig {
    fn default() -> Self {
        Self {
            boot_ms: 20_000,
            poll_interval_ms: 60_000,
            handshake_ms: 10_000,
            handshake_round_trips: 4,
        }
    }
}

impl JoinConfig {
    /// Worst-case delay from power-on to schedulable.
    pub fn worst_case_ms(&self) -> Millis {
        self.boot_ms + self.poll_interval_ms + self.handshake_ms
    }

    pub fn auth_bits(&self) -> u64 {
        self.handshake_round_trips * AUTH_BITS_PER_ROUND_TRIP
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JoinRecord {
    pub node: NodeId,
    pub upstream: NodeId,
    pub powered_on_ms: Millis,
    pub heartbeat_ms: Millis,
    pub schedulable_at_ms: Millis,
}

/// Nodes known to the key management servers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JoinRegistry {
    pub config: JoinConfig,
    joined: BTreeMap<NodeId, JoinRecord>,
}

impl JoinRegistry {
    pub fn new(config: JoinConfig) -> Self {
        Self {
            config,
            joined: BTreeMap::new(),
        }
    }

    /// Powers `node` on at `now_ms` and authenticates it with `upstream` out
    /// of their shared reserve.
    pub fn join_node(
        &mut self,
        node: NodeId,
        upstream: NodeId,
        now_ms: Millis,
        pools: &mut KeyStore,
    ) -> Result<JoinRecord, KeyError> {
        if self.joined.contains_key(&node) {
            return Err(KeyError::AlreadyJoined(node));
        }
        pools
            .pool_mut(node, upstream)
            .consume_auth(self.config.auth_bits())?;
        let booted = now_ms + self.config.boot_ms;
        let poll = self.config.poll_interval_ms.max(1);
        let heartbeat_ms = booted.div_ceil(poll) * poll;
        let rec = JoinRecord {
            node,
            upstream,
            powered_on_ms: now_ms,
            heartbeat_ms,
            schedulable_at_ms: heartbeat_ms + self.config.handshake_ms,
        };
        self.joined.insert(node, rec);
        Ok(rec)
    }

    pub fn leave(&mut self, node: NodeId) -> Option<JoinRecord> {
        self.joined.remove(&node)
    }

    pub fn record(&self, node: NodeId) -> Option<&JoinRecord> {
        self.joined.get(&node)
    }

    pub fn is_schedulable(&self, node: NodeId, now_ms: Millis) -> bool {
        self.joined
            .get(&node)
            .is_some_and(|r| r.schedulable_at_ms <= now_ms)
    }

    /// Reloads the initial key of `(node, upstream)` by hand.
    pub fn manual_reset(&mut self, node: NodeId, upstream: NodeId, pools: &mut KeyStore) {
        pools.pool_mut(node, upstream).manual_reset_auth();
        self.joined.remove(&node);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keymgmt::AUTH_RESERVE_BITS;

    #[test]
    fn fresh_node_is_schedulable_within_deadline() {
        let mut reg = JoinRegistry::default();
        let mut pools = KeyStore::new(0);
        assert!(reg.config.worst_case_ms() <= JOIN_DEADLINE_MS);
        for t in [0, 1, 39_999, 40_001, 123_456] {
            let node = 100 + t as NodeId;
            let r = reg.join_node(node, 1, t, &mut pools).unwrap();
            assert!(r.schedulable_at_ms - t <= JOIN_DEADLINE_MS, "{r:?}");
            assert!(!reg.is_schedulable(node, r.schedulable_at_ms - 1));
            assert!(reg.is_schedulable(node, r.schedulable_at_ms));
            assert_eq!(
                pools.pool(node, 1).unwrap().auth_reserve_bits(),
                AUTH_RESERVE_BITS - 256
            );
        }
        assert_eq!(
            reg.join_node(100, 1, 5, &mut pools),
            Err(KeyError::AlreadyJoined(100))
        );
    }

    #[test]
    fn exhausted_reserve_needs_manual_reset() {
        let mut reg = JoinRegistry::default();
        let mut pools = KeyStore::new(0);
        pools
            .pool_mut(7, 1)
            .consume_auth(AUTH_RESERVE_BITS)
            .unwrap();
        assert_eq!(
            reg.join_node(7, 1, 0, &mut pools),
            Err(KeyError::AuthFailure { pair: (1, 7) })
        );
        assert!(reg.record(7).is_none());
        reg.manual_reset(7, 1, &mut pools);
        assert!(reg.join_node(7, 1, 0, &mut pools).is_ok());
    }
}
