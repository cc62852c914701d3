use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{KeyStore, PairKey};
use crate::topology::{ordered, NetworkGraph, NodeId, Port, SwitchFabric};

/// Allowed pairing latencies, in seconds.
pub const PAIRING_LATENCIES_S: [u64; 3] = [600, 900, 1800];
pub const SWITCHING_INTERVAL_RANGE_S: (u64, u64) = (600, 3600);

/// Every unordered pair of `users`, lower id first, sorted.
pub fn enumerate_pairs(users: &[NodeId]) -> Vec<PairKey> {
    let mut u: Vec<NodeId> = users.to_vec();
    u.sort_unstable();
    u.dedup();
    let mut out = Vec::with_capacity(u.len() * u.len().saturating_sub(1) / 2);
    for (i, &a) in u.iter().enumerate() {
        for &b in &u[i + 1..] {
            out.push((a, b));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleParams {
    /// Delay between a pairing decision and the start of QKD on the new paths.
    pub session_latency_s: u64,
    /// How long a pair set stays connected before the next decision.
    pub switching_interval_s: u64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            session_latency_s: 600,
            switching_interval_s: 1800,
        }
    }
}

impl ScheduleParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !PAIRING_LATENCIES_S.contains(&self.session_latency_s) {
            v.push(format!(
                "session latency {} s is not one of 600, 900, 1800",
                self.session_latency_s
            ));
        }
        let (lo, hi) = SWITCHING_INTERVAL_RANGE_S;
        if !(lo..=hi).contains(&self.switching_interval_s) {
            v.push(format!(
                "switching interval {} s outside [{lo}, {hi}]",
                self.switching_interval_s
            ));
        }
        v
    }
}

/// Roll-Call-Polling state of one switch.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingSchedule {
    pub switch: NodeId,
    pub fabric: SwitchFabric,
    /// Ports each attached node is wired to.
    pub ports: BTreeMap<NodeId, Vec<Port>>,
    /// Candidate pairs, re-sorted at every decision.
    pub queue: Vec<PairKey>,
    pub active: Vec<PairKey>,
    pub params: ScheduleParams,
}

impl PairingSchedule {
    /// A schedule over explicit node-to-port wiring. Pairs the fabric can
    /// never join are left out of the queue.
    pub fn new(
        switch: NodeId,
        fabric: SwitchFabric,
        ports: BTreeMap<NodeId, Vec<Port>>,
        params: ScheduleParams,
    ) -> Self {
        let mut fabric = fabric;
        fabric.clear();
        let users: Vec<NodeId> = ports.keys().copied().collect();
        let mut s = Self {
            switch,
            fabric,
            ports,
            queue: Vec::new(),
            active: Vec::new(),
            params,
        };
        s.queue = enumerate_pairs(&users)
            .into_iter()
            .filter(|&(a, b)| s.port_pair(a, b).is_some())
            .collect();
        s
    }

    /// Schedule for `switch` in `graph`.
    pub fn for_switch(
        graph: &NetworkGraph,
        switch: NodeId,
        params: ScheduleParams,
    ) -> Option<Self> {
        let fabric = graph.node(switch)?.fabric.clone()?;
        let mut ports: BTreeMap<NodeId, Vec<Port>> = BTreeMap::new();
        for (node, port, _) in graph.switch_attachments(switch) {
            ports.entry(node).or_default().push(port);
        }
        Some(Self::new(switch, fabric, ports, params))
    }

    /// `count` users on ports 1..=count, ids 1..=count.
    pub fn uniform(fabric: SwitchFabric, count: u8) -> Self {
        let ports = (1..=count).map(|p| (NodeId::from(p), vec![p])).collect();
        Self::new(0, fabric, ports, ScheduleParams::default())
    }

    /// First admissible port combination joining `a` and `b`.
    pub fn port_pair(&self, a: NodeId, b: NodeId) -> Option<(Port, Port)> {
        let (pa, pb) = (self.ports.get(&a)?, self.ports.get(&b)?);
        pa.iter()
            .flat_map(|&x| pb.iter().map(move |&y| (x, y)))
            .find(|&(x, y)| self.fabric.kind.admissible(x, y))
    }

    /// Orders the queue least-key-first, ties by network id.
    pub fn sort_queue(&mut self, pools: &KeyStore) {
        self.queue.sort_by_key(|&(a, b)| (pools.stored(a, b), a, b));
    }

    /// Reconnects the fabric with a fresh pair set: walk the sorted queue and
    /// take every pair whose nodes are both free and `available`, up to the
    /// fabric's capacity.
    pub fn next_pairing(
        &mut self,
        pools: &KeyStore,
        available: impl Fn(NodeId) -> bool,
    ) -> Vec<PairKey> {
        self.next_pairing_among(pools, |(a, b)| available(a) && available(b))
    }

    /// Like [`next_pairing`](Self::next_pairing), restricted to pairs for
    /// which `wanted` holds.
    pub fn next_pairing_among(
        &mut self,
        pools: &KeyStore,
        wanted: impl Fn(PairKey) -> bool,
    ) -> Vec<PairKey> {
        self.sort_queue(pools);
        self.fabric.clear();
        self.active.clear();
        let mut busy = BTreeSet::new();
        for i in 0..self.queue.len() {
            if self.active.len() >= self.fabric.kind.capacity() {
                break;
            }
            let (a, b) = self.queue[i];
            if busy.contains(&a) || busy.contains(&b) || !wanted((a, b)) {
                continue;
            }
            let Some((pa, pb)) = self.port_pair(a, b) else {
                continue;
            };
            if self.fabric.connect(pa, pb).is_ok() {
                busy.insert(a);
                busy.insert(b);
                self.active.push(ordered(a, b));
            }
        }
        self.active.clone()
    }

    /// Drops the current pair set, e.g. on switch failure.
    pub fn halt(&mut self) {
        self.fabric.clear();
        self.active.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::FabricKind;

    #[test]
    fn pair_counts() {
        let users: Vec<NodeId> = (1..=16).collect();
        assert_eq!(enumerate_pairs(&users).len(), 120);
        assert_eq!(enumerate_pairs(&[4, 2]), vec![(2, 4)]);
        assert!(enumerate_pairs(&[7]).is_empty());
    }

    #[test]
    fn least_key_goes_first() {
        let mut s = PairingSchedule::uniform(SwitchFabric::new(FabricKind::AllPass16, 1.0), 3);
        let mut pools = KeyStore::new(0);
        pools.credit(1, 2, 0, 100);
        pools.credit(1, 3, 0, 50);
        pools.credit(2, 3, 0, 70);
        assert_eq!(s.next_pairing(&pools, |_| true), vec![(1, 3)]);
    }

    #[test]
    fn equal_pools_follow_id_order() {
        let mut s = PairingSchedule::uniform(SwitchFabric::new(FabricKind::AllPass16, 1.0), 16);
        let pools = KeyStore::new(0);
        let got = s.next_pairing(&pools, |_| true);
        let want: Vec<PairKey> = (0..8).map(|k| (2 * k + 1, 2 * k + 2)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn matrix_only_pairs_across_sides() {
        let mut ports = BTreeMap::new();
        ports.insert(10, vec![1]);
        ports.insert(11, vec![5]);
        ports.insert(12, vec![2, 6]);
        let s = PairingSchedule::new(
            99,
            SwitchFabric::new(FabricKind::Matrix4x8, 0.8),
            ports,
            ScheduleParams::default(),
        );
        assert_eq!(s.queue, vec![(10, 11), (10, 12), (11, 12)]);
        assert_eq!(s.port_pair(10, 12), Some((1, 6)));
        assert_eq!(s.port_pair(11, 12), Some((5, 2)));
    }

    #[test]
    fn params_checked() {
        assert!(ScheduleParams::default().violations().is_empty());
        let p = ScheduleParams {
            session_latency_s: 700,
            switching_interval_s: 100,
        };
        assert_eq!(p.violations().len(), 2);
    }
}
