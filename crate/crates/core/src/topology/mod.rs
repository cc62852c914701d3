//! Static network model: nodes, fibers, switch fabrics and validity rules.

mod fabric;

pub use fabric::{FabricError, FabricKind, Port, SwitchFabric};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::photonics::LinkBudget;

pub type NodeId = u32;

/// The reference network description shipped with the crate.
pub const REFERENCE_TOPOLOGY: &str = include_str!("../../data/hefei.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    UserA,
    UserB,
    TrustedRelay,
    OpticalSwitch,
}

impl NodeKind {
    pub fn is_user(self) -> bool {
        matches!(self, NodeKind::UserA | NodeKind::UserB)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subnetwork {
    Ustc,
    QuantumCtek,
    CityLibrary,
}

impl Subnetwork {
    pub const ALL: [Subnetwork; 3] = [
        Subnetwork::Ustc,
        Subnetwork::QuantumCtek,
        Subnetwork::CityLibrary,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Subnetwork::Ustc => "ustc",
            Subnetwork::QuantumCtek => "quantum_ctek",
            Subnetwork::CityLibrary => "city_library",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
    pub subnetwork: Subnetwork,
    #[serde(rename = "transmitter")]
    pub has_transmitter: bool,
    #[serde(rename = "receiver")]
    pub has_receiver: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attached_to: Option<NodeId>,
    /// Spoke fiber to the attachment point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fiber_km: Option<f64>,
    /// Switch port, for users attached to a switch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port: Option<Port>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fabric: Option<SwitchFabric>,
}

/// Fiber between two trusted relays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelayLink {
    pub a: NodeId,
    pub b: NodeId,
    pub fiber_km: f64,
}

/// A switch port wired to a node other than an attached user (a relay).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchPort {
    pub switch: NodeId,
    pub node: NodeId,
    pub port: Port,
    pub fiber_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkGraph {
    pub name: String,
    /// Detector and source-side parameters shared by every path; fiber and
    /// switch loss are filled in per path.
    #[serde(default)]
    pub link_defaults: LinkBudget,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub relay_links: Vec<RelayLink>,
    #[serde(default)]
    pub switch_ports: Vec<SwitchPort>,
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed topology: {0}")]
    Parse(#[from] toml::de::Error),
}

/// One broken rule, with the nodes involved.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Violation {
    pub nodes: Vec<NodeId>,
    pub message: String,
}

impl Violation {
    fn new(nodes: impl Into<Vec<NodeId>>, message: impl Into<String>) -> Self {
        let mut nodes = nodes.into();
        nodes.sort_unstable();
        Self {
            nodes,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "nodes {:?}: {}", self.nodes, self.message)
    }
}

/// A direct quantum channel between two nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantumPath {
    pub transmitter: NodeId,
    pub receiver: NodeId,
    pub budget: LinkBudget,
    /// Switch and the two ports it joins, when the path crosses a switch.
    pub via_switch: Option<(NodeId, Port, Port)>,
}

impl QuantumPath {
    /// The unordered endpoint pair, lower id first.
    pub fn pair(&self) -> (NodeId, NodeId) {
        ordered(self.transmitter, self.receiver)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no direct quantum path between {0} and {1}")]
pub struct Unreachable(pub NodeId, pub NodeId);

pub fn ordered(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    (a.min(b), a.max(b))
}

impl NetworkGraph {
    pub fn from_toml_str(s: &str) -> Result<Self, TopologyError> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TopologyError> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|source| TopologyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&s)
    }

    pub fn reference() -> Self {
        Self::from_toml_str(REFERENCE_TOPOLOGY).expect("shipped topology parses")
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("graph serializes")
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut NodeSpec> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    pub fn id_of(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.id)
    }

    /// Node name, or the numeric id if unknown.
    pub fn name_of(&self, id: NodeId) -> String {
        self.node(id)
            .map_or_else(|| id.to_string(), |n| n.name.clone())
    }

    pub fn nodes_of_kind(&self, kind: NodeKind) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.iter().filter(move |n| n.kind == kind)
    }

    /// The trusted relay serving `id`: itself for a relay, the attachment
    /// for a type-B user, the subnetwork's relay otherwise.
    pub fn relay_of(&self, id: NodeId) -> Option<NodeId> {
        let n = self.node(id)?;
        match n.kind {
            NodeKind::TrustedRelay => Some(id),
            NodeKind::UserB => n.attached_to,
            _ => self
                .nodes_of_kind(NodeKind::TrustedRelay)
                .find(|r| r.subnetwork == n.subnetwork)
                .map(|r| r.id),
        }
    }

    /// Everything wired to `switch`: (node, port, spoke fiber km).
    pub fn switch_attachments(&self, switch: NodeId) -> Vec<(NodeId, Port, f64)> {
        let mut v: Vec<_> = self
            .nodes
            .iter()
            .filter(|n| n.attached_to == Some(switch) && n.port.is_some())
            .map(|n| (n.id, n.port.unwrap(), n.fiber_km.unwrap_or(0.0)))
            .chain(
                self.switch_ports
                    .iter()
                    .filter(|p| p.switch == switch)
                    .map(|p| (p.node, p.port, p.fiber_km)),
            )
            .collect();
        v.sort_by_key(|&(_, p, _)| p);
        v
    }

    /// Fabrics of all switches, in id order.
    pub fn fabrics(&self) -> BTreeMap<NodeId, SwitchFabric> {
        self.nodes
            .iter()
            .filter_map(|n| n.fabric.clone().map(|f| (n.id, f)))
            .collect()
    }

    fn budget(&self, fiber_km: f64, switch_loss_db: f64) -> LinkBudget {
        LinkBudget {
            fiber_km,
            switch_loss_db,
            ..self.link_defaults
        }
    }

    /// The direct quantum channel between `a` and `b`, if any.
    ///
    /// Relays talk over their dedicated fibers, type-B users reach only
    /// their own relay, and anything wired to the same switch can be joined
    /// through it (for a matrix switch, only across its two sides).
    pub fn quantum_path(&self, a: NodeId, b: NodeId) -> Result<QuantumPath, Unreachable> {
        let na = self.node(a).ok_or(Unreachable(a, b))?;
        let nb = self.node(b).ok_or(Unreachable(a, b))?;
        if a == b {
            return Err(Unreachable(a, b));
        }
        let (tx, rx) = transmit_direction(na, nb);
        let path = |budget, via_switch| QuantumPath {
            transmitter: tx,
            receiver: rx,
            budget,
            via_switch,
        };
        if na.kind == NodeKind::TrustedRelay && nb.kind == NodeKind::TrustedRelay {
            return self
                .relay_links
                .iter()
                .find(|l| ordered(l.a, l.b) == ordered(a, b))
                .map(|l| path(self.budget(l.fiber_km, 0.0), None))
                .ok_or(Unreachable(a, b));
        }
        for (user, other) in [(na, nb), (nb, na)] {
            if user.kind == NodeKind::UserB {
                return if user.attached_to == Some(other.id) && other.kind == NodeKind::TrustedRelay
                {
                    Ok(path(self.budget(user.fiber_km.unwrap_or(0.0), 0.0), None))
                } else {
                    Err(Unreachable(a, b))
                };
            }
        }
        for (sw, fabric) in self.fabrics() {
            let att = self.switch_attachments(sw);
            let ports_a: Vec<_> = att.iter().filter(|x| x.0 == a).collect();
            let ports_b: Vec<_> = att.iter().filter(|x| x.0 == b).collect();
            for pa in &ports_a {
                for pb in &ports_b {
                    if fabric.kind.admissible(pa.1, pb.1) {
                        let budget = self.budget(pa.2 + pb.2, fabric.insertion_loss_db);
                        let (p_lo, p_hi) = if a < b { (pa.1, pb.1) } else { (pb.1, pa.1) };
                        return Ok(path(budget, Some((sw, p_lo, p_hi))));
                    }
                }
            }
        }
        Err(Unreachable(a, b))
    }

    pub fn path_budget(&self, a: NodeId, b: NodeId) -> Result<LinkBudget, Unreachable> {
        self.quantum_path(a, b).map(|p| p.budget)
    }

    /// Every pair of nodes joined by a direct quantum channel.
    pub fn quantum_paths(&self) -> Vec<QuantumPath> {
        let ids: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| n.kind != NodeKind::OpticalSwitch)
            .map(|n| n.id)
            .collect();
        let mut out = Vec::new();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                if let Ok(p) = self.quantum_path(a, b) {
                    out.push(p);
                }
            }
        }
        out.sort_by_key(|p| p.pair());
        out
    }
}

/// Type-B users and type-A users transmit to relays; otherwise the lower id
/// transmits.
fn transmit_direction(a: &NodeSpec, b: &NodeSpec) -> (NodeId, NodeId) {
    let relay = |n: &NodeSpec| n.kind == NodeKind::TrustedRelay;
    if relay(a) && !relay(b) {
        (b.id, a.id)
    } else if relay(b) && !relay(a) {
        (a.id, b.id)
    } else {
        ordered(a.id, b.id)
    }
}

/// Every invariant violation of `graph`. The result is sorted, so it does
/// not depend on the order of records in the file.
pub fn validate(graph: &NetworkGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = BTreeMap::new();
    let mut names = BTreeMap::new();
    for n in &graph.nodes {
        if let Some(prev) = ids.insert(n.id, n) {
            out.push(Violation::new(
                [n.id],
                format!("id {} used by {} and {}", n.id, prev.name, n.name),
            ));
        }
        if let Some(prev) = names.insert(n.name.as_str(), n.id) {
            out.push(Violation::new(
                [prev, n.id],
                format!("name {} is not unique", n.name),
            ));
        }
    }

    for n in &graph.nodes {
        let mut p = Vec::new();
        match n.kind {
            NodeKind::UserA if !(n.has_transmitter && n.has_receiver) => {
                p.push("type-A user must hold a transmitter and a receiver".to_string())
            }
            NodeKind::UserB if !n.has_transmitter || n.has_receiver => {
                p.push("type-B user must hold a transmitter and no receiver".to_string())
            }
            _ => {}
        }
        let parent = n.attached_to.and_then(|id| ids.get(&id).copied());
        match (n.kind, n.attached_to, parent) {
            (NodeKind::UserA | NodeKind::UserB, None, _) => p.push("user is not attached".into()),
            (_, Some(id), None) => p.push(format!("attached to unknown node {id}")),
            (NodeKind::UserA, _, Some(par)) if par.kind != NodeKind::OpticalSwitch => p.push(
                format!("type-A user attached to {} which is not a switch", par.name),
            ),
            (NodeKind::UserB, _, Some(par)) if par.kind != NodeKind::TrustedRelay => p.push(
                format!("type-B user attached to {} which is not a relay", par.name),
            ),
            (NodeKind::TrustedRelay | NodeKind::OpticalSwitch, Some(_), _) => {
                p.push("relays and switches are not attached to other nodes".into())
            }
            _ => {}
        }
        if let Some(par) = parent {
            if par.subnetwork != n.subnetwork {
                p.push(format!(
                    "subnetwork differs from its attachment {}",
                    par.name
                ));
            }
        }
        if n.kind.is_user() {
            match n.fiber_km {
                Some(f) if f >= 0.0 && f.is_finite() => {}
                Some(f) => p.push(format!("spoke fiber {f} km is not a length")),
                None => p.push("user has no spoke fiber length".into()),
            }
        }
        match (n.kind, n.port) {
            (NodeKind::UserA, None) => p.push("type-A user has no switch port".into()),
            (NodeKind::UserA, Some(_)) => {}
            (_, Some(_)) => p.push("only type-A users carry a switch port".into()),
            _ => {}
        }
        match (n.kind, &n.fabric) {
            (NodeKind::OpticalSwitch, None) => p.push("switch has no fabric".into()),
            (NodeKind::OpticalSwitch, Some(f)) => p.extend(f.violations()),
            (_, Some(_)) => p.push("only switches carry a fabric".into()),
            _ => {}
        }
        if !p.is_empty() {
            out.push(Violation::new(
                [n.id],
                format!("{}: {}", n.name, p.join("; ")),
            ));
        }
    }

    // Ports of each switch.
    for sw in graph
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::OpticalSwitch)
    {
        let Some(fabric) = &sw.fabric else { continue };
        let mut used: BTreeMap<Port, NodeId> = BTreeMap::new();
        for (node, port, fiber) in graph.switch_attachments(sw.id) {
            if !fabric.kind.has_port(port) {
                out.push(Violation::new(
                    [sw.id, node],
                    format!("{}: port {port} does not exist", sw.name),
                ));
            }
            if let Some(prev) = used.insert(port, node) {
                out.push(Violation::new(
                    [sw.id, prev, node],
                    format!("{}: port {port} wired twice", sw.name),
                ));
            }
            if !(fiber >= 0.0) {
                out.push(Violation::new(
                    [sw.id, node],
                    format!("{}: negative fiber on port {port}", sw.name),
                ));
            }
        }
    }
    for sp in &graph.switch_ports {
        let ok = ids
            .get(&sp.switch)
            .is_some_and(|n| n.kind == NodeKind::OpticalSwitch)
            && ids
                .get(&sp.node)
                .is_some_and(|n| n.kind == NodeKind::TrustedRelay);
        if !ok {
            out.push(Violation::new(
                [sp.switch, sp.node],
                "switch port records join a switch to a relay",
            ));
        }
    }

    // Relay mesh.
    let relays: Vec<NodeId> = graph
        .nodes_of_kind(NodeKind::TrustedRelay)
        .map(|n| n.id)
        .collect();
    let mut linked = BTreeSet::new();
    for l in &graph.relay_links {
        let both = [l.a, l.b].iter().all(|id| {
            ids.get(id)
                .is_some_and(|n| n.kind == NodeKind::TrustedRelay)
        });
        if !both || l.a == l.b {
            out.push(Violation::new(
                [l.a, l.b],
                "relay link must join two distinct relays",
            ));
        } else if !linked.insert(ordered(l.a, l.b)) {
            out.push(Violation::new([l.a, l.b], "duplicate relay link"));
        }
        if !(l.fiber_km >= 0.0) {
            out.push(Violation::new(
                [l.a, l.b],
                "relay link fiber is not a length",
            ));
        }
    }
    for (i, &a) in relays.iter().enumerate() {
        for &b in &relays[i + 1..] {
            if !linked.contains(&ordered(a, b)) {
                out.push(Violation::new([a, b], "relays are not directly linked"));
            }
        }
    }
    for v in graph.link_defaults.violations() {
        out.push(Violation::new([], format!("link defaults: {v}")));
    }
    out.sort();
    out
}

/// Differences between `graph` and the reference layout: 3 relays, 3
/// switches, 13 type-A and 27 type-B users attached as
/// UA-1..5 -> OS-1, UA-6..7 -> OS-2, UA-8..13 -> OS-3,
/// UB-1..12 -> TR-1, UB-13..17 -> TR-2, UB-18..27 -> TR-3.
pub fn reference_layout_violations(graph: &NetworkGraph) -> Vec<String> {
    let mut out = Vec::new();
    let count = |k| graph.nodes_of_kind(k).count();
    for (k, want) in [
        (NodeKind::TrustedRelay, 3),
        (NodeKind::OpticalSwitch, 3),
        (NodeKind::UserA, 13),
        (NodeKind::UserB, 27),
    ] {
        if count(k) != want {
            out.push(format!("{k:?}: {} nodes, expected {want}", count(k)));
        }
    }
    if graph.nodes.len() != 46 {
        out.push(format!("{} nodes, expected 46", graph.nodes.len()));
    }
    let map: [(&str, std::ops::RangeInclusive<u32>, &str); 6] = [
        ("UA", 1..=5, "OS-1"),
        ("UA", 6..=7, "OS-2"),
        ("UA", 8..=13, "OS-3"),
        ("UB", 1..=12, "TR-1"),
        ("UB", 13..=17, "TR-2"),
        ("UB", 18..=27, "TR-3"),
    ];
    for (prefix, range, hub) in map {
        let hub_id = graph.id_of(hub);
        for k in range {
            let name = format!("{prefix}-{k}");
            match graph.id_of(&name).and_then(|id| graph.node(id)) {
                None => out.push(format!("{name} missing")),
                Some(n) if n.attached_to != hub_id || hub_id.is_none() => {
                    out.push(format!("{name} not attached to {hub}"))
                }
                _ => {}
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetworkGraph {
        NetworkGraph::from_toml_str(
            r#"
name = "tiny"
[[nodes]]
id = 1
name = "TR-1"
kind = "trusted_relay"
subnetwork = "ustc"
transmitter = true
receiver = true
[[nodes]]
id = 2
name = "OS-1"
kind = "optical_switch"
subnetwork = "ustc"
transmitter = false
receiver = false
fabric = { kind = "all_pass16", insertion_loss_db = 1.0 }
[[nodes]]
id = 3
name = "UA-1"
kind = "user_a"
subnetwork = "ustc"
transmitter = true
receiver = true
attached_to = 2
fiber_km = 5.0
port = 1
[[nodes]]
id = 4
name = "UA-2"
kind = "user_a"
subnetwork = "ustc"
transmitter = true
receiver = true
attached_to = 2
fiber_km = 6.0
port = 2
[[nodes]]
id = 5
name = "UB-1"
kind = "user_b"
subnetwork = "ustc"
transmitter = true
receiver = false
attached_to = 1
fiber_km = 9.0
"#,
        )
        .unwrap()
    }

    #[test]
    fn tiny_graph_is_valid() {
        assert_eq!(validate(&tiny()), vec![]);
    }

    #[test]
    fn same_switch_paths_add_spokes() {
        let g = tiny();
        let p = g.quantum_path(3, 4).unwrap();
        assert_eq!(p.budget.fiber_km, 11.0);
        assert_eq!(p.budget.switch_loss_db, 1.0);
        assert_eq!(p.via_switch, Some((2, 1, 2)));
        let ub = g.path_budget(5, 1).unwrap();
        assert_eq!((ub.fiber_km, ub.switch_loss_db), (9.0, 0.0));
        assert_eq!(g.quantum_path(5, 1).unwrap().transmitter, 5);
        assert_eq!(g.path_budget(5, 3), Err(Unreachable(5, 3)));
    }

    #[test]
    fn receiver_on_type_b_is_one_violation() {
        let mut g = tiny();
        g.node_mut(5).unwrap().has_receiver = true;
        let v = validate(&g);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].nodes, vec![5]);
    }

    #[test]
    fn nine_pairs_is_one_violation() {
        let mut g = tiny();
        let f = g.node_mut(2).unwrap().fabric.as_mut().unwrap();
        for k in 0..9u8 {
            f.active_pairs.insert((k + 1, k + 8));
        }
        let v = validate(&g);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].nodes, vec![2]);
    }

    #[test]
    fn toml_roundtrip() {
        let g = tiny();
        assert_eq!(NetworkGraph::from_toml_str(&g.to_toml_string()).unwrap(), g);
    }
}
