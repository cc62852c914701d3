use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::photonics::MAX_SWITCH_LOSS_DB;

pub type Port = u8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FabricKind {
    /// Input ports 1..=4, each reaching any of the output ports 5..=12.
    Matrix4x8,
    /// Ports 1..=16, any to any, at most eight pairs at once.
    AllPass16,
}

impl FabricKind {
    /// Number of ports; they are numbered from 1.
    pub fn ports(self) -> Port {
        match self {
            FabricKind::Matrix4x8 => 12,
            FabricKind::AllPass16 => 16,
        }
    }

    /// Simultaneous pairs the fabric can carry.
    pub fn capacity(self) -> usize {
        match self {
            FabricKind::Matrix4x8 => 4,
            FabricKind::AllPass16 => 8,
        }
    }

    pub fn is_input(self, port: Port) -> bool {
        matches!(self, FabricKind::Matrix4x8) && (1..=4).contains(&port)
    }

    pub fn has_port(self, port: Port) -> bool {
        (1..=self.ports()).contains(&port)
    }

    /// Whether `a` and `b` may ever be joined, ignoring current occupancy.
    pub fn admissible(self, a: Port, b: Port) -> bool {
        a != b
            && self.has_port(a)
            && self.has_port(b)
            && match self {
                FabricKind::Matrix4x8 => self.is_input(a) != self.is_input(b),
                FabricKind::AllPass16 => true,
            }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FabricError {
    #[error("port {0} does not exist on this fabric")]
    InvalidPort(Port),
    #[error("cannot connect port {0} to itself")]
    SamePort(Port),
    #[error("port {0} is already in an active pair")]
    PortBusy(Port),
    #[error("fabric already carries its maximum of {0} pairs")]
    CapacityExceeded(usize),
    #[error("ports {0} and {1} are on the same side of the matrix")]
    SideMismatch(Port, Port),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchFabric {
    pub kind: FabricKind,
    pub insertion_loss_db: f64,
    #[serde(default)]
    pub active_pairs: BTreeSet<(Port, Port)>,
}

impl SwitchFabric {
    pub fn new(kind: FabricKind, insertion_loss_db: f64) -> Self {
        Self {
            kind,
            insertion_loss_db,
            active_pairs: BTreeSet::new(),
        }
    }

    pub fn is_busy(&self, port: Port) -> bool {
        self.active_pairs
            .iter()
            .any(|&(a, b)| a == port || b == port)
    }

    pub fn connect(&mut self, a: Port, b: Port) -> Result<(), FabricError> {
        for p in [a, b] {
            if !self.kind.has_port(p) {
                return Err(FabricError::InvalidPort(p));
            }
        }
        if a == b {
            return Err(FabricError::SamePort(a));
        }
        if !self.kind.admissible(a, b) {
            return Err(FabricError::SideMismatch(a, b));
        }
        if self.active_pairs.len() >= self.kind.capacity() {
            return Err(FabricError::CapacityExceeded(self.kind.capacity()));
        }
        for p in [a, b] {
            if self.is_busy(p) {
                return Err(FabricError::PortBusy(p));
            }
        }
        self.active_pairs.insert((a.min(b), a.max(b)));
        Ok(())
    }

    /// Removes the pair if present; returns whether it was.
    pub fn disconnect(&mut self, a: Port, b: Port) -> bool {
        self.active_pairs.remove(&(a.min(b), a.max(b)))
    }

    pub fn clear(&mut self) {
        self.active_pairs.clear();
    }

    /// Broken invariants of the current state.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(0.0..=MAX_SWITCH_LOSS_DB).contains(&self.insertion_loss_db) {
            v.push(format!(
                "insertion loss {} dB outside [0, {MAX_SWITCH_LOSS_DB}]",
                self.insertion_loss_db
            ));
        }
        if self.active_pairs.len() > self.kind.capacity() {
            v.push(format!(
                "{} active pairs exceed the capacity of {}",
                self.active_pairs.len(),
                self.kind.capacity()
            ));
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in &self.active_pairs {
            if !self.kind.admissible(a, b) {
                v.push(format!("pair ({a}, {b}) is not admissible"));
            }
            for p in [a, b] {
                if !seen.insert(p) {
                    v.push(format!("port {p} is in more than one active pair"));
                }
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_pass_caps_at_eight() {
        let mut f = SwitchFabric::new(FabricKind::AllPass16, 1.0);
        f.connect(1, 2).unwrap();
        assert_eq!(f.active_pairs.len(), 1);
        assert_eq!(f.connect(2, 3), Err(FabricError::PortBusy(2)));
        for k in 1..8 {
            f.connect(2 * k + 1, 2 * k + 2).unwrap();
        }
        assert_eq!(f.connect(15, 16), Err(FabricError::CapacityExceeded(8)));
        assert!(f.disconnect(16, 15));
        f.connect(15, 16).unwrap();
        f.active_pairs.insert((3, 3));
        assert_eq!(f.violations().len(), 4);
    }

    #[test]
    fn matrix_is_bipartite() {
        let mut f = SwitchFabric::new(FabricKind::Matrix4x8, 0.8);
        assert_eq!(f.connect(2, 3), Err(FabricError::SideMismatch(2, 3)));
        assert_eq!(f.connect(5, 12), Err(FabricError::SideMismatch(5, 12)));
        f.connect(2, 7).unwrap();
        assert_eq!(f.connect(13, 1), Err(FabricError::InvalidPort(13)));
        assert_eq!(f.connect(0, 5), Err(FabricError::InvalidPort(0)));
        assert_eq!(f.connect(7, 1), Err(FabricError::PortBusy(7)));
        for k in [1, 3, 4] {
            f.connect(k, 8 + k).unwrap();
        }
        assert_eq!(f.connect(1, 5), Err(FabricError::CapacityExceeded(4)));
        assert!(f.violations().is_empty());
    }
}
