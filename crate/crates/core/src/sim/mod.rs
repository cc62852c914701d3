//! Deterministic discrete-event simulation of the whole network.
//!
//! A [`Setup`] bundles a parsed [`Scenario`] with its topology and session
//! plan; [`run`] drives every link, switch, pool and session on a single
//! integer-millisecond clock and returns a [`SimOutput`] from which all CSV
//! reports are derived.

mod engine;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apps::{PlanError, SessionPlan, SessionSpec};
use crate::keymgmt::{JoinConfig, ScheduleParams};
use crate::keyrate::ProtocolParameters;
use crate::photonics::DriftProcess;
use crate::topology::{validate, NetworkGraph, NodeKind, TopologyError};

pub use engine::run;
pub use report::{
    fmt_sig6, BucketRow, CalibrationRecord, EventKind, EventLog, LinkStats, RateRow, SeriesRow,
    SimEvent, SimOutput,
};

/// Built-in one-hour scenario on the reference network.
pub const REFERENCE_SCENARIO: &str = include_str!("../../data/reference_scenario.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureSpec {
    pub node: String,
    pub at_s: u64,
    /// Back in service at this time; never when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until_s: Option<u64>,
}

fn default_report_interval() -> u64 {
    30
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Topology file, relative to the scenario file. The built-in reference
    /// network when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_plan: Option<PathBuf>,
    pub duration_s: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_report_interval")]
    pub report_interval_s: u64,
    /// The environment clock (drift, time of day) runs this many times
    /// faster than the simulation clock.
    #[serde(default = "one")]
    pub time_dilation: f64,
    /// Time of day at t = 0, seconds after midnight.
    #[serde(default)]
    pub start_time_of_day_s: u64,
    /// Key preloaded on every always-on link.
    #[serde(default)]
    pub initial_pool_bits: u64,
    /// Log one event per distilled block. Off for long runs.
    #[serde(default = "yes")]
    pub log_blocks: bool,
    /// Width of ledger coalescing buckets, 0 for an exact ledger.
    #[serde(default)]
    pub ledger_resolution_s: u64,
    #[serde(default)]
    pub protocol: ProtocolParameters,
    #[serde(default)]
    pub drift: DriftProcess,
    #[serde(default)]
    pub schedule: ScheduleParams,
    /// Per-switch overrides of `schedule`, keyed by switch name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub switch_schedule: BTreeMap<String, ScheduleParams>,
    #[serde(default)]
    pub join: JoinConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FailureSpec>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(s)?)
    }

    pub fn reference() -> Self {
        Self::from_toml_str(REFERENCE_SCENARIO).expect("built-in scenario parses")
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn schedule_for(&self, switch_name: &str) -> ScheduleParams {
        self.switch_schedule
            .get(switch_name)
            .copied()
            .unwrap_or(self.schedule)
    }

    /// Problems that do not need the topology.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.duration_s == 0 {
            v.push("duration_s must be > 0".into());
        }
        if self.report_interval_s == 0 {
            v.push("report_interval_s must be > 0".into());
        }
        if !(self.time_dilation > 0.0 && self.time_dilation.is_finite()) {
            v.push("time_dilation must be finite and > 0".into());
        }
        if let Err(e) = self.protocol.validate() {
            v.push(format!("protocol: {e}"));
        }
        v.extend(
            self.drift
                .violations()
                .into_iter()
                .map(|m| format!("drift: {m}")),
        );
        v.extend(
            self.schedule
                .violations()
                .into_iter()
                .map(|m| format!("schedule: {m}")),
        );
        for (sw, p) in &self.switch_schedule {
            v.extend(
                p.violations()
                    .into_iter()
                    .map(|m| format!("schedule {sw}: {m}")),
            );
        }
        v
    }
}

/// A scenario with everything it references loaded and checked.
#[derive(Debug, Clone)]
pub struct Setup {
    pub scenario: Scenario,
    pub graph: NetworkGraph,
    pub sessions: Vec<SessionSpec>,
}

impl Setup {
    /// Loads `path` and the files it names, relative to its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| ScenarioError::Io {
                path: p.to_path_buf(),
                source,
            })
        };
        let scenario = Scenario::from_toml_str(&read(path)?)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let graph = match &scenario.topology_file {
            Some(f) => NetworkGraph::from_toml_str(&read(&dir.join(f))?)?,
            None => NetworkGraph::reference(),
        };
        let sessions = match &scenario.session_plan {
            Some(f) => SessionPlan::from_toml_str(&read(&dir.join(f))?)?.resolve(&graph)?,
            None => Vec::new(),
        };
        Self::new(scenario, graph, sessions)
    }

    pub fn new(
        scenario: Scenario,
        graph: NetworkGraph,
        sessions: Vec<SessionSpec>,
    ) -> Result<Self, ScenarioError> {
        let mut v = scenario.violations();
        v.extend(validate(&graph).into_iter().map(|x| x.to_string()));
        for f in &scenario.failures {
            if graph.id_of(&f.node).is_none() {
                v.push(format!("failure names unknown node {}", f.node));
            }
            if f.until_s.is_some_and(|u| u <= f.at_s) {
                v.push(format!("failure of {} ends before it starts", f.node));
            }
        }
        for name in scenario.switch_schedule.keys() {
            let is_switch = graph
                .id_of(name)
                .and_then(|id| graph.node(id))
                .is_some_and(|n| n.kind == NodeKind::OpticalSwitch);
            if !is_switch {
                v.push(format!(
                    "switch_schedule names {name}, which is not a switch"
                ));
            }
        }
        for s in &sessions {
            for id in [s.pair.0, s.pair.1] {
                if graph.node(id).is_none() {
                    v.push(format!("session names unknown node id {id}"));
                }
            }
        }
        if !v.is_empty() {
            return Err(ScenarioError::Invalid(v));
        }
        Ok(Self {
            scenario,
            graph,
            sessions,
        })
    }

    /// The built-in reference scenario with its bundled call plan.
    pub fn reference() -> Self {
        let graph = NetworkGraph::reference();
        let sessions = SessionPlan::from_toml_str(crate::apps::REFERENCE_CAPACITY_PLAN)
            .and_then(|p| p.resolve(&graph))
            .expect("built-in plan resolves");
        Self::new(Scenario::reference(), graph, sessions).expect("built-in scenario is valid")
    }
}
