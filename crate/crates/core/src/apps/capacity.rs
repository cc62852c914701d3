use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use super::{SessionReport, SessionRunner, SessionSpec, Step};
use crate::keymgmt::{KeyStore, PairKey, PairingSchedule, ScheduleParams};
use crate::topology::{ordered, NetworkGraph, NodeId, NodeKind};

/// Measured directional rates, `transmitter,receiver,kbps`.
pub const PUBLISHED_RATES_CSV: &str = include_str!("../../data/published_rates.csv");

/// Eleven simultaneous six-minute calls between type-B users.
pub const REFERENCE_CAPACITY_PLAN: &str = include_str!("../../data/capacity_plan.toml");

/// Rates per unordered pair in kbps; the mean of both directions when both
/// were measured. Rows naming unknown nodes are skipped.
pub fn published_rates(graph: &NetworkGraph) -> BTreeMap<PairKey, f64> {
    let mut acc: BTreeMap<PairKey, (f64, u32)> = BTreeMap::new();
    for line in PUBLISHED_RATES_CSV
        .lines()
        .skip_while(|l| l.starts_with('#'))
        .skip(1)
    {
        let f: Vec<&str> = line.split(',').collect();
        let (Some(a), Some(b), Ok(v)) = (graph.id_of(f[0]), graph.id_of(f[1]), f[2].parse::<f64>())
        else {
            continue;
        };
        let e = acc.entry(ordered(a, b)).or_default();
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (s, n))| (k, s / f64::from(n)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityConfig {
    pub window_s: u64,
    /// Key already stored on every rated link at t = 0.
    pub initial_pool_bits: u64,
    /// Replaces every link rate, e.g. to starve the network.
    pub rate_override_kbps: Option<f64>,
    pub seed: u64,
}

impl Default for CapacityConfig {
    fn default() -> Self {
        Self {
            window_s: 3000,
            initial_pool_bits: 64_000,
            rate_override_kbps: None,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppEventKind {
    /// Switch paths connected for QKD on this pair.
    Pairing,
    CallStart,
    StallStart,
    StallEnd,
    CallEnd,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppEvent {
    pub time_s: u64,
    pub kind: AppEventKind,
    pub pair: PairKey,
    /// Route of the call's key, end to end.
    pub route: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub time_s: u64,
    pub pair: PairKey,
    /// Least key held on any leg of the call's route.
    pub pool_bits: u64,
    pub stalled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityReport {
    pub sessions: Vec<SessionReport>,
    pub routes: Vec<Vec<NodeId>>,
    pub trajectory: Vec<TrajectoryRow>,
    pub events: Vec<AppEvent>,
    /// Largest number of pairs any switch carried at once.
    pub max_fabric_pairs: BTreeMap<NodeId, usize>,
}

impl CapacityReport {
    pub fn total_stall_seconds(&self) -> u64 {
        self.sessions.iter().map(SessionReport::stall_seconds).sum()
    }

    pub fn all_completed(&self) -> bool {
        self.sessions.iter().all(|s| s.completed)
    }

    pub fn write_csv<W: Write>(
        &self,
        mut w: W,
        names: impl Fn(NodeId) -> String,
    ) -> io::Result<()> {
        writeln!(w, "time_s,pair,pool_bits,stalled")?;
        for r in &self.trajectory {
            writeln!(
                w,
                "{},{}-{},{},{}",
                r.time_s,
                names(r.pair.0),
                names(r.pair.1),
                r.pool_bits,
                u8::from(r.stalled)
            )?;
        }
        Ok(())
    }
}

/// Route of a call's key: direct when the pair shares a generating link,
/// otherwise through the ends' relays.
pub fn call_route(
    graph: &NetworkGraph,
    links: &BTreeSet<PairKey>,
    a: NodeId,
    b: NodeId,
) -> Vec<NodeId> {
    if links.contains(&ordered(a, b)) {
        return vec![a, b];
    }
    let mut r = vec![a];
    for hop in [graph.relay_of(a), graph.relay_of(b)].into_iter().flatten() {
        if *r.last().unwrap() != hop {
            r.push(hop);
        }
    }
    if *r.last().unwrap() != b {
        r.push(b);
    }
    r
}

/// Runs `sessions` against per-second key generation on every rated link
/// over `config.window_s` seconds.
///
/// Relay and relay-to-relay links generate all the time. Each switch
/// connects the call pairs it can carry, by Roll-Call-Polling order up to its
/// capacity; the remaining calls get their key through the relays.
pub fn capacity_scenario(
    graph: &NetworkGraph,
    pools: &mut KeyStore,
    rates_kbps: &BTreeMap<PairKey, f64>,
    sessions: &[SessionSpec],
    config: &CapacityConfig,
) -> CapacityReport {
    let call_pairs: BTreeSet<PairKey> = sessions.iter().map(|s| s.pair).collect();
    let on_switch = |p: &PairKey| {
        graph
            .quantum_path(p.0, p.1)
            .is_ok_and(|q| q.via_switch.is_some())
    };
    let mut events = Vec::new();
    let mut max_fabric_pairs = BTreeMap::new();

    let mut active: BTreeSet<PairKey> = rates_kbps
        .keys()
        .filter(|p| !on_switch(p))
        .copied()
        .collect();
    for sw in graph.nodes_of_kind(NodeKind::OpticalSwitch) {
        let Some(mut sched) = PairingSchedule::for_switch(graph, sw.id, ScheduleParams::default())
        else {
            continue;
        };
        let chosen = sched.next_pairing_among(pools, |p| {
            call_pairs.contains(&p) && rates_kbps.contains_key(&p)
        });
        max_fabric_pairs.insert(sw.id, sched.fabric.active_pairs.len());
        for p in chosen {
            events.push(AppEvent {
                time_s: 0,
                kind: AppEventKind::Pairing,
                pair: p,
                route: vec![p.0, p.1],
            });
            active.insert(p);
        }
    }

    for &(a, b) in rates_kbps.keys() {
        pools.credit(a, b, 0, config.initial_pool_bits);
    }

    let mut runners: Vec<SessionRunner> = sessions
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let route = call_route(graph, &active, s.pair.0, s.pair.1);
            SessionRunner::new(
                *s,
                route,
                config.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            )
        })
        .collect();
    let routes: Vec<Vec<NodeId>> = runners.iter().map(|r| r.route.clone()).collect();

    let rate_of = |p: &PairKey| config.rate_override_kbps.unwrap_or(rates_kbps[p]) * 1000.0;
    let mut trajectory = Vec::new();
    for t in 0..config.window_s {
        for p in &active {
            let r = rate_of(p);
            let bits = ((t + 1) as f64 * r).floor() - (t as f64 * r).floor();
            pools.credit(p.0, p.1, t * 1000, bits as u64);
        }
        for r in runners.iter_mut() {
            let was_stalled = r.is_stalled();
            let step = r.step(t, pools);
            let ev = |kind| AppEvent {
                time_s: t,
                kind,
                pair: r.spec.pair,
                route: r.route.clone(),
            };
            match step {
                Step::Stalled if !was_stalled => events.push(ev(AppEventKind::StallStart)),
                Step::Sent(_) if was_stalled => events.push(ev(AppEventKind::StallEnd)),
                _ => {}
            }
            if t == r.spec.start_s {
                events.push(ev(AppEventKind::CallStart));
            }
            if matches!(step, Step::Sent(_)) && r.is_done() {
                events.push(ev(AppEventKind::CallEnd));
            }
            if t >= r.spec.start_s && step != Step::Done {
                let legs = r.route.windows(2).map(|w| pools.stored(w[0], w[1]));
                trajectory.push(TrajectoryRow {
                    time_s: t,
                    pair: r.spec.pair,
                    pool_bits: legs.min().unwrap_or(0),
                    stalled: step == Step::Stalled,
                });
            }
        }
    }
    let sessions = runners
        .into_iter()
        .map(|r| r.finish(config.window_s))
        .collect();
    CapacityReport {
        sessions,
        routes,
        trajectory,
        events,
        max_fabric_pairs,
    }
}
