use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::report::{CalibrationRecord, EventKind, EventLog, LinkStats, SeriesRow, SimOutput};
use super::{fmt_sig6, Setup};
use crate::apps::{call_route, SessionRunner, Step};
use crate::keymgmt::{JoinRegistry, KeyStore, Millis, PairKey, PairingSchedule};
use crate::keyrate::{finite_key_length, Intensity, ProtocolParameters, TransmissionTally};
use crate::photonics::{
    analytic_observables, run_calibration, transmittance, CalibrationState, DriftProcess,
    DriftState, LinkBudget,
};
use crate::postproc::ACCUMULATION_BITS;
use crate::topology::{NetworkGraph, NodeId, NodeKind};

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Failure(usize),
    Recovery(usize),
    Joined(NodeId),
    Pairing(usize),
    LinkStart { link: usize, epoch: u64 },
    CalibrationEnd { link: usize, epoch: u64 },
    WindowEnd { link: usize, epoch: u64 },
    SessionTick,
    Report,
}

impl Ev {
    /// Order among events due in the same millisecond.
    fn class(&self) -> u8 {
        match self {
            Ev::Failure(_) | Ev::Recovery(_) => 0,
            Ev::Joined(_) => 1,
            Ev::Pairing(_) => 2,
            Ev::LinkStart { .. } => 3,
            Ev::CalibrationEnd { .. } => 4,
            Ev::WindowEnd { .. } => 5,
            Ev::SessionTick => 6,
            Ev::Report => 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LinkState {
    Idle,
    Calibrating { success: bool },
    Active,
}

struct Link {
    pair: PairKey,
    budget: LinkBudget,
    eta: f64,
    params: ProtocolParameters,
    n_pulses: u64,
    qber: f64,
    drift: DriftState,
    cal_rng: ChaCha8Rng,
    state: LinkState,
    epoch: u64,
    ever_active: bool,
    interval_bits: u64,
    interval_active_ms: Millis,
    stats: LinkStats,
}

impl Link {
    fn new(
        graph: &NetworkGraph,
        a: NodeId,
        b: NodeId,
        protocol: &ProtocolParameters,
        drift: DriftProcess,
        seed: u64,
    ) -> Option<Self> {
        let path = graph.quantum_path(a, b).ok()?;
        let budget = path.budget;
        let eta = transmittance(&budget);
        let params = ProtocolParameters {
            y0: budget.dark_rate,
            ..*protocol
        };
        let obs = analytic_observables(eta, &params, budget.misalignment);
        let baseline = obs.qber(Intensity::Signal);
        let probe = TransmissionTally::from_observables(1_000_000_000, &params, &obs);
        let sifted_per_pulse = probe.total_sifted_detections() as f64 / 1e9;
        if sifted_per_pulse <= 0.0 {
            return None;
        }
        let n_pulses = (ACCUMULATION_BITS as f64 / sifted_per_pulse).ceil() as u64;
        let window_ms = ((n_pulses as f64 / params.rep_rate_hz) * 1000.0)
            .ceil()
            .max(1.0) as Millis;
        let relay = |id| {
            graph
                .node(id)
                .is_some_and(|n| n.kind == NodeKind::TrustedRelay)
        };
        let subnetwork = if relay(a) && relay(b) {
            None
        } else {
            let user = if relay(a) { b } else { a };
            graph.node(user).map(|n| n.subnetwork)
        };
        let link_seed = mix(
            seed,
            u64::from(path.transmitter) << 32 | u64::from(path.receiver),
        );
        Some(Self {
            pair: path.pair(),
            budget,
            eta,
            params,
            n_pulses,
            qber: baseline,
            drift: DriftState::new(DriftProcess {
                rng_seed: mix(drift.rng_seed, link_seed),
                ..drift
            }),
            cal_rng: ChaCha8Rng::seed_from_u64(mix(link_seed, 0xca11)),
            state: LinkState::Idle,
            epoch: 0,
            ever_active: false,
            interval_bits: 0,
            interval_active_ms: 0,
            stats: LinkStats {
                transmitter: path.transmitter,
                receiver: path.receiver,
                switch: path.via_switch.map(|v| v.0),
                subnetwork,
                fiber_km: budget.fiber_km,
                baseline_qber: baseline,
                window_ms,
                generated_bits: 0,
                active_ms: 0,
                blocks: 0,
                calibrations: Vec::new(),
            },
        })
    }

    fn touches(&self, id: NodeId) -> bool {
        self.pair.0 == id || self.pair.1 == id || self.stats.switch == Some(id)
    }

    /// Key distilled from one window at the current QBER.
    fn window_key(&self) -> u64 {
        let mis = (self.budget.misalignment + self.qber - self.stats.baseline_qber).clamp(0.0, 0.5);
        let obs = analytic_observables(self.eta, &self.params, mis);
        let tally = TransmissionTally::from_observables(self.n_pulses, &self.params, &obs);
        match finite_key_length(&self.params, &tally) {
            Ok(r) if r.k_tot > 0.0 => r.k_tot.floor() as u64,
            _ => 0,
        }
    }
}

struct Sim<'a> {
    setup: &'a Setup,
    graph: &'a NetworkGraph,
    now: Millis,
    end_ms: Millis,
    seq: u64,
    queue: BinaryHeap<Reverse<(Millis, u8, u64, Ev)>>,
    links: Vec<Link>,
    by_pair: BTreeMap<PairKey, usize>,
    schedules: Vec<PairingSchedule>,
    pools: KeyStore,
    joins: JoinRegistry,
    down: BTreeSet<NodeId>,
    runners: Vec<Option<SessionRunner>>,
    log: EventLog,
    series: Vec<SeriesRow>,
}

impl<'a> Sim<'a> {
    fn name(&self, id: NodeId) -> String {
        self.graph.name_of(id)
    }

    fn link_name(&self, i: usize) -> String {
        let s = &self.links[i].stats;
        format!("{}>{}", self.name(s.transmitter), self.name(s.receiver))
    }

    fn push(&mut self, at: Millis, ev: Ev) {
        self.seq += 1;
        self.queue.push(Reverse((at, ev.class(), self.seq, ev)));
    }

    fn is_relay(&self, id: NodeId) -> bool {
        self.graph
            .node(id)
            .is_some_and(|n| n.kind == NodeKind::TrustedRelay)
    }

    /// Up and, for users, joined and schedulable by `at`.
    fn is_up(&self, id: NodeId, at: Millis) -> bool {
        !self.down.contains(&id) && (self.is_relay(id) || self.joins.is_schedulable(id, at))
    }

    fn activate(&mut self, i: usize) {
        let (a, b) = self.links[i].pair;
        if self.links[i].state != LinkState::Idle
            || !self.is_up(a, self.now)
            || !self.is_up(b, self.now)
        {
            return;
        }
        if let Some(sw) = self.links[i].stats.switch {
            if self.down.contains(&sw) {
                return;
            }
        }
        self.links[i].ever_active = true;
        self.start_calibration(i);
    }

    fn deactivate(&mut self, i: usize) {
        let l = &mut self.links[i];
        l.epoch += 1;
        l.state = LinkState::Idle;
    }

    fn start_calibration(&mut self, i: usize) {
        let l = &mut self.links[i];
        let cal = run_calibration(
            CalibrationState::new(),
            &l.drift.process,
            l.budget.fiber_km,
            &mut l.cal_rng,
        );
        let duration_ms = (cal.elapsed_s * 1000.0).ceil() as Millis;
        let success = cal.succeeded();
        l.stats.calibrations.push(CalibrationRecord {
            start_ms: self.now,
            duration_ms,
            success,
            qber_before: l.qber,
        });
        l.state = LinkState::Calibrating { success };
        let epoch = l.epoch;
        let detail = format!(
            "link={} qber={} duration_s={} ok={}{}",
            self.link_name(i),
            fmt_sig6(self.links[i].qber),
            fmt_sig6(duration_ms as f64 / 1000.0),
            u8::from(success),
            cal.abort_reason
                .map(|r| format!(" reason={}", r.replace([' ', ','], "_")))
                .unwrap_or_default()
        );
        self.log.push(self.now, EventKind::Calibration, detail);
        self.push(
            self.now + duration_ms,
            Ev::CalibrationEnd { link: i, epoch },
        );
    }

    fn calibration_end(&mut self, i: usize) {
        let LinkState::Calibrating { success } = self.links[i].state else {
            return;
        };
        if !success {
            self.start_calibration(i);
            return;
        }
        let l = &mut self.links[i];
        l.qber = l.stats.baseline_qber;
        l.drift.recalibrated();
        l.state = LinkState::Active;
        let (at, epoch) = (self.now + l.stats.window_ms, l.epoch);
        self.push(at, Ev::WindowEnd { link: i, epoch });
    }

    fn window_end(&mut self, i: usize) {
        let dilation = self.setup.scenario.time_dilation;
        let tod = self.setup.scenario.start_time_of_day_s as f64;
        let bits = self.links[i].window_key();
        let l = &mut self.links[i];
        let w = l.stats.window_ms;
        l.stats.generated_bits += bits;
        l.stats.active_ms += w;
        l.stats.blocks += 1;
        l.interval_bits += bits;
        l.interval_active_ms += w;
        let (a, b) = l.pair;
        let env_start = tod + (self.now - w) as f64 / 1000.0 * dilation;
        l.qber = l
            .drift
            .evolve(l.qber, w as f64 / 1000.0 * dilation, env_start);
        let recalibrate = l.drift.needs_calibration(l.qber);
        let epoch = l.epoch;
        self.pools.credit(a, b, self.now, bits);
        if self.setup.scenario.log_blocks {
            let detail = format!("link={} bits={bits}", self.link_name(i));
            self.log.push(self.now, EventKind::BlockComplete, detail);
        }
        if recalibrate {
            self.start_calibration(i);
        } else {
            let at = self.now + w;
            self.push(at, Ev::WindowEnd { link: i, epoch });
        }
    }

    fn pairing(&mut self, s: usize) {
        let sw = self.schedules[s].switch;
        if self.down.contains(&sw) {
            return;
        }
        let old = std::mem::take(&mut self.schedules[s].active);
        for p in old {
            if let Some(&i) = self.by_pair.get(&p) {
                self.deactivate(i);
            }
        }
        let params = self.schedules[s].params;
        let start = self.now + params.session_latency_s * 1000;
        let up: BTreeSet<NodeId> = self.schedules[s]
            .ports
            .keys()
            .copied()
            .filter(|&n| self.is_up(n, start))
            .collect();
        let chosen = self.schedules[s].next_pairing(&self.pools, |n| up.contains(&n));
        let names: Vec<String> = chosen
            .iter()
            .map(|&(a, b)| format!("{}-{}", self.name(a), self.name(b)))
            .collect();
        let detail = format!("switch={} pairs={}", self.name(sw), names.join(" "));
        self.log.push(self.now, EventKind::Pairing, detail);
        for p in chosen {
            if let Some(&i) = self.by_pair.get(&p) {
                let epoch = self.links[i].epoch;
                self.push(start, Ev::LinkStart { link: i, epoch });
            }
        }
        self.push(start + params.switching_interval_s * 1000, Ev::Pairing(s));
    }

    fn failure(&mut self, f: usize, recovering: bool) {
        let spec = &self.setup.scenario.failures[f];
        let id = self.graph.id_of(&spec.node).expect("validated");
        if recovering {
            self.down.remove(&id);
            self.log
                .push(self.now, EventKind::Recovery, format!("node={}", spec.node));
            if let Some(s) = self.schedules.iter().position(|s| s.switch == id) {
                self.push(self.now, Ev::Pairing(s));
            }
            for i in 0..self.links.len() {
                if self.links[i].stats.switch.is_none() && self.links[i].touches(id) {
                    self.activate(i);
                }
            }
            return;
        }
        self.down.insert(id);
        self.log
            .push(self.now, EventKind::Failure, format!("node={}", spec.node));
        if let Some(s) = self.schedules.iter().position(|s| s.switch == id) {
            self.schedules[s].halt();
        }
        for i in 0..self.links.len() {
            if self.links[i].touches(id) {
                self.deactivate(i);
            }
        }
        if let Some(u) = spec.until_s {
            self.push(u * 1000, Ev::Recovery(f));
        }
    }

    fn direct_pairs(&self) -> BTreeSet<PairKey> {
        self.links
            .iter()
            .filter(|l| l.stats.switch.is_none() || l.state != LinkState::Idle)
            .map(|l| l.pair)
            .collect()
    }

    fn session_tick(&mut self) {
        let t = self.now / 1000;
        let mut pending = false;
        for k in 0..self.setup.sessions.len() {
            let spec = self.setup.sessions[k];
            if self.runners[k].is_none() && t >= spec.start_s {
                let route = call_route(self.graph, &self.direct_pairs(), spec.pair.0, spec.pair.1);
                let hops: Vec<String> = route.iter().map(|&n| self.name(n)).collect();
                let detail = format!("start kind={} route={}", spec.kind.label(), hops.join(">"));
                self.log.push(self.now, EventKind::Session, detail);
                let seed = mix(self.setup.scenario.seed, 0x5e55 + k as u64);
                self.runners[k] = Some(SessionRunner::new(spec, route, seed));
            }
            let Some(r) = self.runners[k].as_mut() else {
                pending = true;
                continue;
            };
            let was_stalled = r.is_stalled();
            let relayed = r.relayed_bits();
            let blocked = r.route.iter().any(|n| self.down.contains(n));
            let step = if blocked {
                r.hold(t)
            } else {
                r.step(t, &mut self.pools)
            };
            let pair = format!(
                "{}-{}",
                self.graph.name_of(spec.pair.0),
                self.graph.name_of(spec.pair.1)
            );
            let relayed = r.relayed_bits() - relayed;
            let done = r.is_done();
            if relayed > 0 {
                self.log.push(
                    self.now,
                    EventKind::Relay,
                    format!("pair={pair} bits={relayed}"),
                );
            }
            match step {
                Step::Stalled if !was_stalled => {
                    self.log.push(
                        self.now,
                        EventKind::Stall,
                        format!("pair={pair} state=begin"),
                    );
                }
                Step::Sent(_) if was_stalled => {
                    self.log
                        .push(self.now, EventKind::Stall, format!("pair={pair} state=end"));
                }
                _ => {}
            }
            if matches!(step, Step::Sent(_)) && done {
                self.log
                    .push(self.now, EventKind::Session, format!("end pair={pair}"));
            }
            pending |= !done;
        }
        if pending {
            self.push(self.now + 1000, Ev::SessionTick);
        }
    }

    fn report(&mut self) {
        let time_s = self.now / 1000;
        for (i, l) in self.links.iter_mut().enumerate() {
            if !l.ever_active {
                continue;
            }
            self.series.push(SeriesRow {
                time_s,
                link: i,
                bits: l.interval_bits,
                active_ms: l.interval_active_ms,
                qber: l.qber,
            });
            l.interval_bits = 0;
            l.interval_active_ms = 0;
        }
        let next = self.now + self.setup.scenario.report_interval_s * 1000;
        if next <= self.end_ms {
            self.push(next, Ev::Report);
        }
    }

    fn dispatch(&mut self, ev: Ev) {
        let live = |s: &Self, link: usize, epoch: u64| s.links[link].epoch == epoch;
        match ev {
            Ev::Failure(f) => self.failure(f, false),
            Ev::Recovery(f) => self.failure(f, true),
            Ev::Joined(node) => {
                for i in 0..self.links.len() {
                    if self.links[i].stats.switch.is_none() && self.links[i].touches(node) {
                        self.activate(i);
                    }
                }
            }
            Ev::Pairing(s) => self.pairing(s),
            Ev::LinkStart { link, epoch } => {
                if live(self, link, epoch) {
                    self.activate(link);
                }
            }
            Ev::CalibrationEnd { link, epoch } => {
                if live(self, link, epoch) {
                    self.calibration_end(link);
                }
            }
            Ev::WindowEnd { link, epoch } => {
                if live(self, link, epoch) {
                    self.window_end(link);
                }
            }
            Ev::SessionTick => self.session_tick(),
            Ev::Report => self.report(),
        }
    }
}

/// Runs `setup` to its duration. Identical setups give identical outputs.
pub fn run(setup: &Setup) -> SimOutput {
    let sc = &setup.scenario;
    let graph = &setup.graph;
    let mut links = Vec::new();
    let mut by_pair = BTreeMap::new();
    for p in graph.quantum_paths() {
        let (a, b) = p.pair();
        if let Some(l) = Link::new(graph, a, b, &sc.protocol, sc.drift, sc.seed) {
            by_pair.insert(l.pair, links.len());
            links.push(l);
        }
    }
    let schedules = graph
        .nodes_of_kind(NodeKind::OpticalSwitch)
        .filter_map(|n| PairingSchedule::for_switch(graph, n.id, sc.schedule_for(&n.name)))
        .collect();
    let mut pools = KeyStore::new(mix(sc.seed, 0x900d));
    pools.set_coalescing(sc.ledger_resolution_s * 1000);
    let mut sim = Sim {
        setup,
        graph,
        now: 0,
        end_ms: sc.duration_s * 1000,
        seq: 0,
        queue: BinaryHeap::new(),
        links,
        by_pair,
        schedules,
        pools,
        joins: JoinRegistry::new(sc.join),
        down: BTreeSet::new(),
        runners: vec![None; setup.sessions.len()],
        log: EventLog::default(),
        series: Vec::new(),
    };

    for i in 0..sim.links.len() {
        if sim.links[i].stats.switch.is_none() && sc.initial_pool_bits > 0 {
            let (a, b) = sim.links[i].pair;
            sim.pools.credit(a, b, 0, sc.initial_pool_bits);
        }
    }
    let users: Vec<NodeId> = graph
        .nodes
        .iter()
        .filter(|n| n.kind.is_user())
        .map(|n| n.id)
        .collect();
    for u in users {
        let Some(up) = graph.relay_of(u) else {
            continue;
        };
        match sim.joins.join_node(u, up, 0, &mut sim.pools) {
            Ok(rec) => {
                let detail = format!(
                    "node={} upstream={} schedulable_s={}",
                    sim.name(u),
                    sim.name(up),
                    fmt_sig6(rec.schedulable_at_ms as f64 / 1000.0)
                );
                sim.log.push(0, EventKind::Join, detail);
                sim.push(rec.schedulable_at_ms, Ev::Joined(u));
            }
            Err(e) => {
                let detail = format!(
                    "node={} error={}",
                    sim.name(u),
                    e.to_string().replace([' ', ','], "_")
                );
                sim.log.push(0, EventKind::Failure, detail);
            }
        }
    }
    for i in 0..sim.links.len() {
        let (a, b) = sim.links[i].pair;
        if sim.is_relay(a) && sim.is_relay(b) {
            sim.activate(i);
        }
    }
    for s in 0..sim.schedules.len() {
        sim.push(0, Ev::Pairing(s));
    }
    for (f, spec) in sc.failures.iter().enumerate() {
        sim.push(spec.at_s * 1000, Ev::Failure(f));
    }
    if let Some(first) = setup.sessions.iter().map(|s| s.start_s).min() {
        sim.push(first * 1000, Ev::SessionTick);
    }
    sim.push(sc.report_interval_s * 1000, Ev::Report);

    while let Some(Reverse((at, _, _, ev))) = sim.queue.pop() {
        if at > sim.end_ms {
            break;
        }
        sim.now = at;
        sim.dispatch(ev);
    }
    sim.now = sim.end_ms;

    let end_s = sim.end_ms / 1000;
    let sessions = setup
        .sessions
        .iter()
        .zip(std::mem::take(&mut sim.runners))
        .map(|(spec, r)| {
            r.unwrap_or_else(|| SessionRunner::new(*spec, vec![spec.pair.0, spec.pair.1], 0))
                .finish(end_s)
        })
        .collect();
    let names = graph.nodes.iter().map(|n| (n.id, n.name.clone())).collect();
    SimOutput {
        log: sim.log,
        links: sim.links.into_iter().map(|l| l.stats).collect(),
        series: sim.series,
        sessions,
        pools: sim.pools,
        end_ms: sim.end_ms,
        report_interval_s: sc.report_interval_s,
        start_time_of_day_s: sc.start_time_of_day_s,
        time_dilation: sc.time_dilation,
        names,
    }
}
