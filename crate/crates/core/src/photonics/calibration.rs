//! Three-step link calibration: detector gate scan, polarization feedback
//! (H, V, +, - in turn) and 100 kHz synchronization of the four lasers.
//!
//! Each phase is a sequence of attempts. A failed attempt increments
//! `consecutive_failures`; a passing one resets it. Three failures in a row
//! abort the calibration, as does exceeding the time limit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DriftProcess;

pub const GATE_VISIBILITY_MIN: f64 = 0.15;
pub const POLARIZATION_EXTINCTION_MIN_DB: f64 = 20.0;
pub const MAX_CONSECUTIVE_FAILURES: u32 = 3;
/// A calibration that has not finished by now is aborted.
pub const CALIBRATION_LIMIT_S: f64 = 300.0;

const POLARIZATIONS: [&str; 4] = ["H", "V", "+", "-"];
const LASERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CalibrationPhase {
    GateScan,
    PolarizationFeedback,
    Synchronization,
    Done,
    Aborted,
}

/// One attempt in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStep {
    pub phase: CalibrationPhase,
    /// Polarization label or laser index; empty for the gate scan.
    pub target: String,
    pub metric: f64,
    pub passed: bool,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    pub phase: CalibrationPhase,
    pub consecutive_failures: u32,
    pub elapsed_s: f64,
    /// Last metric measured: gate visibility, extinction in dB, or 1/0 for
    /// a synchronization pass/fail.
    pub visibility: f64,
    /// Index of the polarization or laser being worked on.
    pub sub_step: usize,
    pub abort_reason: Option<String>,
    pub trace: Vec<CalibrationStep>,
}

impl Default for CalibrationState {
    fn default() -> Self {
        Self::new()
    }
}

impl CalibrationState {
    pub fn new() -> Self {
        Self {
            phase: CalibrationPhase::GateScan,
            consecutive_failures: 0,
            elapsed_s: 0.0,
            visibility: 0.0,
            sub_step: 0,
            abort_reason: None,
            trace: Vec::new(),
        }
    }

    pub fn succeeded(&self) -> bool {
        self.phase == CalibrationPhase::Done
    }
}

/// Per-attempt durations. Longer links need longer integration, so every
/// attempt grows linearly with distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTiming {
    pub gate_scan_s: f64,
    pub polarization_s: f64,
    pub sync_s: f64,
}

impl CalibrationTiming {
    pub fn for_distance(fiber_km: f64) -> Self {
        let km = fiber_km.max(0.0);
        Self {
            gate_scan_s: 8.0 + 0.2 * km,
            polarization_s: 6.0 + 0.1 * km,
            sync_s: 5.0 + 0.1 * km,
        }
    }
}

/// Source of calibration measurements.
pub trait CalibrationProbe {
    /// Worst pairwise visibility `|D_i - D_j| / |D_i + D_j|` after a gate scan.
    fn gate_visibility(&mut self) -> f64;
    /// Polarization extinction in dB for the given state after feedback.
    fn polarization_db(&mut self, state: &str) -> f64;
    /// Whether the given laser locked onto the synchronization pulses.
    fn sync_locked(&mut self, laser: usize) -> bool;
}

/// Draws each measurement independently: with probability `failure_prob`
/// the attempt lands below its threshold, otherwise comfortably above.
#[derive(Debug, Clone)]
pub struct StochasticProbe {
    pub failure_prob: f64,
    rng: ChaCha8Rng,
}

impl StochasticProbe {
    pub fn new(failure_prob: f64, seed: u64) -> Self {
        Self {
            failure_prob,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn fails(&mut self) -> bool {
        self.rng.gen::<f64>() < self.failure_prob
    }
}

impl CalibrationProbe for StochasticProbe {
    fn gate_visibility(&mut self) -> f64 {
        if self.fails() {
            self.rng.gen_range(0.02..GATE_VISIBILITY_MIN)
        } else {
            self.rng.gen_range(0.3..0.9)
        }
    }

    fn polarization_db(&mut self, _state: &str) -> f64 {
        if self.fails() {
            self.rng.gen_range(12.0..POLARIZATION_EXTINCTION_MIN_DB)
        } else {
            self.rng.gen_range(22.0..30.0)
        }
    }

    fn sync_locked(&mut self, _laser: usize) -> bool {
        !self.fails()
    }
}

/// Replays fixed measurement sequences; once a queue runs dry it reports a
/// clean pass.
#[derive(Debug, Clone, Default)]
pub struct ScriptedProbe {
    pub gate: Vec<f64>,
    pub polarization: Vec<f64>,
    pub sync: Vec<bool>,
}

impl CalibrationProbe for ScriptedProbe {
    fn gate_visibility(&mut self) -> f64 {
        if self.gate.is_empty() {
            0.5
        } else {
            self.gate.remove(0)
        }
    }

    fn polarization_db(&mut self, _state: &str) -> f64 {
        if self.polarization.is_empty() {
            25.0
        } else {
            self.polarization.remove(0)
        }
    }

    fn sync_locked(&mut self, _laser: usize) -> bool {
        if self.sync.is_empty() {
            true
        } else {
            self.sync.remove(0)
        }
    }
}

/// Failure probability of a single calibration attempt under `drift`.
/// A noisier environment (larger drift) makes attempts fail more often.
pub fn attempt_failure_prob(drift: &DriftProcess) -> f64 {
    (0.02 + 2.0 * drift.qber_drift_rate * drift.diurnal_factor).min(0.5)
}

/// Runs a calibration to completion with stochastic measurements whose
/// failure rate follows the drift process.
pub fn run_calibration<R: Rng + ?Sized>(
    state: CalibrationState,
    drift: &DriftProcess,
    fiber_km: f64,
    rng: &mut R,
) -> CalibrationState {
    let mut probe = StochasticProbe::new(attempt_failure_prob(drift), rng.gen());
    run_calibration_with(state, &mut probe, CalibrationTiming::for_distance(fiber_km))
}

/// Advances `state` until it is `Done` or `Aborted`.
pub fn run_calibration_with(
    mut state: CalibrationState,
    probe: &mut dyn CalibrationProbe,
    timing: CalibrationTiming,
) -> CalibrationState {
    loop {
        let (duration, target, metric, passed) = match state.phase {
            CalibrationPhase::Done | CalibrationPhase::Aborted => return state,
            CalibrationPhase::GateScan => {
                let v = probe.gate_visibility();
                (
                    timing.gate_scan_s,
                    String::new(),
                    v,
                    v >= GATE_VISIBILITY_MIN,
                )
            }
            CalibrationPhase::PolarizationFeedback => {
                let pol = POLARIZATIONS[state.sub_step];
                let db = probe.polarization_db(pol);
                (
                    timing.polarization_s,
                    pol.to_string(),
                    db,
                    db >= POLARIZATION_EXTINCTION_MIN_DB,
                )
            }
            CalibrationPhase::Synchronization => {
                let ok = probe.sync_locked(state.sub_step);
                (
                    timing.sync_s,
                    format!("laser{}", state.sub_step + 1),
                    ok as u8 as f64,
                    ok,
                )
            }
        };
        let phase = state.phase;
        if state.elapsed_s + duration > CALIBRATION_LIMIT_S {
            state.phase = CalibrationPhase::Aborted;
            state.abort_reason = Some(format!(
                "time limit of {CALIBRATION_LIMIT_S} s reached in {phase:?}"
            ));
            return state;
        }
        state.elapsed_s += duration;
        state.visibility = metric;
        state.trace.push(CalibrationStep {
            phase,
            target: target.clone(),
            metric,
            passed,
            elapsed_s: state.elapsed_s,
        });
        if !passed {
            state.consecutive_failures += 1;
            if state.consecutive_failures >= MAX_CONSECUTIVE_FAILURES {
                state.phase = CalibrationPhase::Aborted;
                state.abort_reason = Some(format!(
                    "{MAX_CONSECUTIVE_FAILURES} consecutive failures in {phase:?} {target}"
                ));
                return state;
            }
            continue;
        }
        state.consecutive_failures = 0;
        match phase {
            CalibrationPhase::GateScan => {
                state.phase = CalibrationPhase::PolarizationFeedback;
                state.sub_step = 0;
            }
            CalibrationPhase::PolarizationFeedback => {
                state.sub_step += 1;
                if state.sub_step == POLARIZATIONS.len() {
                    state.phase = CalibrationPhase::Synchronization;
                    state.sub_step = 0;
                }
            }
            CalibrationPhase::Synchronization => {
                state.sub_step += 1;
                if state.sub_step == LASERS {
                    state.phase = CalibrationPhase::Done;
                }
            }
            CalibrationPhase::Done | CalibrationPhase::Aborted => unreachable!(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn timing() -> CalibrationTiming {
        CalibrationTiming::for_distance(18.0)
    }

    #[test]
    fn clean_channel_completes() {
        let s = run_calibration_with(
            CalibrationState::new(),
            &mut ScriptedProbe::default(),
            timing(),
        );
        assert!(s.succeeded());
        assert!(s.elapsed_s <= CALIBRATION_LIMIT_S);
        // 1 gate scan + 4 polarizations + 4 lasers
        assert_eq!(s.trace.len(), 9);
    }

    #[test]
    fn low_visibility_three_times_aborts_in_gate_scan() {
        let mut probe = ScriptedProbe {
            gate: vec![0.10, 0.10, 0.10],
            ..Default::default()
        };
        let s = run_calibration_with(CalibrationState::new(), &mut probe, timing());
        assert_eq!(s.phase, CalibrationPhase::Aborted);
        assert_eq!(s.trace.len(), 3);
        assert!(s
            .trace
            .iter()
            .all(|t| t.phase == CalibrationPhase::GateScan));
    }

    #[test]
    fn polarization_reinitialises_once() {
        let mut probe = ScriptedProbe {
            polarization: vec![19.0, 21.0],
            ..Default::default()
        };
        let s = run_calibration_with(CalibrationState::new(), &mut probe, timing());
        assert!(s.succeeded());
        let h: Vec<_> = s.trace.iter().filter(|t| t.target == "H").collect();
        assert_eq!(h.len(), 2);
        assert!(!h[0].passed && h[1].passed);
    }

    #[test]
    fn failures_reset_on_pass() {
        let mut probe = ScriptedProbe {
            gate: vec![0.1, 0.1, 0.5],
            polarization: vec![19.0, 19.0, 25.0],
            sync: vec![false, false, true],
        };
        let s = run_calibration_with(CalibrationState::new(), &mut probe, timing());
        assert!(s.succeeded(), "{:?}", s.abort_reason);
    }

    #[test]
    fn sync_failure_aborts() {
        let mut probe = ScriptedProbe {
            sync: vec![true, false, false, false],
            ..Default::default()
        };
        let s = run_calibration_with(CalibrationState::new(), &mut probe, timing());
        assert_eq!(s.phase, CalibrationPhase::Aborted);
        assert!(s.abort_reason.unwrap().contains("laser2"));
    }

    #[test]
    fn worst_case_success_fits_time_limit() {
        // Two failures before every pass, at the longest link in the network.
        let mut probe = ScriptedProbe {
            gate: vec![0.1, 0.1, 0.5],
            polarization: [19.0, 19.0, 25.0].repeat(4),
            sync: [false, false, true].repeat(4),
        };
        let s = run_calibration_with(
            CalibrationState::new(),
            &mut probe,
            CalibrationTiming::for_distance(45.0),
        );
        assert!(s.succeeded(), "{:?}", s.abort_reason);
        assert!(s.elapsed_s <= CALIBRATION_LIMIT_S, "{}", s.elapsed_s);
    }

    #[test]
    fn time_limit_aborts() {
        let mut probe = ScriptedProbe {
            gate: vec![0.1, 0.1, 0.5],
            polarization: [19.0, 19.0, 25.0].repeat(4),
            sync: [false, false, true].repeat(4),
        };
        let s = run_calibration_with(
            CalibrationState::new(),
            &mut probe,
            CalibrationTiming::for_distance(80.0),
        );
        assert_eq!(s.phase, CalibrationPhase::Aborted);
        assert!(s.elapsed_s <= CALIBRATION_LIMIT_S);
    }
}
