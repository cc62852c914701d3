//! Physical-layer model: link budgets, the analytic channel, a pulse-level
//! Monte Carlo, calibration and polarization drift.

mod calibration;
mod drift;
mod pulses;

use serde::{Deserialize, Serialize};

use crate::keyrate::{Intensity, IntensityObservables, ProtocolParameters, TransmissionTally};

pub use calibration::{
    attempt_failure_prob, run_calibration, run_calibration_with, CalibrationPhase,
    CalibrationProbe, CalibrationState, CalibrationStep, CalibrationTiming, ScriptedProbe,
    StochasticProbe, CALIBRATION_LIMIT_S, GATE_VISIBILITY_MIN, MAX_CONSECUTIVE_FAILURES,
    POLARIZATION_EXTINCTION_MIN_DB,
};
pub use drift::{
    evolve_qber, interval_stats, DriftProcess, DriftState, IntervalStats, SECONDS_PER_DAY,
};
pub use pulses::{
    simulate_pulses, simulate_pulses_detailed, PulseRun, SinglePhotonTruth, AFTERPULSE_WINDOW_GATES,
};

/// Largest switch insertion loss a fabric may add.
pub const MAX_SWITCH_LOSS_DB: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkBudget {
    pub fiber_km: f64,
    /// Fiber attenuation, dB/km.
    pub fiber_loss_db_per_km: f64,
    pub switch_loss_db: f64,
    pub detector_inherent_loss_db: f64,
    pub detector_efficiency: f64,
    /// Dark count probability per gate.
    pub dark_rate: f64,
    pub dead_time_us: f64,
    pub afterpulse_prob: f64,
    pub gate_width_ps: f64,
    pub misalignment: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            fiber_km: 0.0,
            fiber_loss_db_per_km: 0.25,
            switch_loss_db: 0.0,
            detector_inherent_loss_db: 3.0,
            detector_efficiency: 0.10,
            dark_rate: 1e-6,
            dead_time_us: 2.0,
            afterpulse_prob: 0.005,
            gate_width_ps: 500.0,
            misalignment: 0.005,
        }
    }
}

impl LinkBudget {
    pub fn with_fiber(fiber_km: f64) -> Self {
        Self {
            fiber_km,
            ..Self::default()
        }
    }

    pub fn total_loss_db(&self) -> f64 {
        self.fiber_km * self.fiber_loss_db_per_km
            + self.switch_loss_db
            + self.detector_inherent_loss_db
    }

    /// Detector dead time in gates at the given repetition rate (rounded up).
    pub fn dead_time_gates(&self, rep_rate_hz: f64) -> u64 {
        (self.dead_time_us * 1e-6 * rep_rate_hz - 1e-9)
            .ceil()
            .max(0.0) as u64
    }

    /// Human-readable list of violated constraints; empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, p) in [
            ("detector_efficiency", self.detector_efficiency),
            ("dark_rate", self.dark_rate),
            ("afterpulse_prob", self.afterpulse_prob),
            ("misalignment", self.misalignment),
        ] {
            if !(0.0..=1.0).contains(&p) {
                v.push(format!("{name} = {p} outside [0, 1]"));
            }
        }
        for (name, x) in [
            ("fiber_km", self.fiber_km),
            ("fiber_loss_db_per_km", self.fiber_loss_db_per_km),
            ("switch_loss_db", self.switch_loss_db),
            ("detector_inherent_loss_db", self.detector_inherent_loss_db),
            ("dead_time_us", self.dead_time_us),
            ("gate_width_ps", self.gate_width_ps),
        ] {
            if !(x >= 0.0) || !x.is_finite() {
                v.push(format!("{name} = {x} must be finite and >= 0"));
            }
        }
        if self.switch_loss_db > MAX_SWITCH_LOSS_DB {
            v.push(format!(
                "switch_loss_db = {} exceeds {MAX_SWITCH_LOSS_DB} dB",
                self.switch_loss_db
            ));
        }
        v
    }
}

/// Overall channel transmittance including detector efficiency.
pub fn transmittance(budget: &LinkBudget) -> f64 {
    10f64.powf(-budget.total_loss_db() / 10.0) * budget.detector_efficiency
}

/// Expected gain and QBER per intensity for transmittance `eta`.
pub fn analytic_observables(
    eta: f64,
    params: &ProtocolParameters,
    misalignment: f64,
) -> IntensityObservables {
    let mut obs = IntensityObservables {
        gain: [0.0; 3],
        qber: [0.0; 3],
    };
    for i in Intensity::ALL {
        let det = 1.0 - (-eta * params.intensity(i)).exp();
        let q = params.y0 + det;
        obs.gain[i.index()] = q;
        obs.qber[i.index()] = if q > 0.0 {
            (params.e0 * params.y0 + misalignment * det) / q
        } else {
            0.0
        };
    }
    obs
}

/// Rounded expected tally for `n_sent` pulses over `budget`, using the
/// budget's dark rate as `Y0`.
pub fn expected_tally(
    budget: &LinkBudget,
    params: &ProtocolParameters,
    n_sent: u64,
) -> TransmissionTally {
    let p = ProtocolParameters {
        y0: budget.dark_rate,
        ..*params
    };
    let obs = analytic_observables(transmittance(budget), &p, budget.misalignment);
    TransmissionTally::from_observables(n_sent, &p, &obs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lossless_identity() {
        let b = LinkBudget {
            detector_inherent_loss_db: 0.0,
            detector_efficiency: 1.0,
            ..LinkBudget::default()
        };
        assert_eq!(transmittance(&b), 1.0);
    }

    #[test]
    fn reference_distances() {
        // 10^(-7.5/10) * 0.1 and 10^(-9.2/10) * 0.1
        let eta18 = transmittance(&LinkBudget::with_fiber(18.0));
        assert!((eta18 - 0.017_782_794_100_389_23).abs() < 1e-15, "{eta18}");
        let eta20 = transmittance(&LinkBudget {
            switch_loss_db: 1.2,
            ..LinkBudget::with_fiber(20.0)
        });
        assert!((eta20 - 0.012_022_644_346_174_13).abs() < 1e-15, "{eta20}");
    }

    #[test]
    fn dark_channel() {
        let p = ProtocolParameters {
            y0: 0.0,
            ..Default::default()
        };
        let obs = analytic_observables(0.0, &p, 0.005);
        assert_eq!(obs.gain, [0.0; 3]);
    }

    #[test]
    fn vacuum_sees_background_only() {
        let p = ProtocolParameters::default();
        let obs = analytic_observables(0.02, &p, 0.005);
        assert_eq!(obs.gain(Intensity::Vacuum), p.y0);
        assert_eq!(obs.qber(Intensity::Vacuum), p.e0);
    }

    #[test]
    fn eighteen_km_observables() {
        let p = ProtocolParameters::default();
        let obs = analytic_observables(0.0177, &p, 0.005);
        // mpmath, 30 digits.
        assert!((obs.gain(Intensity::Signal) - 0.010_564_806_899_498_39).abs() < 1e-15);
        assert!((obs.qber(Intensity::Signal) - 0.005_046_853_672_263_854).abs() < 1e-15);
    }

    #[test]
    fn budget_violations() {
        assert!(LinkBudget::default().violations().is_empty());
        let b = LinkBudget {
            switch_loss_db: 1.5,
            misalignment: 1.2,
            ..LinkBudget::default()
        };
        assert_eq!(b.violations().len(), 2);
    }

    #[test]
    fn dead_time_in_gates() {
        assert_eq!(LinkBudget::default().dead_time_gates(40e6), 80);
        assert_eq!(
            LinkBudget {
                dead_time_us: 0.0,
                ..LinkBudget::default()
            }
            .dead_time_gates(40e6),
            0
        );
    }
}
