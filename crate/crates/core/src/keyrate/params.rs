use serde::{Deserialize, Serialize};

use super::KeyRateError;

/// Key consumed by classical post-processing, itemised per step.
///
/// The split is a reporting convention; only [`PostprocessingCost::total`]
/// enters the key-length formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessingCost {
    pub authentication_bits: f64,
    pub error_verification_bits: f64,
    pub privacy_amplification_bits: f64,
}

impl Default for PostprocessingCost {
    fn default() -> Self {
        Self {
            authentication_bits: 64.0,
            error_verification_bits: 32.0,
            privacy_amplification_bits: 104.0,
        }
    }
}

impl PostprocessingCost {
    pub fn total(&self) -> f64 {
        self.authentication_bits + self.error_verification_bits + self.privacy_amplification_bits
    }

    pub fn flat(bits: f64) -> Self {
        Self {
            authentication_bits: 0.0,
            error_verification_bits: 0.0,
            privacy_amplification_bits: bits,
        }
    }
}

/// Source and protocol constants for vacuum + weak-decoy BB84.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParameters {
    /// Signal mean photon number.
    pub mu: f64,
    /// Weak-decoy mean photon number.
    pub nu: f64,
    /// Probability of sending a signal state.
    pub q_signal: f64,
    /// Probability of sending a weak decoy; the remainder is vacuum.
    pub q_decoy: f64,
    /// Error-correction inefficiency `f >= 1`.
    pub ec_efficiency: f64,
    /// Error rate of background counts.
    pub e0: f64,
    /// Background yield per pulse (the detector dark-count probability).
    pub y0: f64,
    /// Source repetition rate, Hz.
    pub rep_rate_hz: f64,
    /// Width of the Gaussian fluctuation band, in standard deviations.
    pub delta_sigmas: f64,
    /// Failure probability allotted to phase-error estimation.
    pub eps_step: f64,
    /// Event count assumed when sizing the fluctuation of a rate that was
    /// observed zero times. Without it a cell with no errors gets an upper
    /// bound of exactly zero. 0 gives the plain Gaussian bound.
    pub zero_count_floor: f64,
    pub postprocessing_cost: PostprocessingCost,
}

impl Default for ProtocolParameters {
    fn default() -> Self {
        Self {
            mu: 0.6,
            nu: 0.2,
            q_signal: 0.75,
            q_decoy: 0.125,
            ec_efficiency: 1.5,
            e0: 0.5,
            y0: 1e-6,
            rep_rate_hz: 40e6,
            delta_sigmas: 10.0,
            eps_step: 1e-10,
            zero_count_floor: 1.0,
            postprocessing_cost: PostprocessingCost::default(),
        }
    }
}

impl ProtocolParameters {
    pub fn q_vacuum(&self) -> f64 {
        1.0 - self.q_signal - self.q_decoy
    }

    /// Mean photon number of the given intensity class.
    pub fn intensity(&self, i: super::Intensity) -> f64 {
        match i {
            super::Intensity::Signal => self.mu,
            super::Intensity::Decoy => self.nu,
            super::Intensity::Vacuum => 0.0,
        }
    }

    pub fn probability(&self, i: super::Intensity) -> f64 {
        match i {
            super::Intensity::Signal => self.q_signal,
            super::Intensity::Decoy => self.q_decoy,
            super::Intensity::Vacuum => self.q_vacuum(),
        }
    }

    pub fn validate(&self) -> Result<(), KeyRateError> {
        let bad = |what: &str| Err(KeyRateError::InvalidParameters(what.to_string()));
        if !(self.nu > 0.0 && self.nu < self.mu) || !self.mu.is_finite() {
            return bad("require 0 < nu < mu");
        }
        if self.q_signal < 0.0 || self.q_decoy < 0.0 || self.q_signal + self.q_decoy > 1.0 + 1e-12 {
            return bad("require q_signal, q_decoy >= 0 and q_signal + q_decoy <= 1");
        }
        if !(self.eps_step > 0.0 && self.eps_step < 1.0) {
            return bad("require 0 < eps_step < 1");
        }
        if !(self.ec_efficiency >= 1.0) {
            return bad("require ec_efficiency >= 1");
        }
        if !(self.y0 >= 0.0 && self.y0 <= 1.0) {
            return bad("require 0 <= y0 <= 1");
        }
        if (self.e0 - 0.5).abs() > 1e-12 {
            return bad("background error rate e0 must be 0.5");
        }
        if !(self.rep_rate_hz > 0.0) {
            return bad("require rep_rate_hz > 0");
        }
        if !(self.delta_sigmas >= 0.0) {
            return bad("require delta_sigmas >= 0");
        }
        if !(self.zero_count_floor >= 0.0) {
            return bad("require zero_count_floor >= 0");
        }
        if self.postprocessing_cost.total() < 0.0 {
            return bad("post-processing cost must be non-negative");
        }
        Ok(())
    }
}
