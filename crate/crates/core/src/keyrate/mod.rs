//! Decoy-state BB84 key-rate engine.
//!
//! Everything here is a pure function of its inputs. The asymptotic rate uses
//! the vacuum + weak-decoy bounds on the single-photon yield and error rate;
//! the finite-size length additionally widens every observed rate by a
//! Gaussian band of `delta_sigmas` standard deviations and bounds the
//! phase error of the key basis by the single-photon bit error of the other
//! basis plus a random-sampling deviation `theta`.
//!
//! Both bases generate key. For key basis `b` the "test" basis is the other
//! one: its single-photon bit error bounds `b`'s phase error.

mod finite;
mod params;
mod tally;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use finite::{
    finite_key_analysis, finite_key_length, BasisBounds, DecoyEstimate, FiniteKeyReport,
    KeyLengthResult,
};
pub use params::{PostprocessingCost, ProtocolParameters};
pub use tally::{IntensityObservables, TallyCell, TransmissionTally, SIFTED_FRACTION_PER_BASIS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Z, Basis::X];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> Basis {
        match self {
            Basis::Z => Basis::X,
            Basis::X => Basis::Z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Intensity {
    Signal,
    Decoy,
    Vacuum,
}

impl Intensity {
    pub const ALL: [Intensity; 3] = [Intensity::Signal, Intensity::Decoy, Intensity::Vacuum];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KeyRateError {
    #[error("probability {0} outside [0, 1]")]
    Domain(f64),
    #[error("invalid protocol parameters: {0}")]
    InvalidParameters(String),
    #[error("invalid tally: {0}")]
    InvalidTally(String),
    #[error("signal and decoy intensities are degenerate (mu*nu - nu^2 must be > 0)")]
    DegenerateIntensities,
    #[error("single-photon yield lower bound {y1_lower:e} is not positive")]
    NonPositiveYield { y1_lower: f64 },
    #[error("no sampling deviation in (0, {upper}) meets the failure budget")]
    NoFeasibleTheta { upper: f64 },
}

/// Why a finite-key evaluation produced no key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum AbortReason {
    NoDetections { basis: Basis },
    NonPositiveYield { basis: Basis, y1_lower: f64 },
    NoFeasibleTheta { basis: Basis },
}

impl AbortReason {
    pub fn code(&self) -> &'static str {
        match self {
            AbortReason::NoDetections { .. } => "no_detections",
            AbortReason::NonPositiveYield { .. } => "non_positive_yield",
            AbortReason::NoFeasibleTheta { .. } => "no_feasible_theta",
        }
    }
}

/// Non-fatal adjustments made while evaluating a finite-key length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    /// `E_nu Q_nu e^nu - e0 Y0` came out negative and was clamped to 0.
    ClampedErrorNumerator { basis: Basis, raw: f64 },
    /// A Gaussian lower bound went negative and was clamped to 0.
    ClampedLowerBound { basis: Basis },
    /// Single-photon bit error bound is exactly zero; the sampling
    /// deviation is taken as zero.
    ZeroErrorBound { basis: Basis },
    /// A bound exceeded 1/2 and was capped there.
    CappedErrorRate { basis: Basis, raw: f64 },
    /// The raw key length was negative; reported as zero.
    NegativeLength { basis: Basis, raw: f64 },
}

/// Binary Shannon entropy in bits.
pub fn binary_entropy(p: f64) -> Result<f64, KeyRateError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(KeyRateError::Domain(p));
    }
    Ok(h2(p))
}

/// Unchecked binary entropy; callers guarantee `p` in `[0, 1]`.
pub(crate) fn h2(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// Lower bound on the single-photon yield and upper bound on its bit error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyBounds {
    pub y1_lower: f64,
    pub e1_upper: f64,
    /// Set when the error numerator was negative and clamped to zero.
    pub clamped_error_numerator: bool,
}

/// Vacuum + weak-decoy bounds from observed gains and the decoy QBER.
pub fn decoy_bounds(
    params: &ProtocolParameters,
    q_mu: f64,
    q_nu: f64,
    e_nu: f64,
) -> Result<DecoyBounds, KeyRateError> {
    for p in [q_mu, q_nu, e_nu] {
        if !(0.0..=1.0).contains(&p) {
            return Err(KeyRateError::Domain(p));
        }
    }
    decoy_bounds_from_error_gain(params, q_mu, q_nu, e_nu * q_nu)
}

/// As [`decoy_bounds`], but taking the decoy error gain `E_nu * Q_nu`
/// directly so that it can carry its own fluctuation bound.
pub(crate) fn decoy_bounds_from_error_gain(
    params: &ProtocolParameters,
    q_mu: f64,
    q_nu: f64,
    eq_nu: f64,
) -> Result<DecoyBounds, KeyRateError> {
    let (mu, nu, y0) = (params.mu, params.nu, params.y0);
    let denom = mu * nu - nu * nu;
    if !(denom > 0.0) || !(nu > 0.0) {
        return Err(KeyRateError::DegenerateIntensities);
    }
    let mu2 = mu * mu;
    let y1_lower = mu / denom
        * (q_nu * nu.exp() - q_mu * mu.exp() * nu * nu / mu2 - (mu2 - nu * nu) / mu2 * y0);
    if !(y1_lower > 0.0) {
        return Err(KeyRateError::NonPositiveYield { y1_lower });
    }
    let num = eq_nu * nu.exp() - params.e0 * y0;
    let clamped = num < 0.0;
    let e1_upper = num.max(0.0) / (y1_lower * nu);
    Ok(DecoyBounds {
        y1_lower,
        e1_upper,
        clamped_error_numerator: clamped,
    })
}

/// Asymptotic secret bits per signal pulse. May be negative.
///
/// `e1_upper` above 1/2 is treated as 1/2 (no privacy left in single photons).
pub fn asymptotic_rate(
    params: &ProtocolParameters,
    q_mu: f64,
    e_mu: f64,
    est: &DecoyBounds,
) -> Result<f64, KeyRateError> {
    let h_e = binary_entropy(e_mu)?;
    let e1 = est.e1_upper.clamp(0.0, 0.5);
    let mu = params.mu;
    Ok(-params.ec_efficiency * q_mu * h_e + est.y1_lower * mu * (-mu).exp() * (1.0 - h2(e1)))
}

/// `chi -/+ delta * sqrt(chi / n)`; the lower bound is clamped at zero.
pub fn gaussian_bounds(chi: f64, n: f64, delta_sigmas: f64) -> (f64, f64) {
    if chi <= 0.0 || n <= 0.0 {
        return (chi.max(0.0), chi.max(0.0));
    }
    let w = delta_sigmas * (chi / n).sqrt();
    ((chi - w).max(0.0), chi + w)
}

/// `log2` of the random-sampling bound on `Prob{phase error >= e_bx + theta}`.
///
/// `n_test` plays the role of the test-basis sample, `n_key` the key-basis
/// sample.
pub fn phase_error_failure_log2(e_bx: f64, n_test: f64, n_key: f64, theta: f64) -> f64 {
    let n = n_test + n_key;
    let q = n_test / n;
    let xi = h2(e_bx + theta - q * theta) - q * h2(e_bx) - (1.0 - q) * h2(e_bx + theta);
    0.5 * n.log2() - 0.5 * (e_bx * (1.0 - e_bx)).log2() - n * xi
}

/// Bisection tolerance on `theta`.
pub const THETA_TOLERANCE: f64 = 1e-12;

/// Smallest `theta` in `(0, 1 - e_bx)` whose sampling bound is at most
/// `eps_target`, to within [`THETA_TOLERANCE`].
///
/// The exponent `xi(theta)` is strictly increasing on the whole interval
/// (binary entropy is concave), so the bound is monotone and bisection is
/// exact up to tolerance. The returned value is always on the feasible side.
pub fn phase_error_deviation(
    e_bx: f64,
    n_test: f64,
    n_key: f64,
    eps_target: f64,
) -> Result<f64, KeyRateError> {
    if eps_target >= 1.0 {
        return Ok(0.0);
    }
    if !(e_bx > 0.0 && e_bx < 1.0) {
        return Err(KeyRateError::Domain(e_bx));
    }
    if !(eps_target > 0.0) {
        return Err(KeyRateError::Domain(eps_target));
    }
    if !(n_test > 0.0 && n_key > 0.0) {
        return Err(KeyRateError::NoFeasibleTheta { upper: 1.0 - e_bx });
    }
    let target = eps_target.log2();
    let f = |t: f64| phase_error_failure_log2(e_bx, n_test, n_key, t);
    let upper = 1.0 - e_bx;
    let mut hi = upper * (1.0 - 1e-15);
    if f(hi) > target {
        return Err(KeyRateError::NoFeasibleTheta { upper });
    }
    let mut lo = 0.0;
    while hi - lo > THETA_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
