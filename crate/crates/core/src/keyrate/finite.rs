use serde::{Deserialize, Serialize};

use super::{
    decoy_bounds_from_error_gain, gaussian_bounds, h2, phase_error_deviation,
    phase_error_failure_log2, AbortReason, Basis, Diagnostic, Intensity, KeyRateError,
    ProtocolParameters, TransmissionTally,
};

/// Fluctuation-widened observables and decoy bounds for one basis.
///
/// Gains and error gains are widened with the cell's own sent count as the
/// sample size. The single-photon detection counts are widened as fractions
/// of the basis' sifted pulses, i.e. `M - delta * sqrt(M)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisBounds {
    pub basis: Basis,
    /// All sifted pulses in this basis (`n_z` or `n_x`).
    pub n_sifted: f64,
    /// Sifted detections of signal states (`M^{sz}` for Z).
    pub signal_detections: f64,
    pub q_mu_upper: f64,
    pub q_mu_lower: f64,
    pub q_nu_lower: f64,
    pub eq_mu_upper: f64,
    pub eq_nu_upper: f64,
    /// Signal QBER taken in its worst direction, `EQ_mu^U / Q_mu^L`, at most 1/2.
    pub e_mu_upper: f64,
    pub y1_lower: f64,
    /// Single-photon bit error bound, at most 1/2.
    pub e1_upper: f64,
    /// Single-photon detections among signal states, lower bound.
    pub m1_signal_lower: f64,
    /// Single-photon detections among signal and decoy states, lower bound.
    pub m1_all_lower: f64,
}

/// Decoy-state estimate for one key basis; the test basis is the other one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyEstimate {
    pub key_basis: Basis,
    /// Single-photon yield bound in the key basis.
    pub y1_lower: f64,
    /// Single-photon bit error bound in the test basis.
    pub e1_upper: f64,
    /// `M1^{sL}` of the key basis (plays `n_z` in the sampling bound).
    pub m1_signal_lower: f64,
    /// `M1^{L}` of the test basis (plays `n_x` in the sampling bound).
    pub m1_test_lower: f64,
    pub theta: f64,
    /// Phase error bound `e1_upper + theta`, at most 1/2.
    pub e1_phase: f64,
    /// Sampling bound evaluated at `theta`.
    pub eps_ph: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KeyLengthResult {
    pub k_z: f64,
    pub k_x: f64,
    pub k_tot: f64,
    pub rate_bps: f64,
    pub per_pulse_rate: f64,
    pub abort: Option<AbortReason>,
}

impl KeyLengthResult {
    fn aborted(reason: AbortReason) -> Self {
        Self {
            abort: Some(reason),
            ..Self::default()
        }
    }

    pub fn is_aborted(&self) -> bool {
        self.abort.is_some()
    }
}

/// Full trace of a finite-key evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteKeyReport {
    pub result: KeyLengthResult,
    /// Indexed by [`Basis::index`]; `None` when evaluation stopped earlier.
    pub bases: [Option<BasisBounds>; 2],
    pub estimates: [Option<DecoyEstimate>; 2],
    pub diagnostics: Vec<Diagnostic>,
}

/// Finite-size secret key length for one accumulation window.
///
/// Malformed parameters or tallies are errors. A window that cannot support
/// a key (no detections, non-positive yield bound, no admissible `theta`)
/// returns a zeroed result carrying the abort reason.
pub fn finite_key_length(
    params: &ProtocolParameters,
    tally: &TransmissionTally,
) -> Result<KeyLengthResult, KeyRateError> {
    finite_key_analysis(params, tally).map(|r| r.result)
}

pub fn finite_key_analysis(
    params: &ProtocolParameters,
    tally: &TransmissionTally,
) -> Result<FiniteKeyReport, KeyRateError> {
    params.validate()?;
    tally.validate()?;
    let mut report = FiniteKeyReport {
        result: KeyLengthResult::default(),
        bases: [None, None],
        estimates: [None, None],
        diagnostics: Vec::new(),
    };

    for b in Basis::ALL {
        if tally.sifted_detections(b) == 0 {
            report.result = KeyLengthResult::aborted(AbortReason::NoDetections { basis: b });
            return Ok(report);
        }
    }
    for b in Basis::ALL {
        match basis_bounds(params, tally, b, &mut report.diagnostics) {
            Ok(bb) => report.bases[b.index()] = Some(bb),
            Err(reason) => {
                report.result = KeyLengthResult::aborted(reason);
                return Ok(report);
            }
        }
    }

    let delta_cost = params.postprocessing_cost.total();
    let mut k = [0.0f64; 2];
    for key in Basis::ALL {
        let kb = report.bases[key.index()].unwrap();
        let tb = report.bases[key.other().index()].unwrap();
        let e1 = tb.e1_upper;
        let (theta, eps_ph) = if e1 <= 0.0 {
            report
                .diagnostics
                .push(Diagnostic::ZeroErrorBound { basis: key.other() });
            (0.0, 0.0)
        } else if e1 >= 0.5 {
            // Nothing left to bound: the phase error is already at its maximum.
            (0.0, 1.0)
        } else {
            match phase_error_deviation(e1, tb.m1_all_lower, kb.m1_signal_lower, params.eps_step) {
                Ok(t) => (
                    t,
                    phase_error_failure_log2(e1, tb.m1_all_lower, kb.m1_signal_lower, t).exp2(),
                ),
                Err(_) => {
                    report.result =
                        KeyLengthResult::aborted(AbortReason::NoFeasibleTheta { basis: key });
                    return Ok(report);
                }
            }
        };
        let raw_phase = e1 + theta;
        if raw_phase > 0.5 {
            report.diagnostics.push(Diagnostic::CappedErrorRate {
                basis: key,
                raw: raw_phase,
            });
        }
        let e1_phase = raw_phase.min(0.5);
        report.estimates[key.index()] = Some(DecoyEstimate {
            key_basis: key,
            y1_lower: kb.y1_lower,
            e1_upper: e1,
            m1_signal_lower: kb.m1_signal_lower,
            m1_test_lower: tb.m1_all_lower,
            theta,
            e1_phase,
            eps_ph,
        });
        let raw = kb.m1_signal_lower * (1.0 - h2(e1_phase))
            - kb.signal_detections * params.ec_efficiency * h2(kb.e_mu_upper)
            - delta_cost;
        if raw < 0.0 {
            report
                .diagnostics
                .push(Diagnostic::NegativeLength { basis: key, raw });
        }
        k[key.index()] = raw.max(0.0);
    }

    let k_z = k[Basis::Z.index()];
    let k_x = k[Basis::X.index()];
    let k_tot = k_z + k_x;
    let per_pulse_rate = if tally.n_sent == 0 {
        0.0
    } else {
        k_tot / tally.n_sent as f64
    };
    report.result = KeyLengthResult {
        k_z,
        k_x,
        k_tot,
        rate_bps: params.rep_rate_hz * per_pulse_rate,
        per_pulse_rate,
        abort: None,
    };
    Ok(report)
}

/// Upper Gaussian bound on `count / n`, sizing the width as if at least
/// `floor` events had been seen.
fn floored_upper(count: u64, n: f64, delta: f64, floor: f64) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    let chi = count as f64 / n;
    let sized = chi.max(floor / n);
    if sized <= 0.0 {
        return 0.0;
    }
    chi + delta * (sized / n).sqrt()
}

fn basis_bounds(
    params: &ProtocolParameters,
    tally: &TransmissionTally,
    b: Basis,
    diags: &mut Vec<Diagnostic>,
) -> Result<BasisBounds, AbortReason> {
    let delta = params.delta_sigmas;
    let sig = tally.cell(b, Intensity::Signal);
    let dec = tally.cell(b, Intensity::Decoy);
    let n_sig = sig.sent as f64;
    let n_dec = dec.sent as f64;

    let floor = params.zero_count_floor;
    let (q_mu_lower, _) = gaussian_bounds(sig.gain(), n_sig, delta);
    let q_mu_upper = floored_upper(sig.detections, n_sig, delta, floor);
    let (q_nu_lower, _) = gaussian_bounds(dec.gain(), n_dec, delta);
    let eq_mu_upper = floored_upper(sig.errors, n_sig, delta, floor);
    let eq_nu_upper = floored_upper(dec.errors, n_dec, delta, floor);
    if q_nu_lower == 0.0 && dec.gain() > 0.0 {
        diags.push(Diagnostic::ClampedLowerBound { basis: b });
    }

    let db = match decoy_bounds_from_error_gain(params, q_mu_upper, q_nu_lower, eq_nu_upper) {
        Ok(db) => db,
        Err(KeyRateError::NonPositiveYield { y1_lower }) => {
            return Err(AbortReason::NonPositiveYield { basis: b, y1_lower })
        }
        Err(_) => unreachable!("intensities validated"),
    };
    if db.clamped_error_numerator {
        diags.push(Diagnostic::ClampedErrorNumerator {
            basis: b,
            raw: eq_nu_upper * params.nu.exp() - params.e0 * params.y0,
        });
    }
    let e1_upper = if db.e1_upper > 0.5 {
        diags.push(Diagnostic::CappedErrorRate {
            basis: b,
            raw: db.e1_upper,
        });
        0.5
    } else {
        db.e1_upper
    };
    let e_mu_upper = if q_mu_lower > 0.0 {
        (eq_mu_upper / q_mu_lower).min(0.5)
    } else {
        0.5
    };

    let n_sifted = tally.sifted_pulses(b) as f64;
    let (mu, nu) = (params.mu, params.nu);
    let p1_sig = params.q_signal * mu * (-mu).exp();
    let p1_dec = params.q_decoy * nu * (-nu).exp();
    let m1_signal = n_sifted * db.y1_lower * p1_sig;
    let m1_all = n_sifted * db.y1_lower * (p1_sig + p1_dec);
    let lower = |m: f64| {
        let (lo, _) = gaussian_bounds(m / n_sifted, n_sifted, delta);
        lo * n_sifted
    };

    Ok(BasisBounds {
        basis: b,
        n_sifted,
        signal_detections: sig.detections as f64,
        q_mu_upper,
        q_mu_lower,
        q_nu_lower,
        eq_mu_upper,
        eq_nu_upper,
        e_mu_upper,
        y1_lower: db.y1_lower,
        e1_upper,
        m1_signal_lower: lower(m1_signal),
        m1_all_lower: lower(m1_all),
    })
}
