use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{transmittance, LinkBudget};
use crate::keyrate::{Basis, Intensity, ProtocolParameters, TallyCell, TransmissionTally};

/// Gates after the dead time during which an afterpulse may fire.
pub const AFTERPULSE_WINDOW_GATES: u64 = 10;

/// Ground truth for pulses that actually carried exactly one photon,
/// restricted to sifted positions. Indexed by [`Basis::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SinglePhotonTruth {
    pub cells: [TallyCell; 2],
}

impl SinglePhotonTruth {
    pub fn yield_(&self, b: Basis) -> f64 {
        self.cells[b.index()].gain()
    }

    pub fn error_rate(&self, b: Basis) -> Option<f64> {
        self.cells[b.index()].qber()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PulseRun {
    pub tally: TransmissionTally,
    pub single_photon: SinglePhotonTruth,
    /// Registered clicks per detector, indexed `basis * 2 + bit`.
    pub detector_clicks: [u64; 4],
}

/// Pulse-by-pulse simulation of the link; see [`simulate_pulses_detailed`].
pub fn simulate_pulses(
    budget: &LinkBudget,
    params: &ProtocolParameters,
    n_pulses: u64,
    seed: u64,
) -> TransmissionTally {
    simulate_pulses_detailed(budget, params, n_pulses, seed).tally
}

/// Per pulse: intensity by the configured ratios, sender basis and bit
/// uniform, receiver basis uniform (passive), Poisson photon number, each
/// photon detected with probability `eta`, a dark count with probability
/// `dark_rate`, misalignment flips the decoded bit. A click routes to one of
/// four detectors (basis x bit); a detector that clicked is blind for its
/// dead time, then may afterpulse for [`AFTERPULSE_WINDOW_GATES`] gates.
/// Only sifted positions are tallied.
pub fn simulate_pulses_detailed(
    budget: &LinkBudget,
    params: &ProtocolParameters,
    n_pulses: u64,
    seed: u64,
) -> PulseRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eta = transmittance(budget);
    let dead = budget.dead_time_gates(params.rep_rate_hz);
    let ed = budget.misalignment;
    let pd = budget.dark_rate;
    let ap = budget.afterpulse_prob;

    let thresholds = [params.q_signal, params.q_signal + params.q_decoy];
    let photon_cdfs: Vec<Vec<f64>> = Intensity::ALL
        .iter()
        .map(|&i| poisson_cdf(params.intensity(i)))
        .collect();
    // P(at least one of k photons survives), k indexed.
    let max_k = photon_cdfs.iter().map(|c| c.len()).max().unwrap();
    let p_click: Vec<f64> = (0..max_k)
        .map(|k| 1.0 - (1.0 - eta).powi(k as i32))
        .collect();

    let mut tally = TransmissionTally::new(n_pulses);
    let mut truth = SinglePhotonTruth::default();
    let mut clicks = [0u64; 4];
    // First gate at which each detector is live again, and the end of its
    // afterpulse window.
    let mut live_at = [0u64; 4];
    let mut ap_until = [0u64; 4];

    for gate in 0..n_pulses {
        let u: f64 = rng.gen();
        let intensity = if u < thresholds[0] {
            Intensity::Signal
        } else if u < thresholds[1] {
            Intensity::Decoy
        } else {
            Intensity::Vacuum
        };
        let coins: u32 = rng.gen();
        let a_basis = coins & 1;
        let a_bit = (coins >> 1) & 1;
        let b_basis = (coins >> 2) & 1;
        let coin_bit = (coins >> 3) & 1;

        let cdf = &photon_cdfs[intensity.index()];
        let k = if cdf.len() == 1 {
            0
        } else {
            let v: f64 = rng.gen();
            cdf.partition_point(|&c| c < v).min(cdf.len() - 1)
        };

        // Outcome before detector availability: Some(bit) on a click.
        let mut outcome = None;
        if k > 0 && rng.gen::<f64>() < p_click[k] {
            outcome = Some(if a_basis == b_basis {
                a_bit ^ (rng.gen::<f64>() < ed) as u32
            } else {
                coin_bit
            });
        }
        if outcome.is_none() && pd > 0.0 && rng.gen::<f64>() < pd {
            outcome = Some(coin_bit);
        }

        let mut registered = None;
        if let Some(bit) = outcome {
            let d = (b_basis * 2 + bit) as usize;
            if gate >= live_at[d] {
                registered = Some(bit);
            }
        }
        if registered.is_none() && ap > 0.0 {
            // Afterpulse on a live detector of the measured basis.
            let d = (b_basis * 2 + coin_bit) as usize;
            if gate >= live_at[d] && gate < ap_until[d] && rng.gen::<f64>() < ap {
                registered = Some(coin_bit);
            }
        }
        if let Some(bit) = registered {
            let d = (b_basis * 2 + bit) as usize;
            clicks[d] += 1;
            live_at[d] = gate + 1 + dead;
            ap_until[d] = live_at[d] + AFTERPULSE_WINDOW_GATES;
        }

        if a_basis == b_basis {
            let basis = if a_basis == 0 { Basis::Z } else { Basis::X };
            let c = tally.cell_mut(basis, intensity);
            c.sent += 1;
            let t = &mut truth.cells[basis.index()];
            if k == 1 {
                t.sent += 1;
            }
            if let Some(bit) = registered {
                c.detections += 1;
                let err = bit != a_bit;
                c.errors += err as u64;
                if k == 1 {
                    t.detections += 1;
                    t.errors += err as u64;
                }
            }
        }
    }

    PulseRun {
        tally,
        single_photon: truth,
        detector_clicks: clicks,
    }
}

/// Cumulative Poisson distribution truncated once the tail is negligible.
fn poisson_cdf(mean: f64) -> Vec<f64> {
    if mean <= 0.0 {
        return vec![1.0];
    }
    let mut out = Vec::new();
    let mut p = (-mean).exp();
    let mut acc = 0.0;
    let mut k = 0u32;
    loop {
        acc += p;
        out.push(acc);
        k += 1;
        p *= mean / k as f64;
        if 1.0 - acc < 1e-16 || k > 200 {
            break;
        }
    }
    *out.last_mut().unwrap() = 1.0;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_seed() {
        let b = LinkBudget::with_fiber(10.0);
        let p = ProtocolParameters::default();
        assert_eq!(
            simulate_pulses_detailed(&b, &p, 50_000, 7),
            simulate_pulses_detailed(&b, &p, 50_000, 7)
        );
        assert_ne!(
            simulate_pulses(&b, &p, 50_000, 7),
            simulate_pulses(&b, &p, 50_000, 8)
        );
    }

    #[test]
    fn saturated_channel_clicks_every_pulse() {
        let b = LinkBudget {
            detector_inherent_loss_db: 0.0,
            detector_efficiency: 1.0,
            dark_rate: 0.0,
            dead_time_us: 0.0,
            afterpulse_prob: 0.0,
            misalignment: 0.0,
            ..LinkBudget::default()
        };
        let p = ProtocolParameters {
            mu: 40.0,
            nu: 20.0,
            q_signal: 1.0,
            q_decoy: 0.0,
            ..Default::default()
        };
        let t = simulate_pulses(&b, &p, 20_000, 1);
        let c = t.cell(Basis::Z, Intensity::Signal);
        assert_eq!(c.detections, c.sent);
        assert_eq!(c.errors, 0);
    }

    #[test]
    fn sifting_keeps_about_half() {
        let t = simulate_pulses(
            &LinkBudget::with_fiber(5.0),
            &ProtocolParameters::default(),
            200_000,
            3,
        );
        let frac = (t.sifted_pulses(Basis::Z) + t.sifted_pulses(Basis::X)) as f64 / 200_000.0;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn poisson_cdf_is_normalised() {
        let c = poisson_cdf(0.6);
        assert!((c[0] - (-0.6f64).exp()).abs() < 1e-15);
        assert_eq!(*c.last().unwrap(), 1.0);
        assert_eq!(poisson_cdf(0.0), vec![1.0]);
    }
}
