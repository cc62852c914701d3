use qkdnet::keyrate::{finite_key_analysis, Basis, Intensity, ProtocolParameters};
use qkdnet::photonics::{
    analytic_observables, simulate_pulses, simulate_pulses_detailed, transmittance, LinkBudget,
};

fn ideal_detector(km: f64) -> LinkBudget {
    LinkBudget {
        dead_time_us: 0.0,
        afterpulse_prob: 0.0,
        ..LinkBudget::with_fiber(km)
    }
}

fn within_3_sigma(observed: u64, trials: u64, p: f64) -> bool {
    let n = trials as f64;
    let sd = (p * (1.0 - p) / n).sqrt();
    (observed as f64 / n - p).abs() <= 3.0 * sd
}

#[test]
fn monte_carlo_converges_to_analytic_channel() {
    let budget = ideal_detector(18.0);
    let params = ProtocolParameters::default();
    let obs = analytic_observables(transmittance(&budget), &params, budget.misalignment);
    for (k, n) in [100_000u64, 1_000_000, 10_000_000].into_iter().enumerate() {
        let t = simulate_pulses(&budget, &params, n, 40 + k as u64);
        for i in Intensity::ALL {
            let mut sent = 0;
            let mut det = 0;
            let mut err = 0;
            for b in Basis::ALL {
                let c = t.cell(b, i);
                sent += c.sent;
                det += c.detections;
                err += c.errors;
            }
            assert!(
                within_3_sigma(det, sent, obs.gain(i)),
                "n={n} {i:?}: gain {} vs {}",
                det as f64 / sent as f64,
                obs.gain(i)
            );
            if det > 0 {
                assert!(
                    within_3_sigma(err, det, obs.qber(i)),
                    "n={n} {i:?}: qber {} vs {}",
                    err as f64 / det as f64,
                    obs.qber(i)
                );
            }
        }
    }
}

#[test]
fn dead_time_caps_each_detector() {
    let budget = LinkBudget {
        detector_inherent_loss_db: 0.0,
        detector_efficiency: 1.0,
        ..LinkBudget::with_fiber(0.0)
    };
    let params = ProtocolParameters::default();
    let n = 2_000_000;
    let run = simulate_pulses_detailed(&budget, &params, n, 5);
    let dead = budget.dead_time_gates(params.rep_rate_hz);
    let cap = n / (dead + 1) + 1;
    for c in run.detector_clicks {
        assert!(c <= cap, "{c} clicks > {cap}");
    }
    // The veto is actually binding at this intensity.
    assert!(run.detector_clicks.iter().sum::<u64>() > cap);
}

#[test]
fn afterpulses_raise_error_rate() {
    let params = ProtocolParameters::default();
    let base = LinkBudget {
        afterpulse_prob: 0.0,
        ..LinkBudget::with_fiber(2.0)
    };
    let noisy = LinkBudget {
        afterpulse_prob: 0.2,
        ..base
    };
    let q = |b: &LinkBudget| {
        let t = simulate_pulses(b, &params, 2_000_000, 9);
        t.sifted_errors(Basis::Z) as f64 / t.sifted_detections(Basis::Z) as f64
    };
    assert!(q(&noisy) > q(&base) + 0.005);
}

#[test]
fn decoy_bounds_hold_on_small_runs() {
    // A quick version of the soundness acceptance check.
    let params = ProtocolParameters {
        delta_sigmas: 3.0,
        ..Default::default()
    };
    let mut checked = 0;
    for seed in 0..40u64 {
        let budget = LinkBudget::with_fiber(2.0 + (seed % 8) as f64);
        let run = simulate_pulses_detailed(&budget, &params, 1_000_000, 1000 + seed);
        let rep = finite_key_analysis(&params, &run.tally).unwrap();
        let Some(est) = rep.estimates[Basis::Z.index()] else {
            continue;
        };
        checked += 1;
        assert!(
            est.y1_lower <= run.single_photon.yield_(Basis::Z),
            "seed {seed}"
        );
        assert!(
            est.e1_phase >= run.single_photon.error_rate(Basis::X).unwrap(),
            "seed {seed}"
        );
    }
    assert!(checked >= 30, "{checked}");
}
