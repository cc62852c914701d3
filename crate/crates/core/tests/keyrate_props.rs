use proptest::prelude::*;
use qkdnet::keyrate::{
    finite_key_analysis, finite_key_length, phase_error_deviation, Basis, Intensity,
    IntensityObservables, ProtocolParameters, TallyCell, TransmissionTally,
};

fn channel_obs(p: &ProtocolParameters, eta: f64, ed: f64) -> IntensityObservables {
    let mut obs = IntensityObservables {
        gain: [0.0; 3],
        qber: [0.0; 3],
    };
    for i in Intensity::ALL {
        let det = 1.0 - (-eta * p.intensity(i)).exp();
        let q = p.y0 + det;
        obs.gain[i.index()] = q;
        obs.qber[i.index()] = (p.e0 * p.y0 + ed * det) / q;
    }
    obs
}

fn scaled(t: &TransmissionTally, k: u64) -> TransmissionTally {
    let mut out = TransmissionTally::new(t.n_sent * k);
    for b in Basis::ALL {
        for i in Intensity::ALL {
            let c = t.cell(b, i);
            *out.cell_mut(b, i) = TallyCell::new(c.sent * k, c.detections * k, c.errors * k);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rate_not_increasing_in_signal_qber(
        eta in 0.003f64..0.05,
        ed in 0.001f64..0.03,
        n in 1e8f64..1e10,
        extra in 1u64..20_000,
    ) {
        let p = ProtocolParameters::default();
        let t = TransmissionTally::from_observables(n as u64, &p, &channel_obs(&p, eta, ed));
        let mut worse = t.clone();
        for b in Basis::ALL {
            let c = worse.cell_mut(b, Intensity::Signal);
            c.errors = (c.errors + extra).min(c.detections);
        }
        let a = finite_key_length(&p, &t).unwrap();
        let w = finite_key_length(&p, &worse).unwrap();
        prop_assert!(w.rate_bps <= a.rate_bps);
    }

    #[test]
    fn rate_not_decreasing_in_window(
        eta in 0.003f64..0.05,
        ed in 0.001f64..0.03,
        n in 1e6f64..1e9,
        k in 2u64..50,
    ) {
        let p = ProtocolParameters::default();
        let t = TransmissionTally::from_observables(n as u64, &p, &channel_obs(&p, eta, ed));
        let a = finite_key_length(&p, &t).unwrap();
        let b = finite_key_length(&p, &scaled(&t, k)).unwrap();
        prop_assert!(b.rate_bps >= a.rate_bps, "{} < {}", b.rate_bps, a.rate_bps);
    }

    #[test]
    fn theta_strictly_decreasing_in_samples(
        e in 0.005f64..0.2,
        n in 1e3f64..1e9,
        ratio in 0.2f64..5.0,
        eps_exp in -14f64..-3.0,
    ) {
        let eps = 10f64.powf(eps_exp);
        let small = phase_error_deviation(e, n * ratio, n, eps);
        let big = phase_error_deviation(e, 10.0 * n * ratio, 10.0 * n, eps).unwrap();
        if let Ok(t) = small {
            prop_assert!(big < t);
        }
    }

    #[test]
    fn lengths_clamped_and_aborts_explained(
        eta in 1e-4f64..0.1,
        ed in 0.0f64..0.2,
        n in 1e3f64..1e10,
        delta in 0.0f64..12.0,
    ) {
        let p = ProtocolParameters { delta_sigmas: delta, ..Default::default() };
        let t = TransmissionTally::from_observables(n as u64, &p, &channel_obs(&p, eta, ed));
        let rep = finite_key_analysis(&p, &t).unwrap();
        let r = rep.result;
        prop_assert!(r.k_z >= 0.0 && r.k_x >= 0.0);
        prop_assert_eq!(r.k_tot, r.k_z + r.k_x);
        if r.abort.is_some() {
            prop_assert_eq!(r.k_tot, 0.0);
            prop_assert!(!r.abort.unwrap().code().is_empty());
        }
        for est in rep.estimates.iter().flatten() {
            prop_assert!(est.e1_upper <= est.e1_phase && est.e1_phase <= 0.5);
            prop_assert!(est.y1_lower > 0.0 && est.y1_lower <= 1.0);
        }
        for bb in rep.bases.iter().flatten() {
            prop_assert!(bb.m1_signal_lower <= bb.signal_detections);
        }
    }
}
