//! Finite-key length along a fiber, from the analytic channel.
//!
//! cargo run --release --example key_rate

use qkdnet::keyrate::{finite_key_length, ProtocolParameters, TransmissionTally};
use qkdnet::photonics::{analytic_observables, transmittance, LinkBudget};

fn main() {
    let params = ProtocolParameters::default();
    // One second of pulses.
    let n_sent = params.rep_rate_hz as u64;
    println!("fiber_km,gain_signal,qber_signal,key_bits,rate_kbps");
    for km in [0.0, 5.0, 10.0, 20.0, 40.0, 60.0, 80.0] {
        let budget = LinkBudget::with_fiber(km);
        let obs = analytic_observables(transmittance(&budget), &params, budget.misalignment);
        let tally = TransmissionTally::from_observables(n_sent, &params, &obs);
        let r = finite_key_length(&params, &tally).expect("valid parameters");
        println!(
            "{km},{:.3e},{:.4},{:.0},{:.2}",
            obs.gain[0],
            obs.qber[0],
            r.k_tot,
            r.rate_bps / 1000.0
        );
    }
}
