//! A day of polarization drift on one link: when it crosses the threshold,
//! and how long each recalibration takes.

use qkdnet::photonics::{run_calibration, CalibrationState, DriftProcess, DriftState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let process = DriftProcess::default();
    let mut drift = DriftState::new(process);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let baseline = 0.0055;
    let times = drift.calibration_times(baseline, 0.0, 86_400.0, 60.0);
    println!("{} recalibrations in 24 h", times.len());
    for t in times.iter().take(12) {
        let cal = run_calibration(CalibrationState::new(), &process, 10.0, &mut rng);
        println!(
            "{:02}:{:02}  calibration {:.0} s{}",
            (*t / 3600.0) as u32,
            (*t % 3600.0 / 60.0) as u32,
            cal.elapsed_s,
            if cal.succeeded() { "" } else { " (aborted)" }
        );
    }
}
