//! A full simulated day on the reference network, noon to noon: per-link rates and the
//! daytime and overnight calibration rhythm.
//!
//! cargo run --release --example simulate_day -- [out_dir]

use qkdnet::sim::{fmt_sig6, run, Setup};

fn main() -> std::io::Result<()> {
    let mut setup = Setup::reference();
    let sc = &mut setup.scenario;
    sc.duration_s = 86_400;
    sc.start_time_of_day_s = 12 * 3600;
    sc.log_blocks = false;
    sc.report_interval_s = 300;
    sc.ledger_resolution_s = 3600;

    let out = run(&setup);
    for r in out.key_rate_table() {
        println!(
            "{:>6} > {:<6} {} kbps",
            r.transmitter,
            r.receiver,
            fmt_sig6(r.kbps)
        );
    }
    for (sub, (lo, hi)) in out.subnetwork_rate_ranges() {
        println!("{sub}: {lo:.1} - {hi:.1} kbps");
    }
    let st = out.calibration_interval_stats(&setup.scenario.drift);
    println!(
        "daytime recalibration every {:.0} min, overnight stretch {:.1} h",
        st.daytime_mean_s / 60.0,
        st.overnight_mean_s / 3600.0
    );
    if let Some(dir) = std::env::args().nth(1) {
        out.write_all(dir.as_ref(), 3600)?;
    }
    Ok(())
}
