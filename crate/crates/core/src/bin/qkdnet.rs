use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use qkdnet::bits::BitString;
use qkdnet::keyrate::{
    finite_key_analysis, IntensityObservables, ProtocolParameters, TransmissionTally,
};
use qkdnet::photonics::{analytic_observables, transmittance, LinkBudget};
use qkdnet::postproc::{
    flip_with_rate, process_block, BlockOutcome, WinnowConfig, ACCUMULATION_BITS,
};
use qkdnet::sim::{fmt_sig6, run, Setup};
use qkdnet::topology::{validate, NetworkGraph};

#[derive(Parser)]
#[command(name = "qkdnet", version, about = "Metropolitan QKD network simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Simulated seconds; overrides the scenario.
    #[arg(long, global = true)]
    duration: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Seconds between rate samples; overrides the scenario.
    #[arg(long, global = true)]
    report_interval: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file ("reference" for the built-in one) and write CSV reports.
    Simulate {
        scenario: String,
        /// Bucket width of robustness.csv, seconds.
        #[arg(long, default_value_t = 3600)]
        bucket: u64,
    },
    /// Finite-key length for a parameter file.
    Keyrate { params: PathBuf },
    /// Check a topology file.
    Validate { topology: PathBuf },
    /// Time the post-processing chain on 256-kbit blocks.
    PostprocBench {
        #[arg(long, default_value_t = 10)]
        blocks: usize,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyrateFile {
    n_sent: u64,
    #[serde(default)]
    protocol: ProtocolParameters,
    observables: Option<Observed>,
    link: Option<LinkBudget>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Observed {
    /// Signal, decoy, vacuum.
    gain: [f64; 3],
    qber: [f64; 3],
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Simulate { scenario, bucket } => simulate(&cli, scenario, *bucket),
        Cmd::Keyrate { params } => keyrate(params),
        Cmd::Validate { topology } => check_topology(topology),
        Cmd::PostprocBench { blocks } => bench(*blocks, cli.seed.unwrap_or(1)),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type Res = Result<(), Box<dyn std::error::Error>>;

fn simulate(cli: &Cli, scenario: &str, bucket: u64) -> Res {
    let mut setup = if scenario == "reference" {
        Setup::reference()
    } else {
        Setup::load(scenario)?
    };
    let sc = &mut setup.scenario;
    if let Some(s) = cli.seed {
        sc.seed = s;
    }
    if let Some(d) = cli.duration {
        sc.duration_s = d;
    }
    if let Some(r) = cli.report_interval {
        sc.report_interval_s = r;
    }
    let setup = Setup::new(setup.scenario, setup.graph, setup.sessions)?;
    let t = Instant::now();
    let out = run(&setup);
    out.write_all(&cli.out_dir, bucket)?;
    eprintln!(
        "simulated {} s in {:.2?}: {} events, {} links ran, reports in {}",
        setup.scenario.duration_s,
        t.elapsed(),
        out.log.events().len(),
        out.links.iter().filter(|l| l.active_ms > 0).count(),
        cli.out_dir.display()
    );
    for (sub, (lo, hi)) in out.subnetwork_rate_ranges() {
        eprintln!("  {sub}: {} - {} kbps", fmt_sig6(lo), fmt_sig6(hi));
    }
    let stalled: u64 = out.sessions.iter().map(|s| s.stall_seconds()).sum();
    if !out.sessions.is_empty() {
        eprintln!(
            "  sessions: {}/{} completed, {stalled} stall seconds",
            out.sessions.iter().filter(|s| s.completed).count(),
            out.sessions.len()
        );
    }
    Ok(())
}

fn keyrate(path: &Path) -> Res {
    let f: KeyrateFile = toml::from_str(&std::fs::read_to_string(path)?)?;
    let (p, obs) = match (f.observables, f.link) {
        (Some(o), None) => (
            f.protocol,
            IntensityObservables {
                gain: o.gain,
                qber: o.qber,
            },
        ),
        (None, Some(b)) => {
            let p = ProtocolParameters {
                y0: b.dark_rate,
                ..f.protocol
            };
            (
                p,
                analytic_observables(transmittance(&b), &p, b.misalignment),
            )
        }
        _ => return Err("give exactly one of [observables] or [link]".into()),
    };
    let tally = TransmissionTally::from_observables(f.n_sent, &p, &obs);
    let rep = finite_key_analysis(&p, &tally)?;
    let r = rep.result;
    println!("quantity,value");
    for (b, est) in ["z", "x"].iter().zip(rep.estimates) {
        if let Some(e) = est {
            println!("y1_lower_{b},{}", fmt_sig6(e.y1_lower));
            println!("e1_upper_{b},{}", fmt_sig6(e.e1_upper));
            println!("e1_phase_{b},{}", fmt_sig6(e.e1_phase));
        }
    }
    println!("k_z,{}", fmt_sig6(r.k_z));
    println!("k_x,{}", fmt_sig6(r.k_x));
    println!("k_tot,{}", fmt_sig6(r.k_tot));
    println!("rate_bps,{}", fmt_sig6(r.rate_bps));
    if let Some(a) = r.abort {
        println!("abort,{a:?}");
    }
    for d in rep.diagnostics {
        eprintln!("note: {d:?}");
    }
    Ok(())
}

fn check_topology(path: &Path) -> Res {
    let g = NetworkGraph::load(path)?;
    let v = validate(&g);
    for x in &v {
        println!("{x}");
    }
    if v.is_empty() {
        eprintln!("{}: {} nodes, no violations", g.name, g.nodes.len());
        Ok(())
    } else {
        Err(format!("{} violations", v.len()).into())
    }
}

fn bench(blocks: usize, seed: u64) -> Res {
    println!("ber,blocks,accepted,mean_efficiency,ms_per_block");
    for ber in [0.005, 0.01, 0.02, 0.04] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut ok, mut eff, mut spent) = (0, 0.0, 0.0);
        for k in 0..blocks {
            let a = BitString::random(ACCUMULATION_BITS, &mut rng);
            let b = flip_with_rate(&a, ber, &mut rng);
            let e = a.hamming_distance(&b) as f64 / a.len() as f64;
            let t = Instant::now();
            let out = process_block(
                &a,
                &b,
                ber,
                a.len() / 2,
                seed ^ k as u64,
                &WinnowConfig::default(),
            );
            spent += t.elapsed().as_secs_f64();
            if let BlockOutcome::Accepted(p) = out {
                if p.key_alice == p.key_bob {
                    ok += 1;
                    let h = -e * e.log2() - (1.0 - e) * (1.0 - e).log2();
                    eff += p.disclosed_bits as f64 / (a.len() as f64 * h);
                }
            }
        }
        println!(
            "{ber},{blocks},{ok},{},{}",
            fmt_sig6(if ok > 0 { eff / ok as f64 } else { 0.0 }),
            fmt_sig6(spent * 1000.0 / blocks.max(1) as f64)
        );
    }
    Ok(())
}
