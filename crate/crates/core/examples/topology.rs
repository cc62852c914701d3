//! Loads a topology (the reference network by default), validates it and
//! lists the quantum paths the switches can set up.
//!
//! cargo run --example topology -- [path/to/network.toml]

use qkdnet::topology::{validate, NetworkGraph};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let g = match std::env::args().nth(1) {
        Some(p) => NetworkGraph::load(p)?,
        None => NetworkGraph::reference(),
    };
    let v = validate(&g);
    println!(
        "{}: {} nodes, {} violations",
        g.name,
        g.nodes.len(),
        v.len()
    );
    for x in &v {
        println!("  {x}");
    }
    for p in g.quantum_paths() {
        let (a, b) = p.pair();
        let via = p
            .via_switch
            .map(|(s, _, _)| format!(" via {}", g.name_of(s)))
            .unwrap_or_default();
        println!(
            "{:>6} - {:<6} {:5.1} km, {:.1} dB switch loss{via}",
            g.name_of(a),
            g.name_of(b),
            p.budget.fiber_km,
            p.budget.switch_loss_db
        );
    }
    Ok(())
}
