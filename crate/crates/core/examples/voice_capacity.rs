//! Eleven simultaneous encrypted voice calls fed by the measured link rates.

use qkdnet::apps::{
    capacity_scenario, published_rates, CapacityConfig, SessionPlan, REFERENCE_CAPACITY_PLAN,
};
use qkdnet::keymgmt::KeyStore;
use qkdnet::topology::NetworkGraph;

fn main() {
    let g = NetworkGraph::reference();
    let calls = SessionPlan::from_toml_str(REFERENCE_CAPACITY_PLAN)
        .unwrap()
        .resolve(&g)
        .unwrap();
    let cfg = CapacityConfig::default();
    let mut pools = KeyStore::new(cfg.seed);
    let rep = capacity_scenario(&g, &mut pools, &published_rates(&g), &calls, &cfg);
    for (s, route) in rep.sessions.iter().zip(&rep.routes) {
        let hops: Vec<String> = route.iter().map(|&n| g.name_of(n)).collect();
        println!(
            "{:<28} {} kbit, stalled {} s, done at {:?} s",
            hops.join(" > "),
            s.consumed_bits / 1000,
            s.stall_seconds(),
            s.finished_at_s
        );
    }
    println!("all completed: {}", rep.all_completed());
}
