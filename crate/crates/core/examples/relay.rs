//! Two users in different subnetworks get a shared key through two trusted
//! relays, then use it as a one-time pad.

use qkdnet::apps::{decrypt, encrypt};
use qkdnet::bits::BitString;
use qkdnet::keymgmt::{Cause, KeyStore};
use qkdnet::topology::NetworkGraph;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let g = NetworkGraph::reference();
    let id = |s: &str| g.id_of(s).unwrap();
    let (ub1, tr1, tr3, ub18) = (id("UB-1"), id("TR-1"), id("TR-3"), id("UB-18"));

    let mut pools = KeyStore::new(5);
    for (a, b) in [(ub1, tr1), (tr1, tr3), (tr3, ub18)] {
        pools.credit(a, b, 0, 10_000);
    }
    pools.relay_key(ub1, tr1, tr3, 4096, 1).unwrap();
    let out = pools.relay_key(ub1, tr3, ub18, 4096, 2).unwrap();
    println!(
        "UB-1 and UB-18 agree on 4096 bits: {}",
        out.key_a == out.key_b
    );

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let msg = BitString::random(1000, &mut rng);
    let ct = encrypt(&msg, &mut pools, ub1, ub18, 3).unwrap();
    println!("round trip ok: {}", decrypt(&ct, &pools) == msg);

    for p in pools.pools() {
        println!(
            "{}-{}: stored {:>5}, generated {:>6}, relayed {:>6}, used {:>5}",
            g.name_of(p.pair.0),
            g.name_of(p.pair.1),
            p.stored_bits(),
            p.total(Cause::Generated),
            p.total(Cause::Relayed),
            -p.total(Cause::ConsumedApp) - p.total(Cause::ConsumedAuth)
        );
    }
}
