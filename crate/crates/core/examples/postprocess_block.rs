//! One 256-kbit block through reconciliation, verification and privacy
//! amplification.

use std::time::Instant;

use qkdnet::bits::BitString;
use qkdnet::postproc::{
    flip_with_rate, process_block, BlockOutcome, WinnowConfig, ACCUMULATION_BITS,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let alice = BitString::random(ACCUMULATION_BITS, &mut rng);
    let bob = flip_with_rate(&alice, 0.01, &mut rng);
    println!(
        "{} bit errors before reconciliation",
        alice.hamming_distance(&bob)
    );

    let t = Instant::now();
    match process_block(
        &alice,
        &bob,
        0.01,
        ACCUMULATION_BITS / 2,
        7,
        &WinnowConfig::default(),
    ) {
        BlockOutcome::Accepted(b) => {
            println!(
                "reconciled {} bits in {} round trips",
                b.reconciled_len, b.round_trips
            );
            println!("disclosed {} parity bits", b.disclosed_bits);
            println!(
                "final key {} bits, keys equal: {}",
                b.key_alice.len(),
                b.key_alice == b.key_bob
            );
        }
        BlockOutcome::Discarded(why) => println!("block discarded: {why:?}"),
    }
    println!("took {:.1?}", t.elapsed());
}
