//! More clients per round compensates for dropout (standard task, 40% FD).

use feddrop_core::data::{generate, Batch};
use feddrop_core::exec::Sequential;
use feddrop_core::fedsim::{self, rounds_to_target};
use feddrop_core::presets;

const TARGET_ERROR: f64 = 0.10;
const ROUNDS: usize = 100;

fn mean_rounds_to_target(k: usize) -> f64 {
    let ds = generate(&presets::standard_generator()).unwrap();
    let eval = Batch::from_examples(&ds.all_eval()).unwrap();
    let arch = presets::standard_arch();
    let total: u64 = (1..=3u64)
        .map(|seed| {
            let mut cfg = presets::standard_federated(&[0.4; 3], seed);
            cfg.clients_per_round = k;
            cfg.rounds = ROUNDS;
            let out = fedsim::train(&cfg, &arch, &ds.clients, &eval, None, &Sequential).unwrap();
            // never reaching the target counts as one round past the budget
            rounds_to_target(&out.history, TARGET_ERROR).unwrap_or(ROUNDS as u64 + 1)
        })
        .sum();
    total as f64 / 3.0
}

#[test]
fn more_clients_per_round_reach_target_no_later() {
    let small = mean_rounds_to_target(64);
    let large = mean_rounds_to_target(256);
    assert!(small >= large, "K=64 took {small} rounds, K=256 took {large}");
    assert!(large <= ROUNDS as f64, "K=256 never reached {TARGET_ERROR}");
}
