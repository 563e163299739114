//! Seeded fixtures shared by the benchmarks.

use std::sync::Arc;

use ftap_core::probspace::{random_tree, RandomTreeSpec};
use ftap_core::{AdaptedProcess, ScenarioTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest tree the exhaustive oracle accepts, with a random walk on it.
pub fn oracle_fixture(seed: u64) -> (AdaptedProcess, AdaptedProcess) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = loop {
        let t = random_tree(&mut rng, RandomTreeSpec::default());
        if t.horizon() == 4 && t.num_atoms() >= 12 {
            break t;
        }
    };
    let x = walk(&mut rng, &tree, 1.0);
    let y = walk(&mut rng, &tree, 1.0);
    (x, y)
}

pub fn walk(rng: &mut ChaCha8Rng, tree: &Arc<ScenarioTree>, spread: f64) -> AdaptedProcess {
    let mut values = vec![0.0; tree.num_nodes()];
    for v in tree.top_down() {
        if let Some(u) = tree.parent(v) {
            values[v] = values[u] + rng.gen_range(-spread..spread);
        }
    }
    AdaptedProcess::new(tree.clone(), values).expect("values match the tree")
}

/// Seeded random trees with a random walk each.
pub fn walks(seed: u64, count: usize) -> Vec<AdaptedProcess> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let tree = random_tree(&mut rng, RandomTreeSpec::default());
            walk(&mut rng, &tree, 3.0)
        })
        .collect()
}
