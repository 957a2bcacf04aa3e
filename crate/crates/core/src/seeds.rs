//! Seed splitting.
//!
//! Every random draw in a run descends from one root seed. A sub-seed is
//! derived by folding a fixed stream tag and a path of indices (round,
//! client, tier, ...) through SplitMix64, so any component can be replayed
//! in isolation from `(root, stream, path)` alone.
//!
//! | stream        | path                    | used for                          |
//! |---------------|-------------------------|-----------------------------------|
//! | `POPULATION`  | `[]` / `[client, split]`| blob geometry, client datasets    |
//! | `HOLDOUT`     | `[distribution]`        | per-distribution holdout sets     |
//! | `PRETRAIN`    | `[client]` / `[0]`      | pre-training runs, latencies      |
//! | `SCHEDULER`   | `[round]`               | random tiering and `N_r` draws    |
//! | `TRAIN`       | `[round, client]`       | mini-batch shuffles               |
//! | `EVAL`        | `[round, tier]`         | server-side Shapley eval sets     |
//! | `BIDS`        | `[round, client]`       | random-bid ablation               |
//! | `KMEANS`      | `[]`                    | k-means++ seeding                 |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const POPULATION: u64 = 0x01;
pub const HOLDOUT: u64 = 0x02;
pub const PRETRAIN: u64 = 0x03;
pub const SCHEDULER: u64 = 0x04;
pub const TRAIN: u64 = 0x05;
pub const EVAL: u64 = 0x06;
pub const BIDS: u64 = 0x07;
pub const KMEANS: u64 = 0x08;
pub const THEORY: u64 = 0x09;
pub const SHAPLEY_CHECK: u64 = 0x0a;
pub const LATENCY: u64 = 0x0b;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a sub-seed from `root`, a stream tag and an index path.
pub fn derive(root: u64, stream: u64, path: &[u64]) -> u64 {
    let mut acc = splitmix64(root ^ splitmix64(stream));
    for &p in path {
        acc = splitmix64(acc ^ splitmix64(p.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    acc
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(root: u64, stream: u64, path: &[u64]) -> ChaCha8Rng {
    rng(derive(root, stream, path))
}
