//! Seed handling for Monte Carlo replications.
//!
//! Every replication gets its own ChaCha stream derived from the master seed
//! and the replication index, so results do not depend on how replications
//! are scheduled across threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Independent generator for replication `index` under `master`.
pub fn replication_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Derives a child master seed, used when one experiment feeds another
/// (e.g. a design seed and a noise seed from the same config seed).
pub fn derive_seed(master: u64, label: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master ^ 0x5851_f42d_4c95_7f2d);
    rng.set_stream(label.wrapping_add(1 << 40));
    rng.next_u64()
}

/// Fills `out` with independent Rademacher signs.
pub fn fill_rademacher<R: RngCore>(rng: &mut R, out: &mut [f64]) {
    for chunk in out.chunks_mut(64) {
        let mut bits = rng.next_u64();
        for v in chunk.iter_mut() {
            *v = if bits & 1 == 1 { 1.0 } else { -1.0 };
            bits >>= 1;
        }
    }
}

pub fn fill_gaussian<R: Rng>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// Runs `f` once per replication and returns the results in replication
/// order. Scheduling is delegated to rayon; ordering is not affected by it.
pub fn map_replications<T, F>(reps: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..reps).into_par_iter().map(f).collect()
}
