//! Seeded randomness. All sampling goes through ChaCha8, whose output stream
//! is fixed by its specification and identical across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type AgentRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> AgentRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a sub-task (e.g. one evaluation game).
pub fn derive(seed: u64, stream: u64) -> AgentRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Samples an index from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f32], rng: &mut R) -> usize {
    let u: f32 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave the total just under 1.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}
