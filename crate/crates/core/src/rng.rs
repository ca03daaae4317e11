//! Named random streams derived from a single run seed.
//!
//! Every consumer of randomness asks for a stream by name (and an optional
//! index such as a sample number or step). Streams are independent ChaCha8
//! sequences, so any component can be reproduced without replaying the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// FNV-1a over the stream name; stable across platforms and releases.
fn name_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed splitter for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream `name`, sub-stream `index`.
    pub fn stream(&self, name: &str, index: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(name).rotate_left(17));
        rng.set_stream(index);
        rng
    }
}

/// Normal draw with standard deviation `std`, resampled until it lies
/// within two standard deviations of zero.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let tree = SeedTree::new(7);
        let draw = |mut r: StreamRng| (0..4).map(|_| r.gen::<u64>()).collect::<Vec<_>>();
        let a = draw(tree.stream("data", 3));
        assert_eq!(a, draw(tree.stream("data", 3)));
        assert_ne!(a, draw(tree.stream("data", 4)));
        assert_ne!(a, draw(tree.stream("init", 3)));
        assert_ne!(a, draw(SeedTree::new(8).stream("data", 3)));
    }

    #[test]
    fn truncated_normal_respects_bound() {
        let mut rng = SeedTree::new(1).stream("init", 0);
        for _ in 0..10_000 {
            assert!(truncated_normal(&mut rng, 0.05).abs() <= 0.1);
        }
    }
}
