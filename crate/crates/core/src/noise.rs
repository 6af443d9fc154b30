//! Keyed Gaussian noise streams.
//!
//! Each (seed, layer, head, indicator) tuple owns its own ChaCha8 stream, so
//! the draws for one head never depend on how many other heads were processed
//! before it or on which thread processed them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::rope::Indicator;

pub fn stream(seed: u64, layer: usize, head: usize, indicator: Indicator) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((layer as u64) << 32) | ((head as u64) << 1) | indicator.index() as u64);
    rng
}

/// `count` draws from N(0, sigma²) on the keyed stream.
pub fn gaussian(seed: u64, layer: usize, head: usize, indicator: Indicator, sigma: f64, count: usize) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; count];
    }
    let mut rng = stream(seed, layer, head, indicator);
    (0..count)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = gaussian(42, 3, 5, Indicator::Key, 1.0, 64);
        assert_eq!(a, gaussian(42, 3, 5, Indicator::Key, 1.0, 64));
        assert_ne!(a, gaussian(42, 3, 5, Indicator::Query, 1.0, 64));
        assert_ne!(a, gaussian(42, 3, 6, Indicator::Key, 1.0, 64));
        assert_ne!(a, gaussian(42, 4, 5, Indicator::Key, 1.0, 64));
        assert_ne!(a, gaussian(43, 3, 5, Indicator::Key, 1.0, 64));
    }

    #[test]
    fn prefix_stable() {
        let long = gaussian(7, 0, 0, Indicator::Query, 2.0, 100);
        let short = gaussian(7, 0, 0, Indicator::Query, 2.0, 10);
        assert_eq!(&long[..10], &short[..]);
    }
}
