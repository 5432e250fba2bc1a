//! Counter-based random number streams.
//!
//! Every stochastic component draws from a ChaCha stream keyed by
//! `(seed, stream id)`, so replications, bootstrap draws and data
//! generators are order-independent: results do not depend on worker
//! count or scheduling. Replications use seeds derived by a SplitMix
//! mix, keeping their internal stream ids in disjoint key spaces.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream-id bands. Purposes with per-draw or per-equation sub-streams
/// get a 2^20-wide band; scalar purposes use small ids.
pub mod tag {
    /// Network / weight structure draws.
    pub const STRUCTURE: u64 = 1;
    /// Exogenous unit-level signal.
    pub const COVARIATES: u64 = 2;
    /// Linear-process coefficient matrices.
    pub const LINEAR_PROCESS: u64 = 3;
    /// Linear-process innovations.
    pub const INNOVATIONS: u64 = 4;
    /// Monte Carlo draws behind the Gaussian max quantile.
    pub const GAUSSIAN_QUANTILE: u64 = 5;
    /// Instrument draws for equation j: `INSTRUMENTS + j`.
    pub const INSTRUMENTS: u64 = 1 << 20;
    /// Error draws for equation j: `ERRORS + j`.
    pub const ERRORS: u64 = 2 << 20;
    /// Constraint-level multiplier draw b: `LAMBDA_BOOT + b`.
    pub const LAMBDA_BOOT: u64 = 3 << 20;
    /// Inference bootstrap draw b: `BOOT + b`.
    pub const BOOT: u64 = 4 << 20;
}

/// A deterministic stream for a `(seed, stream)` pair.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive an independent seed for a salted purpose (replication index,
/// worker lane). SplitMix-style finalizer on the combined key.
pub fn derive(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ mix64(salt.wrapping_add(0x9E37_79B9_7F4A_7C15));
    z = mix64(z);
    z
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: f64 = stream(7, 3).gen();
        let b: f64 = stream(7, 3).gen();
        let c: f64 = stream(7, 4).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn derived_seeds_differ() {
        let s0 = derive(42, 0);
        let s1 = derive(42, 1);
        let t0 = derive(43, 0);
        assert_ne!(s0, s1);
        assert_ne!(s0, t0);
        assert_eq!(s0, derive(42, 0));
    }
}
