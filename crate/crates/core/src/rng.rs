//! Deterministic RNG substreams.
//!
//! Every stage of an experiment draws from its own stream, keyed by
//! `(master seed, purpose tag, index)`. The key is hashed into a full
//! 256-bit ChaCha seed so streams for distinct keys are statistically
//! independent, and the same key always yields the same stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Create an independent random stream for `(master_seed, tag, index)`.
pub fn substream(master_seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update([0x1f]); // separator so ("ab",_) and ("a",_) cannot collide
    hasher.update(tag.as_bytes());
    hasher.update([0x1f]);
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_key_same_stream() {
        let a: Vec<u64> = substream(7, "defender-train", 0)
            .sample_iter(rand::distributions::Standard)
            .take(32)
            .collect();
        let b: Vec<u64> = substream(7, "defender-train", 0)
            .sample_iter(rand::distributions::Standard)
            .take(32)
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_tags_distinct_streams() {
        let mut a = substream(7, "defender-train", 0);
        let mut b = substream(7, "gan", 0);
        let xs: Vec<u64> = (0..8).map(|_| a.gen()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.gen()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn tag_index_encoding_is_unambiguous() {
        let mut a = substream(7, "ab", 0);
        let mut b = substream(7, "a", 0x62); // 'b'
        assert_ne!(a.gen::<u64>(), b.gen::<u64>());
    }

    // Empirical independence: correlation of the first 10^4 uniforms of two
    // streams stays below 0.05.
    #[test]
    fn substream_correlation_is_negligible() {
        let n = 10_000;
        let xs: Vec<f64> = substream(7, "defender-train", 0)
            .sample_iter(rand::distributions::Standard)
            .take(n)
            .collect();
        let ys: Vec<f64> = substream(7, "gan", 0)
            .sample_iter(rand::distributions::Standard)
            .take(n)
            .collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mx = mean(&xs);
        let my = mean(&ys);
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for i in 0..n {
            cov += (xs[i] - mx) * (ys[i] - my);
            vx += (xs[i] - mx).powi(2);
            vy += (ys[i] - my).powi(2);
        }
        let rho = cov / (vx.sqrt() * vy.sqrt());
        assert!(rho.abs() < 0.05, "rho = {rho}");
    }
}
