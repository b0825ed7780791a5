//! Deterministic random streams.
//!
//! Every stream is a ChaCha8 generator (`rand_chacha`), whose output is fixed
//! by its seed on every platform. Uniform reals take the top 53 bits of a
//! `u64`; Gaussians use the Box–Muller transform, so no platform or
//! crate-version dependent sampling algorithm is involved.
//!
//! Components never share a stream. A run has one master seed and each
//! component asks for its own sub-stream with [`Rng::derive`], which hashes
//! the master seed together with a component label:
//!
//! ```text
//! sub_seed = splitmix64(master_seed ^ fnv1a64(label))
//! ```
//!
//! The labels in use are listed in [`streams`].

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Labels of the sub-streams used by the pipeline.
pub mod streams {
    pub const DATASET: &str = "dataset";
    pub const NOISE: &str = "noise";
    pub const SKETCH: &str = "sketch";
    pub const INIT: &str = "q0";
    pub const SUPPORT: &str = "support";
    pub const BOOTSTRAP: &str = "bootstrap";
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a64(label: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for byte in label.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Seed of the sub-stream `label` of the master seed `seed`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(label))
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for the component `label`. Depends only on this
    /// stream's seed, not on how much of it has been consumed.
    pub fn derive(&self, label: &str) -> Rng {
        Rng::new(derive_seed(self.seed, label))
    }

    /// Independent indexed stream, e.g. one per bootstrap replicate.
    pub fn derive_indexed(&self, label: &str, index: u64) -> Rng {
        Rng::new(splitmix64(derive_seed(self.seed, label) ^ splitmix64(index)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw (Box–Muller, both outputs used).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - U lies in (0, 1], so the log is finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        let n = n as u64;
        // rejection sampling removes modulo bias
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// `k` distinct indices from `0..n`, in sampling order (partial
    /// Fisher–Yates).
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct indices from {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
