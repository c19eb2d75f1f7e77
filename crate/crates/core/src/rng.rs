//! Counter-keyed random streams.
//!
//! Every stream is a ChaCha8 generator whose 256-bit key is the tuple
//! `(master seed, purpose, query index, path index)`. Draws within a path are
//! consumed in step order, so the normal used at step `s` of path `p` for
//! query `q` is a pure function of `(seed, q, p, s)` and does not depend on how
//! paths are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Separates streams used for different purposes under the same master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    FeynmanKac = 1,
    Semigroup = 2,
    Hutchinson = 3,
    Synthetic = 4,
}

pub fn keyed_rng(master: u64, purpose: Purpose, query: u64, path: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    key[16..24].copy_from_slice(&query.to_le_bytes());
    key[24..].copy_from_slice(&path.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Standard normals for one path. With `negate` set the stream yields the
/// antithetic partner `−z` of the unnegated stream.
pub struct NormalStream {
    rng: ChaCha8Rng,
    sign: f64,
}

impl NormalStream {
    pub fn new(master: u64, purpose: Purpose, query: u64, path: u64, negate: bool) -> Self {
        Self {
            rng: keyed_rng(master, purpose, query, path),
            sign: if negate { -1.0 } else { 1.0 },
        }
    }

    #[inline]
    pub fn fill(&mut self, z: &mut [f64]) {
        for v in z {
            let s: f64 = StandardNormal.sample(&mut self.rng);
            *v = self.sign * s;
        }
    }
}
