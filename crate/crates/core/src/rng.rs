//! Counter-based random streams.
//!
//! Every draw in an experiment is a pure function of `(master seed, experiment
//! label, replica index)`. The stream is a ChaCha8 keystream whose key is
//! derived from the master seed and the label, and whose 64-bit stream id is
//! the replica index, so replicas can be generated in any order or on any
//! worker and still produce identical numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub master: u64,
    pub experiment: u64,
    pub replica: u64,
}

impl StreamKey {
    pub fn new(master: u64, label: &str, replica: u64) -> Self {
        StreamKey {
            master,
            experiment: fnv1a(label.as_bytes()),
            replica,
        }
    }
}

/// FNV-1a, used to turn experiment labels into stable 64-bit ids.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(key: StreamKey) -> Self {
        let mut state = key.master ^ key.experiment.rotate_left(17);
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(key.replica);
        RandomStream { rng }
    }

    pub fn from_parts(master: u64, label: &str, replica: u64) -> Self {
        Self::new(StreamKey::new(master, label, replica))
    }

    /// Uniform on [0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
