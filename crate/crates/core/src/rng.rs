//! Seeded random stream that can be captured and restored exactly.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// ChaCha8 stream identified by its seed and word position.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

/// Serializable snapshot of an [`RngState`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: u64,
    /// Stream position in 32-bit words.
    pub position: u128,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this state's seed and a label.
    pub fn fork(&self, label: u64) -> RngState {
        let mixed = self
            .seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .rotate_left(17)
            ^ label.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        RngState::new(mixed)
    }

    pub fn snapshot(&self) -> RngSnapshot {
        RngSnapshot {
            seed: self.seed,
            position: self.rng.get_word_pos(),
        }
    }

    pub fn restore(snap: RngSnapshot) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(snap.seed);
        rng.set_word_pos(snap.position);
        RngState {
            seed: snap.seed,
            rng,
        }
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn gumbel(&mut self) -> f64 {
        // Open interval keeps both logs finite.
        let u = loop {
            let u = self.uniform();
            if u > 0.0 {
                break u;
            }
        };
        -(-u.ln()).ln()
    }

    pub fn normal_tensor(&mut self, shape: &[usize], std: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.normal() * std).collect();
        Tensor::new(shape.to_vec(), data).expect("valid shape")
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn inner(&mut self) -> &mut impl RngCore {
        &mut self.rng
    }
}
