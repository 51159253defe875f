//! Counter-based Gaussian streams.
//!
//! Every path owns a ChaCha stream selected by its index; the draws of
//! time step `k` sit at a fixed word offset inside that stream. Any path,
//! or any step of any path, can therefore be regenerated without replaying
//! the others.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Gaussian source for one path.
pub struct PathStream {
    rng: ChaCha12Rng,
    dim: usize,
}

impl PathStream {
    pub fn new(seed: u64, path: usize, dim: usize) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(path as u64);
        Self { rng, dim }
    }

    /// 32-bit words consumed per time step: one Box-Muller pair (two u64)
    /// per two coordinates.
    fn words_per_step(&self) -> u128 {
        (4 * self.dim.div_ceil(2)) as u128
    }

    /// Position the stream at the start of time step `step`.
    pub fn seek(&mut self, step: usize) {
        self.rng.set_word_pos(step as u128 * self.words_per_step());
    }

    /// Fill `out` (length `dim`) with independent N(0, 1) draws for the
    /// next time step.
    pub fn fill_normals(&mut self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        let mut i = 0;
        while i < self.dim {
            let (a, b) = box_muller(self.rng.next_u64(), self.rng.next_u64());
            out[i] = a;
            if i + 1 < self.dim {
                out[i + 1] = b;
            }
            i += 2;
        }
    }

    /// Single draw for a one-dimensional stream.
    pub fn next_normal_1d(&mut self) -> f64 {
        debug_assert_eq!(self.dim, 1);
        box_muller(self.rng.next_u64(), self.rng.next_u64()).0
    }
}

fn unit_open(bits: u64) -> f64 {
    // (0, 1]: never returns 0 so the logarithm below is finite
    ((bits >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

fn box_muller(u: u64, v: u64) -> (f64, f64) {
    let r = (-2.0 * unit_open(u).ln()).sqrt();
    let theta = std::f64::consts::TAU * unit_open(v);
    (r * theta.cos(), r * theta.sin())
}
