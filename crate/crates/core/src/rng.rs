//! Counter-based random streams for particle simulation.
//!
//! Each draw is addressed by `(seed, release ordinal, particle ordinal, step
//! ordinal)`. The generator is ChaCha8 keyed by the seed; the 64-bit stream
//! id packs the release ordinal (high 32 bits) and particle ordinal (low 32
//! bits), and step `s` reads the 64-bit word pair at block position `2 s`.
//! Which thread computes a particle, or in which order, cannot change what it
//! draws.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Expands a 64-bit seed into a 256-bit ChaCha key (little-endian seed in
/// the first word, zeros elsewhere).
fn key(seed: u64) -> [u8; 32] {
    let mut k = [0u8; 32];
    k[..8].copy_from_slice(&seed.to_le_bytes());
    k
}

/// Random stream owned by one particle.
#[derive(Clone)]
pub struct ParticleStream {
    rng: ChaCha8Rng,
}

impl ParticleStream {
    pub fn new(seed: u64, release_ordinal: u32, particle_ordinal: u32) -> Self {
        let mut rng = ChaCha8Rng::from_seed(key(seed));
        rng.set_stream(((release_ordinal as u64) << 32) | particle_ordinal as u64);
        Self { rng }
    }

    /// Uniform `[0, 1)` draw for `step`, with 53 bits of precision.
    pub fn unit(&mut self, step: u64) -> f64 {
        self.rng.set_word_pos(step as u128 * 2);
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[-half_width, half_width)`.
    pub fn symmetric(&mut self, step: u64, half_width: f64) -> f64 {
        (2.0 * self.unit(step) - 1.0) * half_width
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_depend_only_on_address() {
        let mut a = ParticleStream::new(7, 1, 2);
        let forward: Vec<f64> = (0..20).map(|s| a.unit(s)).collect();
        let mut b = ParticleStream::new(7, 1, 2);
        let backward: Vec<f64> = (0..20).rev().map(|s| b.unit(s)).collect();
        let mut backward = backward;
        backward.reverse();
        assert_eq!(forward, backward);
    }

    #[test]
    fn streams_differ() {
        let draw = |seed, r, p| ParticleStream::new(seed, r, p).unit(0);
        let base = draw(7, 0, 0);
        assert_ne!(base, draw(8, 0, 0));
        assert_ne!(base, draw(7, 1, 0));
        assert_ne!(base, draw(7, 0, 1));
    }

    #[test]
    fn unit_range_and_mean() {
        let mut s = ParticleStream::new(1, 0, 0);
        let v: Vec<f64> = (0..20_000).map(|i| s.unit(i)).collect();
        assert!(v.iter().all(|&u| (0.0..1.0).contains(&u)));
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 0.5).abs() < 0.01);
        let half = s.symmetric(3, 14.4);
        assert!((-14.4..14.4).contains(&half));
    }

    #[test]
    fn frozen_first_draws() {
        // Pins the generator so results stay reproducible across releases.
        let mut s = ParticleStream::new(7, 0, 0);
        let got: Vec<u64> = (0..3).map(|i| (s.unit(i) * 1e9) as u64).collect();
        assert_eq!(got, FROZEN);
    }

    const FROZEN: [u64; 3] = [764109042, 465937615, 5674514];
}
