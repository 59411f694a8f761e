//! Counter-based sampling of point pairs on the torus.
//!
//! Every draw is addressed by `(seed, stream, index)`, so results do not depend
//! on how work is split across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::torus::{torus_distance_unchecked, wrap_unit};

/// 32-bit words reserved per index.
const WORDS_PER_DRAW: u128 = 64;

/// Maximal supported torus dimension for pair sampling.
pub const MAX_DIM: usize = 8;

#[derive(Debug, Clone)]
pub struct PairSampler {
    base: ChaCha8Rng,
    dim: usize,
}

/// Two points at (roughly) prescribed separation.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    pub distance: f64,
}

impl PairSampler {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(
            (1..=MAX_DIM).contains(&dim),
            "pair sampling supports 1 <= d <= {MAX_DIM}"
        );
        PairSampler {
            base: ChaCha8Rng::seed_from_u64(seed),
            dim,
        }
    }

    fn rng(&self, stream: u64, index: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(stream);
        rng.set_word_pos(index as u128 * WORDS_PER_DRAW);
        rng
    }

    /// A uniform point.
    pub fn point(&self, stream: u64, index: u64) -> Vec<f64> {
        let mut rng = self.rng(stream, index);
        (0..self.dim).map(|_| rng.gen::<f64>()).collect()
    }

    /// Uniform `b1`, uniform direction, separation `scale * U(0.8, 1.2)`.
    pub fn pair(&self, stream: u64, index: u64, scale: f64) -> Pair {
        let mut rng = self.rng(stream, index);
        let b1: Vec<f64> = (0..self.dim).map(|_| rng.gen::<f64>()).collect();
        let mut dir = vec![0.0; self.dim];
        loop {
            for v in dir.iter_mut() {
                *v = rng.gen::<f64>() * 2.0 - 1.0;
            }
            let r2: f64 = dir.iter().map(|v| v * v).sum();
            if r2 > 1e-6 && r2 <= 1.0 {
                let r = r2.sqrt();
                dir.iter_mut().for_each(|v| *v /= r);
                break;
            }
        }
        let sep = scale * (0.8 + 0.4 * rng.gen::<f64>());
        let b2: Vec<f64> = b1
            .iter()
            .zip(&dir)
            .map(|(a, u)| wrap_unit(a + sep * u))
            .collect();
        let distance = torus_distance_unchecked(&b1, &b2);
        Pair { b1, b2, distance }
    }

    /// Pair with separation uniform in `(0, max_distance)`.
    pub fn close_pair(&self, stream: u64, index: u64, max_distance: f64) -> Pair {
        let mut rng = self.rng(stream, index);
        let u: f64 = rng.gen();
        let scale = max_distance * (0.01 + 0.99 * u) / 1.2;
        self.pair(stream ^ 0x9e37_79b9_7f4a_7c15, index, scale)
    }
}

/// Dyadic scales `2^-3, ..., 2^-7`.
pub fn default_scales() -> Vec<f64> {
    (3..=7).map(|k| 0.5f64.powi(k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_addressable() {
        let s = PairSampler::new(7, 2);
        let a = s.pair(3, 1000, 0.1);
        let b = s.pair(3, 1000, 0.1);
        assert_eq!(a, b);
        assert_ne!(s.pair(3, 1001, 0.1), a);
        assert_ne!(s.pair(4, 1000, 0.1), a);
    }

    #[test]
    fn separations_are_within_band() {
        let s = PairSampler::new(1, 2);
        for i in 0..2000 {
            let p = s.pair(0, i, 0.05);
            assert!(p.distance >= 0.04 - 1e-12 && p.distance <= 0.06 + 1e-12);
            assert!(p.b2.iter().all(|&c| (0.0..1.0).contains(&c)));
        }
        for i in 0..2000 {
            assert!(s.close_pair(0, i, 0.02).distance < 0.02);
        }
    }
}
