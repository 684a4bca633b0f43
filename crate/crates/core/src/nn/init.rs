//! Seeded weight initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Real;

/// He-style fan-in scaled uniform values: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
pub fn he_uniform<T: Real>(rng: &mut ChaCha8Rng, fan_in: usize, len: usize) -> Vec<T> {
    let limit = (6.0 / fan_in.max(1) as f64).sqrt();
    (0..len).map(|_| T::of(rng.gen_range(-limit..limit))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::stream_rng;

    #[test]
    fn bounded_and_seeded() {
        let mut rng = stream_rng(9, 0);
        let w: Vec<f64> = he_uniform(&mut rng, 24, 1000);
        let limit = (6.0 / 24.0f64).sqrt();
        assert!(w.iter().all(|v| v.abs() < limit));
        let mut rng2 = stream_rng(9, 0);
        let w2: Vec<f64> = he_uniform(&mut rng2, 24, 1000);
        assert_eq!(w, w2);
    }
}
