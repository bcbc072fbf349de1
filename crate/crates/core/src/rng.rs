//! Seed derivation and the handful of samplers the simulator needs.
//!
//! Every consumer of randomness draws from its own ChaCha8 stream whose seed
//! is derived from `(root seed, stream name, index)`. Stream names carry a
//! version suffix (`"ctmc/v1"`), so adding a new consumer or bumping one
//! stream never perturbs the others.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::math;

pub const CTMC_STREAM: &str = "ctmc/v1";
pub const FILL_STREAM: &str = "fills/v1";
pub const PRICE_STREAM: &str = "price/v1";

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the stream `name` at position `index` under `root`.
pub fn derive_seed(root: u64, name: &str, index: u64) -> [u8; 32] {
    // FNV-1a over the name, then mixed with root and index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    let mut state = root ^ h.rotate_left(17) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    seed
}

pub fn stream(root: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(root, name, index))
}

/// Uniform draw in the half-open interval (0, 1].
pub fn uniform_open0<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

/// Exponential variate with the given rate. Returns +inf for a zero rate.
pub fn exponential<R: RngCore + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    -math::ln(uniform_open0(rng)) / rate
}

/// Standard normal variate (Box-Muller, one draw per call).
pub fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let u1 = uniform_open0(rng);
    let u2 = uniform_open0(rng);
    math::sqrt(-2.0 * math::ln(u1)) * math::cos(core::f64::consts::TAU * u2)
}

/// Index drawn from a discrete law given by (not necessarily normalised)
/// non-negative weights. Returns `None` if all weights are zero.
pub fn categorical<R: RngCore + ?Sized>(rng: &mut R, weights: &[f64]) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let target = (1.0 - uniform_open0(rng)) * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, w) in weights.iter().enumerate() {
        if *w <= 0.0 {
            continue;
        }
        acc += w;
        last = Some(i);
        if target < acc {
            return Some(i);
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent_of_each_other() {
        let a = derive_seed(7, CTMC_STREAM, 0);
        let b = derive_seed(7, FILL_STREAM, 0);
        let c = derive_seed(7, CTMC_STREAM, 1);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, CTMC_STREAM, 0));
    }

    #[test]
    fn categorical_skips_zero_weights() {
        let mut rng = stream(1, "test/v1", 0);
        for _ in 0..1000 {
            let i = categorical(&mut rng, &[0.0, 1.0, 0.0, 2.0]).unwrap();
            assert!(i == 1 || i == 3);
        }
        assert_eq!(categorical(&mut rng, &[0.0, 0.0]), None);
    }

    #[test]
    fn uniform_never_zero() {
        let mut rng = stream(3, "test/v1", 0);
        for _ in 0..10_000 {
            let u = uniform_open0(&mut rng);
            assert!(u > 0.0 && u <= 1.0);
        }
    }
}
