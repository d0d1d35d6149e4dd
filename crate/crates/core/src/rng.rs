//! Deterministic random streams. Every stochastic quantity draws from a
//! ChaCha stream addressed by (master seed, domain, index) so results do not
//! depend on evaluation order or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::C64;

pub const DOMAIN_SYMBOLS: u64 = 1;
pub const DOMAIN_SENSING_NOISE: u64 = 2;
pub const DOMAIN_UE_NOISE: u64 = 3;
pub const DOMAIN_PHASES: u64 = 4;
pub const DOMAIN_RANDOMIZATION: u64 = 5;
pub const DOMAIN_PRIORS: u64 = 6;

pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(domain.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index);
    rng
}

/// Circularly-symmetric complex Gaussian sample with variance `var`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

/// Real Gaussian sample with standard deviation `std`.
pub fn normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * std
}

/// Unit-modulus complex number with phase uniform in [0, 2π).
pub fn unit_phase<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let t: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    C64::from_polar(1.0, t)
}
