//! Seed discipline.
//!
//! Every random quantity in the crate is drawn from a `ChaCha8Rng` built from a
//! top-level seed plus a named sub-stream and a numeric stream index. Work is
//! split into fixed-size chunks that each own a stream, so the parallel and
//! sequential backends produce identical draws.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::qstate::BlochVector;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of a named sub-stream. Stable across releases.
pub fn substream_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the label, then mixed with the parent seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}

/// Generator for the `stream`-th work item of a seeded computation.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform direction on the unit sphere.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(s * phi.cos(), s * phi.sin(), z)
}

/// Uniform point in the ball of `radius` around `center` (radius drawn as u^(1/3)).
pub fn uniform_in_ball<R: Rng + ?Sized>(
    rng: &mut R,
    center: BlochVector,
    radius: f64,
) -> BlochVector {
    let u: f64 = rng.random();
    let rho = radius * u.cbrt();
    let d = unit_vector(rng) * rho;
    center + BlochVector::from(d)
}

/// Multinomial counts for `n` trials over four outcomes, by sequential binomials.
pub fn multinomial4<R: Rng + ?Sized>(n: u64, p: &[f64; 4], rng: &mut R) -> [u64; 4] {
    let mut out = [0u64; 4];
    let mut left = n;
    let mut mass = 1.0;
    for k in 0..3 {
        if left == 0 || mass <= 0.0 {
            break;
        }
        let q = (p[k] / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(left, q)
            .expect("probability clamped to [0, 1]")
            .sample(rng);
        out[k] = draw;
        left -= draw;
        mass -= p[k];
    }
    out[3] += left;
    out
}
