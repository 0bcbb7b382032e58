//! Counter-based noise streams.
//!
//! A master seed is split into independent ChaCha streams keyed by
//! (step, batch index, role), so any single draw can be reproduced without
//! replaying the ones before it, and a resumed run only needs the step.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;

/// What a stream is used for; part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Where = 1,
    Attr = 2,
    Category = 3,
    Presence = 4,
    Shuffle = 5,
    Init = 6,
    Data = 7,
    Test = 8,
}

/// Lower/upper clamp of the uniform draw feeding the Gumbel transform.
pub const GUMBEL_UNIFORM_EPS: f64 = 1e-10;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_id(step: u64, index: u64, role: Role) -> u64 {
    splitmix(step ^ splitmix(index ^ splitmix(role as u64)))
}

#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, step: u64, index: u64, role: Role) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id(step, index, role));
        NoiseStream { rng }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn uniform<T: Scalar>(&mut self) -> T {
        T::lit(self.rng.random::<f64>())
    }

    pub fn normal<T: Scalar>(&mut self) -> T {
        let v: f64 = StandardNormal.sample(&mut self.rng);
        T::lit(v)
    }

    /// Gumbel(0, 1) as −ln(−ln u) with u clamped to [1e-10, 1 − 1e-10].
    pub fn gumbel<T: Scalar>(&mut self) -> T {
        let u: f64 = self.rng.random::<f64>();
        let u = u.clamp(GUMBEL_UNIFORM_EPS, 1.0 - GUMBEL_UNIFORM_EPS);
        T::lit(-(-u.ln()).ln())
    }

    /// Difference of two independent Gumbel draws, i.e. Logistic(0, 1): the
    /// noise of a two-class Gumbel-softmax collapsed onto its sigmoid.
    pub fn logistic<T: Scalar>(&mut self) -> T {
        let a: T = self.gumbel();
        let b: T = self.gumbel();
        a - b
    }

    pub fn fill<T: Scalar>(&mut self, n: usize, mut draw: impl FnMut(&mut Self) -> T) -> Vec<T> {
        (0..n).map(|_| draw(self)).collect()
    }
}
