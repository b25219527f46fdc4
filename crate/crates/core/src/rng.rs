//! Seeded random streams.
//!
//! Every random draw in the crate comes from `ChaCha8Rng`. A stream is fixed
//! by the user seed plus a `(purpose, index)` pair mapped onto ChaCha's 64-bit
//! stream id, so per-client and per-repeat draws do not depend on scheduling
//! or thread count. Standard normals use `rand_distr::StandardNormal`
//! (ziggurat method).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    /// Problem generation, indexed by client.
    Client = 1,
    /// Initial point.
    Init = 2,
    /// Sketch randomness of one run, indexed by repeat.
    Repeat = 3,
    /// Free-form use in experiments and tests.
    Aux = 4,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> SimRng {
    debug_assert!(index < 1 << 48);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) | index);
    rng
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
