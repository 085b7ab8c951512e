//! Seeded randomness.
//!
//! Every stochastic quantity is drawn from `ChaCha8Rng`, a counter-based
//! stream cipher generator whose output is fixed by its 256-bit key and is
//! identical on every platform. A `u64` seed is expanded into the key with
//! `SeedableRng::seed_from_u64`. Independent sub-computations (trials,
//! ensemble members, batches) receive their own seed from [`derive_seed`], so
//! results never depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Builds the generator for `seed`.
pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Purpose tags mixed into derived seeds so that, e.g., the data of trial 3
/// and the initialization of member 3 never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Shuffle = 3,
    Batch = 4,
    Trial = 5,
    Ensemble = 6,
    Baseline = 7,
    Cell = 8,
    /// The single dataset an estimator run works on.
    Estimate = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministically derives a child seed from `(base, stream, index)`.
pub fn derive_seed(base: u64, stream: Stream, index: u64) -> u64 {
    let a = splitmix64(base ^ (stream as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}
