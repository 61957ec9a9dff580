//! Counter-style random streams.
//!
//! Every random quantity is addressed by `(master seed, domain, index)`. The
//! seed and domain pick a ChaCha key and the index picks the stream, so a
//! subject's draws never depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named purposes so unrelated consumers of one master seed never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Covariates = 1,
    Frailty = 2,
    World0 = 3,
    World1 = 4,
    Treatment = 5,
    Censoring = 6,
    Functionals = 7,
    Sensitivity = 8,
    Bootstrap = 9,
    Shared = 10,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a sub-seed; used to nest streams (e.g. bootstrap replicate -> analysis).
pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(domain as u64)) ^ index)
}

/// Deterministic generator for one `(seed, domain, index)` triple.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let a = splitmix(seed);
    let b = splitmix(a ^ (domain as u64));
    key[..8].copy_from_slice(&a.to_le_bytes());
    key[8..16].copy_from_slice(&b.to_le_bytes());
    key[16..24].copy_from_slice(&splitmix(b).to_le_bytes());
    key[24..].copy_from_slice(&(domain as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
