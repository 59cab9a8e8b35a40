//! Stable sub-seed derivation.
//!
//! Every random stream in the crate is seeded from a master seed plus a path
//! of component names, so changing one part of an experiment never perturbs
//! the random streams of another.

/// FNV-1a over the bytes, then finalized with the SplitMix64 mixer.
fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a component name.
pub fn derive(parent: u64, name: &str) -> u64 {
    let h = fnv1a(name.as_bytes(), 0xcbf2_9ce4_8422_2325 ^ splitmix(parent));
    splitmix(h)
}

/// Derives a child seed from `parent` and an integer component (day, round, ...).
pub fn derive_n(parent: u64, n: u64) -> u64 {
    splitmix(splitmix(parent) ^ n.wrapping_mul(0xd6e8_feb8_6659_fd93))
}
