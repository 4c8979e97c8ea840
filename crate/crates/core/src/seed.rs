//! Stable seed derivation.
//!
//! Per-item randomness is keyed on `(global seed, parts...)` so that output does
//! not depend on scheduling or iteration order. `std`'s hasher is not stable
//! across releases, so a fixed FNV-1a + SplitMix64 mix is used instead.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// One component of a derived seed key.
#[derive(Debug, Clone, Copy)]
pub enum SeedPart<'a> {
    Str(&'a str),
    Int(u64),
}

impl<'a> From<&'a str> for SeedPart<'a> {
    fn from(s: &'a str) -> Self {
        SeedPart::Str(s)
    }
}

impl From<u64> for SeedPart<'_> {
    fn from(v: u64) -> Self {
        SeedPart::Int(v)
    }
}

impl From<u32> for SeedPart<'_> {
    fn from(v: u32) -> Self {
        SeedPart::Int(v as u64)
    }
}

impl From<usize> for SeedPart<'_> {
    fn from(v: usize) -> Self {
        SeedPart::Int(v as u64)
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv_bytes(mut h: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive a child seed from a global seed and a key path.
pub fn derive_seed(global: u64, parts: &[SeedPart<'_>]) -> u64 {
    let mut h = fnv_bytes(FNV_OFFSET, &global.to_le_bytes());
    for part in parts {
        match part {
            SeedPart::Str(s) => {
                h = fnv_bytes(h, &[0x01]);
                h = fnv_bytes(h, s.as_bytes());
            }
            SeedPart::Int(v) => {
                h = fnv_bytes(h, &[0x02]);
                h = fnv_bytes(h, &v.to_le_bytes());
            }
        }
        h = fnv_bytes(h, &[0xff]);
    }
    splitmix64(h)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
