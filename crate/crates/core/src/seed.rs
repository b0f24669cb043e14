//! Stable seed derivation.
//!
//! Every random stream in the pipeline is keyed by a tuple (run seed, epoch, sample key, ...)
//! so results never depend on iteration order or on how work is scheduled.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over the UTF-8 bytes of `s`. Stable across platforms and compiler versions.
pub fn str_hash(s: &str) -> u64 {
    bytes_hash(s.as_bytes())
}

pub fn bytes_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combines several integers into one well-mixed seed.
pub fn mix_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5eed_0f_7ab5_u64, |acc, &p| splitmix(acc ^ splitmix(p)))
}
