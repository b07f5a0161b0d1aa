//! Stable seed derivation.
//!
//! Every random draw in the pipeline comes from a `ChaCha8Rng` seeded by a
//! 64-bit key derived here, so output never depends on iteration order or
//! thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::sweep::SweepTag;

/// Domain separators so that seeds for different purposes never collide.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum Stream {
    Patient = 0x5041_5449,
    Labels = 0x4c41_4245,
    Noise = 0x4e4f_4953,
    Perturb = 0x5045_5254,
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold a sequence of words into one well-mixed key.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x243f_6a88_85a3_08d3, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// FNV-1a over bytes, then mixed. Stable across platforms and releases.
pub fn hash_str(s: &str) -> u64 {
    let h = s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    });
    splitmix64(h)
}

pub fn patient_seed(master_seed: u64, patient_index: u64) -> u64 {
    mix(&[Stream::Patient as u64, master_seed, patient_index])
}

pub fn sweep_perturb_seed(master_seed: u64, patient_id: &str, tag: SweepTag) -> u64 {
    mix(&[
        Stream::Perturb as u64,
        master_seed,
        hash_str(patient_id),
        tag.ordinal() as u64,
    ])
}

pub fn rng_for(key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable() {
        // Frozen values guard against accidental changes to the derivation,
        // which would silently change every generated corpus.
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
        assert_eq!(patient_seed(1, 2), patient_seed(1, 2));
        assert_ne!(patient_seed(1, 2), patient_seed(1, 3));
        assert_ne!(patient_seed(1, 2), patient_seed(2, 2));
        assert_ne!(
            sweep_perturb_seed(0, "P0001", SweepTag::C1),
            sweep_perturb_seed(0, "P0001", SweepTag::C2)
        );
        let a: u64 = rng_for(5).random();
        let b: u64 = rng_for(5).random();
        assert_eq!(a, b);
    }
}
