//! Deterministic derivation of independent generator streams from one seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named streams so unrelated consumers never share a generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Sample = 2,
    Epoch = 3,
    Augment = 4,
    Dropout = 5,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Generator for item `index` of `stream` under `seed`.
pub fn derive(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let s = splitmix(splitmix(seed ^ splitmix(stream as u64)) ^ index);
    ChaCha8Rng::seed_from_u64(s)
}

/// Generator for an item addressed by two indices, e.g. (epoch, position).
pub fn derive2(seed: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    derive(splitmix(seed ^ a.rotate_left(32)), stream, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = derive(7, Stream::Sample, 3).next_u64();
        assert_eq!(a, derive(7, Stream::Sample, 3).next_u64());
        assert_ne!(a, derive(7, Stream::Sample, 4).next_u64());
        assert_ne!(a, derive(7, Stream::Epoch, 3).next_u64());
        assert_ne!(a, derive(8, Stream::Sample, 3).next_u64());
        assert_ne!(
            derive2(1, Stream::Augment, 1, 2).next_u64(),
            derive2(1, Stream::Augment, 2, 1).next_u64()
        );
    }
}
