//! Seed derivation. Every random stream in an experiment is derived from one
//! base seed plus a stream tag, so runs are reproducible and streams that
//! should be paired (e.g. map seeds across sync/async runs) stay paired.

/// SplitMix64 finalizer.
pub fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(base: u64, tag: &str, index: u64) -> u64 {
    let mut h = splitmix(base);
    for b in tag.bytes() {
        h = splitmix(h ^ b as u64);
    }
    splitmix(h ^ index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ() {
        assert_ne!(derive(1, "map", 0), derive(1, "spawn", 0));
        assert_ne!(derive(1, "map", 0), derive(1, "map", 1));
        assert_eq!(derive(7, "delay", 3), derive(7, "delay", 3));
    }
}
