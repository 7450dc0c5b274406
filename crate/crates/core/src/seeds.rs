/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent seed for sub-stream `stream` of `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    mix(base
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(mix(stream.wrapping_add(1))))
}

/// Seed for a nested path of stream ids, e.g. `(method, split)`.
pub fn derive_path(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(base, |acc, &s| derive_seed(acc, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ() {
        let a = derive_seed(0, 0);
        assert_ne!(a, derive_seed(0, 1));
        assert_ne!(a, derive_seed(1, 0));
        assert_eq!(a, derive_seed(0, 0));
        assert_ne!(derive_path(3, &[1, 2]), derive_path(3, &[2, 1]));
    }
}
