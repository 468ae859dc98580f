// Stateless 64-bit mixing used to make every simulated cell property a pure
// function of its coordinates.

#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    // SplitMix64 finalizer.
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
pub(crate) fn combine(acc: u64, word: u64) -> u64 {
    mix64(acc ^ mix64(word))
}

/// Uniform in `[0, 1)` from the top 53 bits.
#[inline]
pub(crate) fn unit(z: u64) -> f64 {
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_range_and_mean() {
        let n = 100_000u64;
        let mut sum = 0.0;
        for i in 0..n {
            let u = unit(mix64(i));
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        assert!((sum / n as f64 - 0.5).abs() < 0.01);
    }
}
