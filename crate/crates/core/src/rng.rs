//! Deterministic pseudo-random generation for synthetic clouds and query sets.
//!
//! Everything downstream of a seed must be reproducible bit-for-bit across
//! runs, thread counts and implementations, so the generator is pinned to
//! splitmix64 rather than whatever `rand` ships this year.

/// splitmix64 (Sebastiano Vigna's public-domain mixer).
///
/// State advances by the 64-bit golden-ratio constant and each output is the
/// finalized mix of the new state.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` from the top 53 bits of the next output.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        (self.next_u64() >> 11) as f64 * SCALE
    }

    /// Uniform in the closed interval `[lo, hi]` (degenerate `lo == hi` yields `lo`).
    #[inline]
    pub fn next_in_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.next_f64() * (hi - lo)
    }

    /// One pair of independent standard normals via the Box-Muller transform.
    ///
    /// Consumes exactly two uniform draws: with `u1 = 1 - next_f64()` (so the
    /// logarithm argument stays in `(0, 1]`) and `u2 = next_f64()`,
    /// `r = sqrt(-2 ln u1)` and the pair is `(r cos(2 pi u2), r sin(2 pi u2))`.
    #[inline]
    pub fn next_gaussian_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference outputs computed from the published algorithm definition.
    #[test]
    fn matches_reference_streams() {
        let cases: [(u64, [u64; 4]); 3] = [
            (
                0,
                [
                    0xe220a8397b1dcdaf,
                    0x6e789e6aa1b965f4,
                    0x06c45d188009454f,
                    0xf88bb8a8724c81ec,
                ],
            ),
            (
                1,
                [
                    0x910a2dec89025cc1,
                    0xbeeb8da1658eec67,
                    0xf893a2eefb32555e,
                    0x71c18690ee42c90b,
                ],
            ),
            (
                0xDEADBEEF,
                [
                    0x4adfb90f68c9eb9b,
                    0xde586a3141a10922,
                    0x021fbc2f8e1cfc1d,
                    0x7466ce737be16790,
                ],
            ),
        ];
        for (seed, expected) in cases {
            let mut rng = SplitMix64::new(seed);
            for want in expected {
                assert_eq!(rng.next_u64(), want, "seed {seed:#x}");
            }
        }
    }

    #[test]
    fn f64_mapping_uses_53_bits() {
        let mut rng = SplitMix64::new(42);
        // (0xbdd732262feb6e95 >> 11) * 2^-53, computed independently.
        assert_eq!(rng.next_f64(), 0.7415648787718233);
        for _ in 0..10_000 {
            let f = rng.next_f64();
            assert!((0.0..1.0).contains(&f));
        }
    }

    #[test]
    fn gaussian_pairs_are_finite_and_centered() {
        let mut rng = SplitMix64::new(7);
        let mut sum = 0.0;
        let n = 20_000;
        for _ in 0..n {
            let (a, b) = rng.next_gaussian_pair();
            assert!(a.is_finite() && b.is_finite());
            sum += a + b;
        }
        let mean = sum / (2 * n) as f64;
        assert!(mean.abs() < 0.02, "sample mean {mean} too far from 0");
    }
}
