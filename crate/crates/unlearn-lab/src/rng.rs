//! Pinned deterministic random number generation.
//!
//! Every random draw in the crate flows through [`SplitMix64`], the
//! published 64-bit generator with the state transition
//!
//! ```text
//! state += 0x9E3779B97F4A7C15
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! output = z ^ (z >> 31)
//! ```
//!
//! The algorithm is pinned (rather than delegated to an external generator
//! whose stream may change between library versions) so that a recorded seed
//! reproduces the exact same datasets, splits, batch orders, and noise
//! draws on any platform, including reimplementations in other languages.
//!
//! Independent sub-streams (dataset generation, forget/retain batch order,
//! relabeling, noise) are derived from a base seed plus a short text tag via
//! [`derive_seed`], an FNV-1a byte fold finished with the SplitMix64 output
//! mix.

/// SplitMix64 generator state.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_2: u64 = 0x94D0_49BB_1331_11EB;

/// The SplitMix64 output mix applied to an arbitrary word.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_2);
    z ^ (z >> 31)
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform f64 in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform f64 in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` via the multiply-shift range reduction.
    ///
    /// The residual bias is at most `n / 2^64`, negligible for the desk-scale
    /// ranges used here, and the method consumes exactly one output per call
    /// which keeps streams easy to reason about.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below requires a positive bound");
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Standard normal draw via the Box-Muller transform.
    ///
    /// Consumes exactly two uniform outputs per call; no internal caching,
    /// so the draw sequence depends only on the call sequence.
    pub fn next_gaussian(&mut self) -> f64 {
        // 1 - u in (0, 1] keeps the logarithm finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle in place.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}

/// Derive a decorrelated sub-seed from a base seed and a stream tag.
///
/// The tag bytes are folded FNV-1a style into `base`, then passed through
/// the SplitMix64 output mix so that nearby (base, tag) pairs map to
/// well-separated states.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;
    let mut h = base ^ 0xD6E8_FEB8_6659_FD93;
    for &b in tag.as_bytes() {
        h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    mix(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_published_reference_outputs() {
        // Known-answer vectors for the published SplitMix64 transition.
        let mut rng = SplitMix64::new(1234567);
        assert_eq!(rng.next_u64(), 6457827717110365317);
        assert_eq!(rng.next_u64(), 3203168211198807973);
        assert_eq!(rng.next_u64(), 9817491932198370423);
        assert_eq!(rng.next_u64(), 4593380528125082431);
        assert_eq!(rng.next_u64(), 16408922859458223821);

        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 16294208416658607535);
        assert_eq!(rng.next_u64(), 7960286522194355700);
        assert_eq!(rng.next_u64(), 487617019471545679);
    }

    #[test]
    fn next_f64_is_in_unit_interval() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..10_000 {
            let x = rng.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn gaussian_moments_are_approximately_standard() {
        let mut rng = SplitMix64::new(42);
        let n = 200_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng.next_gaussian();
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = SplitMix64::new(3);
        let mut xs: Vec<usize> = (0..100).collect();
        rng.shuffle(&mut xs);
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(xs, (0..100).collect::<Vec<_>>(), "seed 3 should move something");
    }

    #[test]
    fn derive_seed_separates_tags_and_bases() {
        let a = derive_seed(1, "forget-stream");
        let b = derive_seed(1, "retain-stream");
        let c = derive_seed(2, "forget-stream");
        assert_ne!(a, b);
        assert_ne!(a, c);
        // Stable across calls.
        assert_eq!(a, derive_seed(1, "forget-stream"));
    }

    #[test]
    fn next_below_stays_in_range_and_covers_values() {
        let mut rng = SplitMix64::new(11);
        let mut seen = [false; 7];
        for _ in 0..1000 {
            let v = rng.next_below(7) as usize;
            assert!(v < 7);
            seen[v] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
