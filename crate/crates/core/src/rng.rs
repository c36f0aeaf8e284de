//! Portable pseudo-random number generation.
//!
//! Everything stochastic in this crate (parameter initialization, decoder
//! sampling) draws from [`Pcg32`], the PCG XSH-RR 64/32 generator. The
//! algorithm is fixed here — and named in the checkpoint format description —
//! so that a seed reproduces the same run on every platform and toolchain.
//! The implementation follows the reference C version: 64-bit LCG state with
//! multiplier 6364136223846793005 and an odd stream increment, output by
//! xorshift-high followed by a random rotate of the top bits.

/// Default stream used when only a single seed value is supplied.
const DEFAULT_STREAM: u64 = 0xda3e_39cb_94b9_5bdb;

const MULTIPLIER: u64 = 6_364_136_223_846_793_005;

/// PCG XSH-RR 64/32: 64 bits of state, 32-bit output.
#[derive(Debug, Clone)]
pub struct Pcg32 {
    state: u64,
    inc: u64,
}

impl Pcg32 {
    /// Seeds the generator from an initial state and a stream selector,
    /// mirroring the reference `pcg32_srandom` routine.
    pub fn new(initstate: u64, initseq: u64) -> Self {
        let mut rng = Pcg32 {
            state: 0,
            inc: (initseq << 1) | 1,
        };
        rng.next_u32();
        rng.state = rng.state.wrapping_add(initstate);
        rng.next_u32();
        rng
    }

    /// Seeds from a single value on the crate's default stream.
    pub fn seed(seed: u64) -> Self {
        Pcg32::new(seed, DEFAULT_STREAM)
    }

    /// Next 32 uniformly random bits.
    pub fn next_u32(&mut self) -> u32 {
        let oldstate = self.state;
        self.state = oldstate.wrapping_mul(MULTIPLIER).wrapping_add(self.inc);
        let xorshifted = (((oldstate >> 18) ^ oldstate) >> 27) as u32;
        let rot = (oldstate >> 59) as u32;
        xorshifted.rotate_right(rot)
    }

    /// Uniform draw from `[0, 1)` with 53 random mantissa bits.
    pub fn next_f64(&mut self) -> f64 {
        let hi = u64::from(self.next_u32());
        let lo = u64::from(self.next_u32());
        let bits = ((hi << 32) | lo) >> 11;
        bits as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Samples an index from an unnormalized discrete distribution.
    ///
    /// Weights must be non-negative, finite, and not all zero. The walk over
    /// the cumulative mass is sequential, so results are reproducible for a
    /// given seed regardless of platform.
    pub fn sample_index(&mut self, weights: &[f64]) -> usize {
        debug_assert!(!weights.is_empty());
        let total: f64 = weights.iter().sum();
        debug_assert!(total > 0.0 && total.is_finite());
        let target = self.next_f64() * total;
        let mut cumulative = 0.0;
        let mut last_positive = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                last_positive = i;
            }
            cumulative += w;
            if target < cumulative {
                return i;
            }
        }
        // Floating-point round-off can leave `target` at or past the final
        // cumulative value; fall back to the last index with positive mass.
        last_positive
    }
}
