//! Keyed counter-based generator for the degradation pipeline.
//!
//! The stream for `(seed, image_index, op_index)` is fully determined by the
//! following definition, so any implementation can reproduce it:
//!
//! ```text
//! γ        = 0x9E3779B97F4A7C15
//! mix(z)   = z ← (z ⊕ (z ≫ 30))·0xBF58476D1CE4E5B9
//!            z ← (z ⊕ (z ≫ 27))·0x94D049BB133111EB
//!            z ⊕ (z ≫ 31)                          (all arithmetic mod 2⁶⁴)
//! key      = mix(mix(mix(seed + γ) ⊕ (image_index + γ)) ⊕ (op_index + γ))
//! u64 #c   = mix(key + c·γ)                        for c = 1, 2, 3, ...
//! uniform  = (u64 ≫ 11) · 2⁻⁵³                     ∈ [0, 1)
//! normal   = √(−2 ln(1 − u₁)) · cos(2π u₂)         one draw per two uniforms
//! ```
//!
//! This is the SplitMix64 output function applied to a keyed counter.

pub const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyedStream {
    key: u64,
    counter: u64,
}

impl KeyedStream {
    pub fn new(seed: u64, image_index: u64, op_index: u64) -> Self {
        let k = mix64(seed.wrapping_add(GAMMA));
        let k = mix64(k ^ image_index.wrapping_add(GAMMA));
        let k = mix64(k ^ op_index.wrapping_add(GAMMA));
        Self { key: k, counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)` (returns `lo` when the range is degenerate).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        let u = self.uniform();
        if hi <= lo {
            lo
        } else {
            lo + (hi - lo) * u
        }
    }

    /// Uniform integer in the inclusive range `[lo, hi]`.
    pub fn int_in(&mut self, lo: u32, hi: u32) -> u32 {
        let u = self.uniform();
        if hi <= lo {
            return lo;
        }
        let span = (hi - lo) as f64 + 1.0;
        (lo + (u * span) as u32).min(hi)
    }

    /// Standard normal by Box–Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Index into `weights` drawn proportionally to the weights.
    pub fn weighted(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let t = self.uniform() * total;
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if t < acc {
                return i;
            }
        }
        weights.len().saturating_sub(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_outputs() {
        // SplitMix64 seeded with 0 yields mix(γ), mix(2γ), ...
        assert_eq!(mix64(GAMMA), 0xE220_A839_7B1D_CDAF);
        assert_eq!(mix64(GAMMA.wrapping_mul(2)), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn streams_are_keyed() {
        let a: Vec<u64> = {
            let mut s = KeyedStream::new(1, 2, 3);
            (0..4).map(|_| s.next_u64()).collect()
        };
        let mut again = KeyedStream::new(1, 2, 3);
        assert_eq!(a, (0..4).map(|_| again.next_u64()).collect::<Vec<_>>());
        for (s, i, o) in [(2, 2, 3), (1, 3, 3), (1, 2, 4)] {
            assert_ne!(KeyedStream::new(s, i, o).next_u64(), a[0]);
        }
    }

    #[test]
    fn uniform_and_normal_moments() {
        let mut s = KeyedStream::new(7, 0, 0);
        let n = 20_000;
        let u: Vec<f64> = (0..n).map(|_| s.uniform()).collect();
        assert!(u.iter().all(|&v| (0.0..1.0).contains(&v)));
        let mean = u.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01);
        let z: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let zm = z.iter().sum::<f64>() / n as f64;
        let zv = z.iter().map(|v| (v - zm).powi(2)).sum::<f64>() / n as f64;
        assert!(zm.abs() < 0.03 && (zv - 1.0).abs() < 0.05);
    }

    #[test]
    fn integer_and_weighted_draws_cover_range() {
        let mut s = KeyedStream::new(3, 1, 1);
        let mut seen = [0usize; 3];
        for _ in 0..3000 {
            let v = s.int_in(1, 3);
            seen[(v - 1) as usize] += 1;
        }
        assert!(seen.iter().all(|&c| c > 800));
        let mut counts = [0usize; 2];
        for _ in 0..4000 {
            counts[s.weighted(&[1.0, 3.0])] += 1;
        }
        assert!((counts[1] as f64 / 4000.0 - 0.75).abs() < 0.03);
    }
}
