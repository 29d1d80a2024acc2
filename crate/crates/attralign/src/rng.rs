//! Seeded pseudo-random streams.
//!
//! Every stochastic component draws from a named xoshiro256++ stream derived
//! from the run seed with splitmix64. Purpose names keep the streams
//! independent: reordering how often one purpose draws never perturbs another,
//! so runs are reproducible across platforms from a single `u64` seed.

/// Stream purposes. One stream per purpose per seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Parameter initialization.
    Init,
    /// Token sampling during generation.
    Sampling,
    /// Data shuffling between epochs.
    Shuffle,
    /// Synthetic corpus construction.
    Synth,
}

impl Purpose {
    fn tag(self) -> &'static str {
        match self {
            Purpose::Init => "init",
            Purpose::Sampling => "sampling",
            Purpose::Shuffle => "shuffle",
            Purpose::Synth => "synth",
        }
    }
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// xoshiro256++ generator seeded through splitmix64.
#[derive(Debug, Clone)]
pub struct Rng {
    state: [u64; 4],
}

impl Rng {
    /// Stream for `purpose` derived from `seed`.
    pub fn for_purpose(seed: u64, purpose: Purpose) -> Self {
        Self::from_tag(seed, purpose.tag())
    }

    /// Stream derived from `seed` and an arbitrary tag string.
    pub fn from_tag(seed: u64, tag: &str) -> Self {
        let mut sm = seed ^ fnv1a64(tag.as_bytes());
        let mut state = [0u64; 4];
        for slot in &mut state {
            *slot = splitmix64(&mut sm);
        }
        if state.iter().all(|&w| w == 0) {
            state[0] = 1;
        }
        Rng { state }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn next_f32(&mut self) -> f32 {
        self.next_f64() as f32
    }

    /// Unbiased uniform integer in [0, n).
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below(0)");
        let limit = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < limit {
                return v % n;
            }
        }
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = (self.next_f64()).max(1e-300);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            slice.swap(i, j);
        }
    }

    /// Sample an index from a probability vector. Cumulative sums run in f64;
    /// falls back to the last positive-mass index on rounding shortfall.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.next_f64();
        let mut cum = 0.0;
        let mut last = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                last = i;
                cum += p;
                if u < cum {
                    return i;
                }
            }
        }
        last
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::for_purpose(7, Purpose::Sampling);
        let mut b = Rng::for_purpose(7, Purpose::Sampling);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn purposes_are_independent_streams() {
        let mut a = Rng::for_purpose(7, Purpose::Sampling);
        let mut b = Rng::for_purpose(7, Purpose::Init);
        let same = (0..32).filter(|_| a.next_u64() == b.next_u64()).count();
        assert!(same < 2);
    }

    #[test]
    fn next_below_is_in_range() {
        let mut rng = Rng::for_purpose(3, Purpose::Shuffle);
        for _ in 0..1000 {
            assert!(rng.next_below(7) < 7);
        }
    }

    #[test]
    fn categorical_respects_zero_mass() {
        let mut rng = Rng::for_purpose(11, Purpose::Sampling);
        for _ in 0..200 {
            let i = rng.categorical(&[0.0, 0.5, 0.0, 0.5]);
            assert!(i == 1 || i == 3);
        }
    }

    #[test]
    fn normal_has_sane_moments() {
        let mut rng = Rng::for_purpose(5, Purpose::Init);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
