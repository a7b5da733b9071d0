//! Counter-based random numbers.
//!
//! Every random draw in the engine is a pure function of a 64-bit key and a
//! counter, so results never depend on thread scheduling or on how many draws
//! other work items made. The mixer is SplitMix64 (Steele, Lea & Flood):
//! output `i` of the stream keyed `k` is `mix64(k + (i + 1) * GOLDEN_GAMMA)`.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a stream key from a seed, a domain tag and an index.
///
/// Distinct tags keep e.g. the camera stream and the asset-choice stream of
/// the same clip independent.
pub fn derive_key(seed: u64, tag: u64, index: u64) -> u64 {
    let a = mix64(seed.wrapping_add(GOLDEN_GAMMA));
    let b = mix64(a ^ tag.wrapping_mul(GOLDEN_GAMMA));
    mix64(b ^ index.wrapping_add(1).wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Domain tags for [`derive_key`].
pub mod tag {
    pub const CAMERA: u64 = 0x4341_4d45_5241;
    pub const CAMERA_JITTER: u64 = 0x4a49_5454_4552;
    pub const ASSET: u64 = 0x41_5353_4554;
    pub const BACKGROUND: u64 = 0x4247;
    pub const MOTION: u64 = 0x4d4f_5449_4f4e;
    pub const PROCEDURAL: u64 = 0x5052_4f43;
}

/// A keyed counter stream.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    pub fn keyed(seed: u64, tag: u64, index: u64) -> Self {
        Self::new(derive_key(seed, tag, index))
    }

    /// The `i`-th output of this stream, independent of the cursor.
    #[inline]
    pub fn at(&self, i: u64) -> u64 {
        mix64(self.key.wrapping_add(i.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = self.at(self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`; returns `lo` exactly when `lo == hi`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` (Lemire's multiply-shift; `n > 0`).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            let m = (x as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Standard normal draw (Box–Muller, one value per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
