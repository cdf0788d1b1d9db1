//! Models of the device's non-deterministic behavior: uniform SEU bit flips
//! per MAC and an overclocking timing-error model, plus the deterministic
//! random streams that make every fault sequence reproducible.
//!
//! Randomness is counter-based: a stream is a pure function of
//! `(seed, epoch, sample, layer)`, so fault sequences do not depend on
//! worker count or execution order.

use thiserror::Error;

/// Width of the MAC accumulator; flippable bit positions live below this.
pub const ACC_BITS: u32 = 32;

#[derive(Debug, Error, PartialEq)]
pub enum FaultError {
    #[error("rate {0} outside [0, 1]")]
    BadRate(f64),
    #[error("bit range {low}..={high} invalid for a {ACC_BITS}-bit accumulator")]
    BadBitRange { low: u32, high: u32 },
    #[error("overclock model invalid: {0}")]
    BadOverclock(String),
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output function: a bijective avalanche mix.
#[inline(always)]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Identifies one independent substream: the forward pass of `sample` during
/// `epoch`, inside layer `layer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub epoch: u64,
    pub sample: u64,
    pub layer: u32,
}

impl StreamId {
    pub fn new(epoch: u64, sample: u64, layer: u32) -> Self {
        Self { epoch, sample, layer }
    }
}

/// Deterministic counter-based random stream. The n-th draw is a pure
/// function of `(seed, stream_id, n)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    state: u64,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        // Key derivation: absorb each field through the mixer so that
        // nearby ids land on unrelated points of the counter sequence.
        let mut k = mix64(seed ^ 0xa076_1d64_78bd_642f);
        k = mix64(k ^ id.epoch.wrapping_mul(0xe703_7ed1_a0b4_28db));
        k = mix64(k ^ id.sample.wrapping_mul(0x8ebc_6af0_9c88_c6e3));
        k = mix64(k ^ (id.layer as u64).wrapping_mul(0x5899_65cc_7537_4cc3));
        Self { state: k }
    }

    /// Derive a stream directly from a bare seed (weight init, shuffling).
    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, StreamId::new(0, 0, 0))
    }

    #[inline(always)]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, 1) with 53 random bits.
    #[inline(always)]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). Modulo bias is below 2^-57 for n <= 64.
    #[inline(always)]
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Uniform SEU model: each MAC result suffers a one-bit flip with
/// probability `rate`, at a position uniform over `bit_low..=bit_high`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitFlipModel {
    pub rate: f64,
    pub bit_low: u32,
    pub bit_high: u32,
}

impl BitFlipModel {
    pub fn new(rate: f64, bit_low: u32, bit_high: u32) -> Result<Self, FaultError> {
        if !(0.0..=1.0).contains(&rate) || rate.is_nan() {
            return Err(FaultError::BadRate(rate));
        }
        if bit_low > bit_high || bit_high >= ACC_BITS {
            return Err(FaultError::BadBitRange { low: bit_low, high: bit_high });
        }
        Ok(Self { rate, bit_low, bit_high })
    }

    /// Full-accumulator SEU model at the given per-MAC rate.
    pub fn uniform(rate: f64) -> Result<Self, FaultError> {
        Self::new(rate, 0, ACC_BITS - 1)
    }
}

/// Timing-error model for an overclocked device: no errors up to the safe
/// frequency, then an exponentially growing per-MAC error rate, with flips
/// biased toward high-order bits (long carry paths fail first).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverclockModel {
    /// Highest frequency (MHz) at which the device is error-free.
    pub f_safe: f64,
    /// Per-MAC error probability at `f_safe + 1` MHz.
    pub base_rate: f64,
    /// Exponential growth constant per MHz beyond the anchor point.
    pub growth: f64,
    /// Geometric weight >= 1 favoring high bits; 1 recovers the uniform model.
    pub msb_bias: f64,
}

impl OverclockModel {
    pub fn new(f_safe: f64, base_rate: f64, growth: f64, msb_bias: f64) -> Result<Self, FaultError> {
        if !(f_safe > 0.0) {
            return Err(FaultError::BadOverclock(format!("f_safe {f_safe} must be positive")));
        }
        if !(0.0..=1.0).contains(&base_rate) || base_rate.is_nan() {
            return Err(FaultError::BadRate(base_rate));
        }
        if !(growth >= 0.0) {
            return Err(FaultError::BadOverclock(format!("growth {growth} must be >= 0")));
        }
        if !(msb_bias >= 1.0) {
            return Err(FaultError::BadOverclock(format!("msb_bias {msb_bias} must be >= 1")));
        }
        Ok(Self { f_safe, base_rate, growth, msb_bias })
    }

    /// Model anchored the way the studied device behaves: pick `growth` so
    /// that the rate hits `rate_at_f_hi` at `f_hi`, given `base_rate` at
    /// `f_safe + 1`.
    pub fn anchored(
        f_safe: f64,
        base_rate: f64,
        f_hi: f64,
        rate_at_f_hi: f64,
        msb_bias: f64,
    ) -> Result<Self, FaultError> {
        let span = f_hi - f_safe - 1.0;
        if !(span > 0.0) || rate_at_f_hi < base_rate {
            return Err(FaultError::BadOverclock(format!(
                "anchor ({f_hi} MHz, {rate_at_f_hi}) not above base ({}, {base_rate})",
                f_safe + 1.0
            )));
        }
        let growth = (rate_at_f_hi / base_rate).ln() / span;
        Self::new(f_safe, base_rate, growth, msb_bias)
    }
}

/// Per-MAC error probability at frequency `f` MHz: zero in the safe region,
/// exponential (capped at 1) beyond it. Nondecreasing in `f`.
pub fn overclock_error_rate(model: &OverclockModel, f: f64) -> f64 {
    if f <= model.f_safe {
        0.0
    } else {
        (model.base_rate * (model.growth * (f - model.f_safe - 1.0)).exp()).min(1.0)
    }
}

/// How flipped bit positions are distributed within the flippable range.
#[derive(Debug, Clone, PartialEq)]
enum BitPicker {
    Uniform { low: u32, span: u64 },
    /// Geometric profile: P(position low + k) proportional to bias^k.
    Weighted { low: u32, cdf: Vec<f64> },
}

impl BitPicker {
    fn uniform(low: u32, high: u32) -> Self {
        Self::Uniform { low, span: (high - low + 1) as u64 }
    }

    fn geometric(low: u32, high: u32, bias: f64) -> Self {
        if bias == 1.0 {
            return Self::uniform(low, high);
        }
        let n = (high - low + 1) as usize;
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        for k in 0..n {
            acc += bias.powi(k as i32);
            cdf.push(acc);
        }
        let total = acc;
        for c in &mut cdf {
            *c /= total;
        }
        Self::Weighted { low, cdf }
    }

    #[inline]
    fn pick(&self, rng: &mut RngStream) -> u32 {
        match self {
            Self::Uniform { low, span } => low + rng.next_below(*span) as u32,
            Self::Weighted { low, cdf } => {
                let u = rng.next_f64();
                let k = cdf.partition_point(|&c| c <= u);
                low + (k.min(cdf.len() - 1)) as u32
            }
        }
    }

    /// Probability of each position in the flippable range, low bit first.
    fn distribution(&self) -> Vec<f64> {
        match self {
            Self::Uniform { span, .. } => vec![1.0 / *span as f64; *span as usize],
            Self::Weighted { cdf, .. } => {
                let mut prev = 0.0;
                cdf.iter()
                    .map(|&c| {
                        let p = c - prev;
                        prev = c;
                        p
                    })
                    .collect()
            }
        }
    }
}

/// Resolved per-MAC fault sampler: one Bernoulli(rate) trial per MAC, then a
/// bit position from the configured profile.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipSampler {
    rate: f64,
    /// Bernoulli threshold on a raw u64 draw; u64::MAX means certain flip.
    threshold: u64,
    bit_low: u32,
    bit_high: u32,
    picker: BitPicker,
}

impl FlipSampler {
    fn new(rate: f64, bit_low: u32, bit_high: u32, picker: BitPicker) -> Self {
        let threshold = if rate >= 1.0 {
            u64::MAX
        } else {
            // rate * 2^64, computed without overflowing f64->u64 conversion
            (rate * (1u64 << 32) as f64 * (1u64 << 32) as f64) as u64
        };
        Self { rate, threshold, bit_low, bit_high, picker }
    }

    /// Sampler that never flips.
    pub fn off() -> Self {
        Self::new(0.0, 0, ACC_BITS - 1, BitPicker::uniform(0, ACC_BITS - 1))
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn bit_range(&self) -> (u32, u32) {
        (self.bit_low, self.bit_high)
    }

    /// Declared bit-position probabilities over `bit_low..=bit_high`.
    pub fn bit_distribution(&self) -> Vec<f64> {
        self.picker.distribution()
    }

    pub fn is_off(&self) -> bool {
        self.threshold == 0
    }

    /// One per-MAC trial: `Some(bit)` with probability `rate`, else `None`.
    #[inline(always)]
    pub fn sample_flip(&self, rng: &mut RngStream) -> Option<u32> {
        if self.threshold == 0 {
            return None;
        }
        if self.threshold == u64::MAX || rng.next_u64() < self.threshold {
            Some(self.picker.pick(rng))
        } else {
            None
        }
    }
}

/// XOR one bit of the accumulator; everything else is untouched.
#[inline(always)]
pub fn apply_flip(acc: i32, bit: u32) -> i32 {
    debug_assert!(bit < ACC_BITS);
    acc ^ (1i32 << bit)
}

/// Per-MAC sampler for the uniform SEU model.
pub fn sample_flip(model: &BitFlipModel, rng: &mut RngStream) -> Option<u32> {
    FlipSampler::from(model).sample_flip(rng)
}

impl From<&BitFlipModel> for FlipSampler {
    fn from(m: &BitFlipModel) -> Self {
        FlipSampler::new(m.rate, m.bit_low, m.bit_high, BitPicker::uniform(m.bit_low, m.bit_high))
    }
}

/// Resolve an overclock model at a concrete frequency into a per-MAC
/// sampler: rate from the exponential curve, bit positions geometrically
/// biased toward the MSB. `msb_bias = 1` reduces to the uniform SEU model.
pub fn overclock_to_bitflip(model: &OverclockModel, f: f64) -> FlipSampler {
    let rate = overclock_error_rate(model, f);
    FlipSampler::new(rate, 0, ACC_BITS - 1, BitPicker::geometric(0, ACC_BITS - 1, model.msb_bias))
}

/// Fault behavior attached to a simulated device.
#[derive(Debug, Clone, PartialEq)]
pub enum FaultModel {
    /// Bit-exact device.
    None,
    /// Uniform SEU flips.
    Seu(BitFlipModel),
    /// Overclock timing errors at a concrete clock frequency (MHz).
    Overclock { model: OverclockModel, freq_mhz: f64 },
}

impl FaultModel {
    pub fn sampler(&self) -> FlipSampler {
        match self {
            Self::None => FlipSampler::off(),
            Self::Seu(m) => FlipSampler::from(m),
            Self::Overclock { model, freq_mhz } => overclock_to_bitflip(model, *freq_mhz),
        }
    }

    /// Short human-readable form for logs and checkpoint metadata.
    pub fn describe(&self) -> String {
        match self {
            Self::None => "none".to_string(),
            Self::Seu(m) => format!("seu rate={} bits={}..={}", m.rate, m.bit_low, m.bit_high),
            Self::Overclock { model, freq_mhz } => format!(
                "overclock f={freq_mhz}MHz f_safe={} rate={} msb_bias={}",
                model.f_safe,
                overclock_error_rate(model, *freq_mhz),
                model.msb_bias
            ),
        }
    }
}
