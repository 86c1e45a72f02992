//! Discrete coding distributions over integer symbols.
//!
//! A model probability function over the integers is quantized to a
//! frequency table summing to exactly 2^16. Support is the model's high
//! mass region intersected with [-255, 255], trimmed at both ends to
//! symbols whose rounded frequency is at least 1 (keeping near-zero tails
//! would smear probability and cost measurable rate at large sigma).
//! Values outside the table are escaped: a binary flag at probability
//! 1/2^16 followed by the value in 16 raw bits, so nothing is ever
//! uncodable and the in-range overhead is about 2e-5 bits per symbol.

use super::range::{RangeDecoder, RangeEncoder, TOTAL};
use crate::error::{Error, Result};

/// Hard clamp on tabulated symbol magnitude; larger residuals escape.
pub const MAX_SYMBOL: i64 = 255;
const ESCAPE_FREQ: u32 = 1;
const IN_RANGE_FREQ: u32 = TOTAL - ESCAPE_FREQ;
const ESCAPE_BIAS: i64 = 1 << 15;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Probability a Gaussian assigns to the unit box around integer k.
pub fn gaussian_box_prob(k: f64, mu: f64, sigma: f64) -> f64 {
    let s = sigma.max(1e-4);
    // Symmetric form: evaluating at |k - mu| keeps the subtraction of two
    // nearly-equal tails out of the far tail where erfc underflows.
    let u = (k - mu).abs();
    normal_cdf((0.5 - u) / s) - normal_cdf((-0.5 - u) / s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodingDistribution {
    offset: i64,
    freqs: Vec<u32>,
    cums: Vec<u32>,
}

impl CodingDistribution {
    /// Quantizes per-integer probabilities for symbols offset..offset+n.
    /// Probabilities need not be normalized; zero rows collapse to a point
    /// mass at the offset.
    pub fn from_probs(offset: i64, probs: &[f64]) -> Self {
        assert!(!probs.is_empty(), "distribution needs at least one symbol");
        assert!(
            probs.iter().all(|p| p.is_finite() && *p >= 0.0),
            "probabilities must be finite and nonnegative"
        );
        let mass: f64 = probs.iter().sum();
        if mass <= 0.0 {
            return Self::point_mass(offset);
        }
        let scaled: Vec<f64> = probs.iter().map(|p| p / mass * TOTAL as f64).collect();
        // Trim both ends to symbols that keep a whole frequency count.
        let first = scaled.iter().position(|&s| s.round() >= 1.0);
        let last = scaled.iter().rposition(|&s| s.round() >= 1.0);
        let (first, last) = match (first, last) {
            (Some(f), Some(l)) => (f, l),
            _ => {
                let peak = scaled
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                (peak, peak)
            }
        };
        let kept = &scaled[first..=last];
        let mut freqs: Vec<u32> = kept.iter().map(|&s| (s.round() as u32).max(1)).collect();
        redistribute_to_total(&mut freqs, kept);
        Self::from_freqs(offset + first as i64, freqs)
    }

    /// Table for round(p * 2^16) frequencies already summing to 2^16.
    fn from_freqs(offset: i64, freqs: Vec<u32>) -> Self {
        debug_assert_eq!(freqs.iter().sum::<u32>(), TOTAL);
        debug_assert!(freqs.iter().all(|&f| f >= 1));
        let mut cums = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cums.push(0);
        for &f in &freqs {
            acc += f;
            cums.push(acc);
        }
        CodingDistribution { offset, freqs, cums }
    }

    fn point_mass(symbol: i64) -> Self {
        Self::from_freqs(symbol, vec![TOTAL])
    }

    /// Gaussian over integers with mean mu and scale sigma, supported on
    /// the +-40 sigma window intersected with [-255, 255].
    pub fn from_gaussian(mu: f64, sigma: f64) -> Self {
        let s = sigma.max(1e-4);
        let lo = ((mu - 40.0 * s).round() as i64).max(-MAX_SYMBOL);
        let hi = ((mu + 40.0 * s).round() as i64).min(MAX_SYMBOL);
        if lo > hi {
            return Self::point_mass(mu.round().clamp(-(MAX_SYMBOL as f64), MAX_SYMBOL as f64) as i64);
        }
        let probs: Vec<f64> =
            (lo..=hi).map(|k| gaussian_box_prob(k as f64, mu, s)).collect();
        Self::from_probs(lo, &probs)
    }

    /// Distribution from a cumulative function: p(k) = cdf(k+0.5) - cdf(k-0.5)
    /// for k in lo..=hi (both clamped to the tabulated symbol range).
    pub fn from_cdf_fn(lo: i64, hi: i64, cdf: impl Fn(f64) -> f64) -> Self {
        let lo = lo.max(-MAX_SYMBOL);
        let hi = hi.min(MAX_SYMBOL);
        assert!(lo <= hi, "empty support for cdf-derived distribution");
        let probs: Vec<f64> = (lo..=hi)
            .map(|k| (cdf(k as f64 + 0.5) - cdf(k as f64 - 0.5)).max(0.0))
            .collect();
        Self::from_probs(lo, &probs)
    }

    pub fn support(&self) -> (i64, i64) {
        (self.offset, self.offset + self.freqs.len() as i64 - 1)
    }

    fn index_of(&self, value: i64) -> Option<usize> {
        if value < self.offset {
            return None;
        }
        let idx = (value - self.offset) as usize;
        (idx < self.freqs.len()).then_some(idx)
    }

    pub fn encode_value(&self, enc: &mut RangeEncoder, value: i64) {
        match self.index_of(value) {
            Some(idx) => {
                enc.encode(0, IN_RANGE_FREQ, TOTAL);
                enc.encode(self.cums[idx], self.freqs[idx], TOTAL);
            }
            None => {
                let biased = value + ESCAPE_BIAS;
                assert!(
                    (0..1 << 16).contains(&biased),
                    "escaped symbol {value} outside 16-bit window"
                );
                enc.encode(IN_RANGE_FREQ, ESCAPE_FREQ, TOTAL);
                enc.encode_bits(biased as u32, 16);
            }
        }
    }

    pub fn decode_value(&self, dec: &mut RangeDecoder) -> Result<i64> {
        if dec.decode_target(TOTAL) < IN_RANGE_FREQ {
            dec.commit(0, IN_RANGE_FREQ, TOTAL)?;
            let target = dec.decode_target(TOTAL);
            let idx = self.cums.partition_point(|&c| c <= target) - 1;
            if idx >= self.freqs.len() {
                return Err(Error::corrupt(
                    dec.bytes_consumed(),
                    "decoded bucket outside frequency table",
                ));
            }
            dec.commit(self.cums[idx], self.freqs[idx], TOTAL)?;
            Ok(self.offset + idx as i64)
        } else {
            dec.commit(IN_RANGE_FREQ, ESCAPE_FREQ, TOTAL)?;
            Ok(dec.decode_bits(16)? as i64 - ESCAPE_BIAS)
        }
    }

    /// Exact information content the coder charges for `value`, in bits,
    /// including the in-range/escape flag.
    pub fn bits_for(&self, value: i64) -> f64 {
        let t = TOTAL as f64;
        match self.index_of(value) {
            Some(idx) => {
                -(IN_RANGE_FREQ as f64 / t).log2() - (self.freqs[idx] as f64 / t).log2()
            }
            None => -(ESCAPE_FREQ as f64 / t).log2() + 16.0,
        }
    }

    pub fn freq(&self, value: i64) -> u32 {
        self.index_of(value).map_or(0, |i| self.freqs[i])
    }
}

/// Largest-remainder rounding of freqs to sum exactly TOTAL, never pushing
/// an entry below 1. Ties break toward lower index, so the result does not
/// depend on iteration order of any map.
fn redistribute_to_total(freqs: &mut [u32], scaled: &[f64]) {
    let sum: i64 = freqs.iter().map(|&f| f as i64).sum();
    let mut excess = sum - TOTAL as i64;
    if excess == 0 {
        return;
    }
    let mut order: Vec<usize> = (0..freqs.len()).collect();
    if excess > 0 {
        // Shave from entries whose rounding gained the most (smallest
        // fractional remainder scaled - floor is not what we want here;
        // use scaled - freq: most negative means most over-assigned).
        order.sort_by(|&a, &b| {
            let ra = scaled[a] - freqs[a] as f64;
            let rb = scaled[b] - freqs[b] as f64;
            ra.total_cmp(&rb).then(a.cmp(&b))
        });
        let mut i = 0;
        while excess > 0 {
            let idx = order[i % order.len()];
            if freqs[idx] > 1 {
                freqs[idx] -= 1;
                excess -= 1;
            }
            i += 1;
            assert!(
                i < order.len() * (TOTAL as usize),
                "cannot renormalize: table too wide for total frequency"
            );
        }
    } else {
        order.sort_by(|&a, &b| {
            let ra = scaled[a] - freqs[a] as f64;
            let rb = scaled[b] - freqs[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut i = 0;
        while excess < 0 {
            let idx = order[i % order.len()];
            freqs[idx] += 1;
            excess += 1;
            i += 1;
        }
    }
}

/// Order-sensitive checksum over decoded symbol values (FNV-1a over the
/// low 32 bits of each). Appended to every coded chunk so a parameter
/// mismatch between encoder and decoder is detected instead of producing
/// silently wrong pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymbolChecksum {
    state: u32,
}

impl Default for SymbolChecksum {
    fn default() -> Self {
        Self::new()
    }
}

impl SymbolChecksum {
    pub fn new() -> Self {
        SymbolChecksum { state: 0x811C_9DC5 }
    }

    pub fn update(&mut self, value: i64) {
        self.state = (self.state ^ (value as u32)).wrapping_mul(0x0100_0193);
    }

    pub fn value(&self) -> u32 {
        self.state
    }
}
