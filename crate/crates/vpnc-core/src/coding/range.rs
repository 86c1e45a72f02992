//! Byte-oriented range coder with 16-bit frequency precision.
//!
//! The encoder keeps `low` in a u64 so a carry out of the 32-bit window
//! appears as bit 32 and is folded into the buffered byte chain (one cache
//! byte plus a run of pending 0xFF bytes that a carry flips to 0x00).
//! Streams therefore always begin with one 0x00 byte. The flush rounds
//! `low` up to the next multiple of 2^24 inside the final interval, so the
//! tail costs two bytes and the decoder zero-fills whatever it still needs.

use crate::error::{Error, Result};

/// Frequency tables must sum to exactly this.
pub const TOTAL: u32 = 1 << 16;
const HALF: u32 = TOTAL / 2;
const RENORM_LIMIT: u32 = 1 << 24;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder { low: 0, range: u32::MAX, cache: 0, pending: 1, out: Vec::new() }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            for _ in 0..self.pending {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
            }
            self.pending = 0;
            self.cache = (self.low >> 24) as u8;
        }
        self.pending += 1;
        self.low = (((self.low as u32) << 8) as u64) & 0xFFFF_FFFF;
    }

    /// Narrows the interval to the symbol spanning [cum, cum + freq) out of
    /// `total`. Every slice is exactly `(range / total) * freq`; the division
    /// remainder is dead space no code point enters, so a symbol's real cost
    /// equals its table cost to within renormalization granularity.
    pub fn encode(&mut self, cum: u32, freq: u32, total: u32) {
        debug_assert!(freq > 0, "zero-frequency symbol cannot be encoded");
        debug_assert!(cum + freq <= total, "symbol interval exceeds total");
        debug_assert!(total <= TOTAL, "frequency total exceeds coder precision");
        let r = self.range / total;
        self.low += (r as u64) * (cum as u64);
        self.range = r * freq;
        while self.range < RENORM_LIMIT {
            self.shift_low();
            self.range <<= 8;
        }
    }

    /// Encodes one bit at probability 1/2 (exactly one bit of payload).
    pub fn encode_bit(&mut self, bit: bool) {
        if bit {
            self.encode(HALF, HALF, TOTAL);
        } else {
            self.encode(0, HALF, TOTAL);
        }
    }

    /// Encodes `nbits` raw bits, most significant first.
    pub fn encode_bits(&mut self, value: u32, nbits: u32) {
        debug_assert!(nbits <= 32 && (nbits == 32 || value < (1u32 << nbits)));
        for i in (0..nbits).rev() {
            self.encode_bit((value >> i) & 1 == 1);
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        // Any point in [low, low + range) decodes correctly; range >= 2^24
        // after renormalization, so rounding up to a 2^24 boundary stays
        // inside and zeroes every byte below the top two. Two shifts push
        // those through the carry-pending chain (a single shift would drop
        // the top byte whenever it lands on 0xFF, which joins the pending
        // run instead of being emitted); the decoder zero-fills the rest.
        self.low = (self.low + (RENORM_LIMIT as u64 - 1)) & !(RENORM_LIMIT as u64 - 1);
        self.shift_low();
        self.shift_low();
        self.out
    }
}

pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    range: u32,
    code: u32,
    virtual_reads: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let mut d = RangeDecoder { bytes, pos: 0, range: u32::MAX, code: 0, virtual_reads: 0 };
        let lead = d.next_byte()?;
        if lead != 0 {
            return Err(Error::corrupt(0, "stream does not start with the 0x00 lead byte"));
        }
        for _ in 0..4 {
            let b = d.next_byte()?;
            d.code = (d.code << 8) | b as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        if self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            self.pos += 1;
            Ok(b)
        } else {
            // A well-formed stream never needs more than the init padding
            // plus the two flush bytes beyond what the encoder renormalized.
            self.virtual_reads += 1;
            if self.virtual_reads > 4 {
                Err(Error::corrupt(self.pos, "stream exhausted mid-symbol"))
            } else {
                Ok(0)
            }
        }
    }

    /// Returns the cumulative-frequency bucket the next symbol falls in.
    /// Follow up with `commit` using the located symbol's interval.
    pub fn decode_target(&mut self, total: u32) -> u32 {
        debug_assert!(total <= TOTAL);
        let r = self.range / total;
        ((self.code / r).min(total - 1)).min(total - 1)
    }

    /// Consumes the symbol interval chosen from a `decode_target` result.
    pub fn commit(&mut self, cum: u32, freq: u32, total: u32) -> Result<()> {
        let r = self.range / total;
        self.code -= r * cum;
        self.range = r * freq;
        while self.range < RENORM_LIMIT {
            let b = self.next_byte()?;
            self.code = (self.code << 8) | b as u32;
            self.range <<= 8;
        }
        Ok(())
    }

    pub fn decode_bit(&mut self) -> Result<bool> {
        let bit = self.decode_target(TOTAL) >= HALF;
        if bit {
            self.commit(HALF, HALF, TOTAL)?;
        } else {
            self.commit(0, HALF, TOTAL)?;
        }
        Ok(bit)
    }

    pub fn decode_bits(&mut self, nbits: u32) -> Result<u32> {
        let mut v = 0u32;
        for _ in 0..nbits {
            v = (v << 1) | self.decode_bit()? as u32;
        }
        Ok(v)
    }

    /// Bytes of real input consumed so far (virtual zero-fill excluded).
    pub fn bytes_consumed(&self) -> usize {
        self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_stream_is_two_zero_bytes() {
        let bytes = RangeEncoder::new().finish();
        assert_eq!(bytes, vec![0, 0]);
        RangeDecoder::new(&bytes).expect("empty stream must initialize a decoder");
    }

    #[test]
    fn thousand_coin_flips_cost_about_125_bytes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bits: Vec<bool> = (0..1000).map(|_| rng.gen()).collect();
        let mut enc = RangeEncoder::new();
        for &b in &bits {
            enc.encode_bit(b);
        }
        let bytes = enc.finish();
        assert!(
            (121..=129).contains(&bytes.len()),
            "1000 fair bits took {} bytes, expected 125 give or take 4",
            bytes.len()
        );
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &b in &bits {
            assert_eq!(dec.decode_bit().unwrap(), b);
        }
    }

    #[test]
    fn raw_bits_round_trip() {
        let mut enc = RangeEncoder::new();
        enc.encode_bits(0xBEEF, 16);
        enc.encode_bits(0, 1);
        enc.encode_bits(0x5, 3);
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        assert_eq!(dec.decode_bits(16).unwrap(), 0xBEEF);
        assert_eq!(dec.decode_bits(1).unwrap(), 0);
        assert_eq!(dec.decode_bits(3).unwrap(), 0x5);
    }

    #[test]
    fn skewed_distribution_compresses_near_entropy() {
        // p = [0.985, 0.015]: H = 0.1123 bits/symbol, 5000 symbols = 70 bytes.
        let freqs = [64553u32, 983];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let syms: Vec<usize> =
            (0..5000).map(|_| if rng.gen::<f64>() < 0.985 { 0 } else { 1 }).collect();
        let mut enc = RangeEncoder::new();
        for &s in &syms {
            let cum = if s == 0 { 0 } else { freqs[0] };
            enc.encode(cum, freqs[s], TOTAL);
        }
        let bytes = enc.finish();
        assert!(bytes.len() < 100, "skewed stream took {} bytes", bytes.len());
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &s in &syms {
            let t = dec.decode_target(TOTAL);
            let got = if t < freqs[0] { 0 } else { 1 };
            assert_eq!(got, s);
            let cum = if got == 0 { 0 } else { freqs[0] };
            dec.commit(cum, freqs[got], TOTAL).unwrap();
        }
    }

    #[test]
    fn random_tables_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let n_sym = rng.gen_range(2..40usize);
            let mut freqs: Vec<u32> = (0..n_sym).map(|_| rng.gen_range(1..1500)).collect();
            let sum: u32 = freqs.iter().sum();
            assert!(sum < TOTAL, "test table must leave headroom");
            *freqs.last_mut().unwrap() += TOTAL - sum;
            let cums: Vec<u32> = std::iter::once(0)
                .chain(freqs.iter().scan(0, |acc, &f| {
                    *acc += f;
                    Some(*acc)
                }))
                .collect();
            let syms: Vec<usize> = (0..400).map(|_| rng.gen_range(0..n_sym)).collect();
            let mut enc = RangeEncoder::new();
            for &s in &syms {
                enc.encode(cums[s], freqs[s], TOTAL);
            }
            let bytes = enc.finish();
            let mut dec = RangeDecoder::new(&bytes).unwrap();
            for &s in &syms {
                let t = dec.decode_target(TOTAL);
                let got = cums.partition_point(|&c| c <= t) - 1;
                assert_eq!(got, s, "symbol mismatch");
                dec.commit(cums[got], freqs[got], TOTAL).unwrap();
            }
        }
    }

    #[test]
    fn carry_heavy_pattern_round_trips() {
        // Repeatedly coding the top sliver drives low toward 0xFFFF... and
        // exercises carry propagation through pending 0xFF bytes.
        let pattern: Vec<u32> = (0..4000).map(|i| if i % 7 == 0 { 0 } else { 1 }).collect();
        let mut enc = RangeEncoder::new();
        for &s in &pattern {
            if s == 0 {
                enc.encode(0, 1, TOTAL);
            } else {
                enc.encode(1, TOTAL - 1, TOTAL);
            }
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &s in &pattern {
            let t = dec.decode_target(TOTAL);
            let got = if t < 1 { 0 } else { 1 };
            assert_eq!(got, s);
            if got == 0 {
                dec.commit(0, 1, TOTAL).unwrap();
            } else {
                dec.commit(1, TOTAL - 1, TOTAL).unwrap();
            }
        }
    }

    #[test]
    fn flush_transmits_a_top_byte_of_0xff() {
        // This exact table and symbol order leave the rounded flush point
        // with 0xFF in its top byte. A flush that defers that byte to the
        // carry-pending chain without draining it truncates the stream and
        // the final symbol decodes as a smaller one.
        let freqs: [u32; 17] = [
            365, 1491, 1417, 1248, 1437, 277, 389, 753, 292, 18, 1265, 373, 49, 1103, 1418, 565,
            53076,
        ];
        assert_eq!(freqs.iter().sum::<u32>(), TOTAL);
        let cums: Vec<u32> = std::iter::once(0)
            .chain(freqs.iter().scan(0, |acc, &f| {
                *acc += f;
                Some(*acc)
            }))
            .collect();
        let syms = [6usize, 16, 9, 9, 3, 13, 14, 4, 1, 9, 13, 11, 4, 11, 10, 9];
        let mut enc = RangeEncoder::new();
        for &s in &syms {
            enc.encode(cums[s], freqs[s], TOTAL);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &s in &syms {
            let t = dec.decode_target(TOTAL);
            let got = cums.partition_point(|&c| c <= t) - 1;
            assert_eq!(got, s, "symbol mismatch after the 0xFF-tail flush");
            dec.commit(cums[got], freqs[got], TOTAL).unwrap();
        }
    }

    #[test]
    fn short_streams_round_trip_across_tail_bytes() {
        // Short streams make the flush dominate; 2000 of them cover every
        // value of the final top byte many times over.
        let mut rng = ChaCha8Rng::seed_from_u64(0xF1A5);
        for stream in 0..2000 {
            let n_sym = rng.gen_range(2..40usize);
            let mut freqs: Vec<u32> = (0..n_sym).map(|_| rng.gen_range(1..1500)).collect();
            let sum: u32 = freqs.iter().sum();
            assert!(sum < TOTAL, "test table must leave headroom");
            *freqs.last_mut().unwrap() += TOTAL - sum;
            let cums: Vec<u32> = std::iter::once(0)
                .chain(freqs.iter().scan(0, |acc, &f| {
                    *acc += f;
                    Some(*acc)
                }))
                .collect();
            let syms: Vec<usize> =
                (0..rng.gen_range(1..60usize)).map(|_| rng.gen_range(0..n_sym)).collect();
            let mut enc = RangeEncoder::new();
            for &s in &syms {
                enc.encode(cums[s], freqs[s], TOTAL);
            }
            let bytes = enc.finish();
            let mut dec = RangeDecoder::new(&bytes).unwrap();
            for (i, &s) in syms.iter().enumerate() {
                let t = dec.decode_target(TOTAL);
                let got = cums.partition_point(|&c| c <= t) - 1;
                assert_eq!(got, s, "stream {stream} diverged at symbol {i}");
                dec.commit(cums[got], freqs[got], TOTAL).unwrap();
            }
        }
    }

    #[test]
    fn truncated_stream_reports_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bits: Vec<bool> = (0..4000).map(|_| rng.gen()).collect();
        let mut enc = RangeEncoder::new();
        for &b in &bits {
            enc.encode_bit(b);
        }
        let bytes = enc.finish();
        let cut = &bytes[..bytes.len() / 4];
        let mut dec = RangeDecoder::new(cut).unwrap();
        let mut errored = false;
        for _ in 0..4000 {
            if dec.decode_bit().is_err() {
                errored = true;
                break;
            }
        }
        assert!(errored, "decoding a truncated stream must fail before completing");
    }
}
