//! Byte-renormalized range coder.
//!
//! 64-bit `low` with a one-byte carry cache, 32-bit `range`, renormalizing a
//! byte at a time once the range drops below 2²⁴. All probabilities reach
//! the coder as integers on a 16-bit grid, so encoder and decoder agree as
//! long as they are handed the same integers.
//!
//! Every finished stream ends with a 16-bit Fletcher checksum over the coded
//! symbols, which the decoder verifies in [`RangeDecoder::finish`].

use crate::{Error, Result};

pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;

const TOP: u32 = 1 << 24;

/// Maps a probability of `1` onto the 16-bit grid, clamped to
/// `[1, 65535]` so neither outcome is ever impossible.
pub fn quantize_prob(p_one: f64) -> u16 {
    if p_one.is_nan() {
        return (PROB_TOTAL / 2) as u16;
    }
    (p_one * f64::from(PROB_TOTAL)).round().clamp(1.0, f64::from(PROB_TOTAL - 1)) as u16
}

#[derive(Debug, Clone, Copy)]
struct Fletcher16 {
    a: u16,
    b: u16,
}

impl Fletcher16 {
    fn new() -> Self {
        Fletcher16 { a: 0, b: 0 }
    }

    fn push(&mut self, v: u32) {
        for byte in v.to_le_bytes() {
            self.a = (self.a + u16::from(byte)) % 255;
            self.b = (self.b + self.a) % 255;
        }
    }

    fn value(&self) -> u16 {
        (self.b << 8) | self.a
    }
}

/// Cumulative frequency table with total [`PROB_TOTAL`]; every symbol has
/// frequency at least 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    cumulative: Vec<u32>,
}

impl FrequencyTable {
    pub fn from_frequencies(freqs: &[u32]) -> Result<Self> {
        if freqs.is_empty() || freqs.iter().any(|&f| f == 0) {
            return Err(Error::Coder("frequencies must be non-empty and positive".into()));
        }
        let mut cumulative = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cumulative.push(0);
        for &f in freqs {
            acc = acc
                .checked_add(f)
                .ok_or_else(|| Error::Coder("frequency overflow".into()))?;
            cumulative.push(acc);
        }
        if acc != PROB_TOTAL {
            return Err(Error::Coder(format!("frequencies sum to {acc}, expected {PROB_TOTAL}")));
        }
        Ok(FrequencyTable { cumulative })
    }

    /// Quantizes non-negative weights: one count per symbol is reserved up
    /// front, the rest is split proportionally and the rounding remainder
    /// goes to the largest fractional parts (lowest index on ties).
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let n = weights.len();
        if n == 0 || n > PROB_TOTAL as usize {
            return Err(Error::Coder(format!("cannot build a table over {n} symbols")));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Coder("weights must be finite and non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        let spare = f64::from(PROB_TOTAL - n as u32);
        let mut freqs = Vec::with_capacity(n);
        let mut fractions = Vec::with_capacity(n);
        for &w in weights {
            let share = if sum > 0.0 { w / sum * spare } else { spare / n as f64 };
            let whole = share.floor();
            freqs.push(1 + whole as u32);
            fractions.push(share - whole);
        }
        let assigned: u32 = freqs.iter().sum();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| fractions[b].total_cmp(&fractions[a]).then(a.cmp(&b)));
        for &i in order.iter().cycle().take((PROB_TOTAL - assigned) as usize) {
            freqs[i] += 1;
        }
        Self::from_frequencies(&freqs)
    }

    pub fn len(&self) -> usize {
        self.cumulative.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn start(&self, symbol: usize) -> u32 {
        self.cumulative[symbol]
    }

    pub fn freq(&self, symbol: usize) -> u32 {
        self.cumulative[symbol + 1] - self.cumulative[symbol]
    }

    pub fn frequencies(&self) -> Vec<u32> {
        self.cumulative.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Symbol whose cumulative interval contains `count`.
    pub fn lookup(&self, count: u32) -> usize {
        self.cumulative.partition_point(|&c| c <= count) - 1
    }

    /// Ideal code length of `symbol` in bits.
    pub fn cost_bits(&self, symbol: usize) -> f64 {
        -(f64::from(self.freq(symbol)) / f64::from(PROB_TOTAL)).log2()
    }

    pub fn entropy_bits(&self) -> f64 {
        (0..self.len())
            .map(|s| f64::from(self.freq(s)) / f64::from(PROB_TOTAL) * self.cost_bits(s))
            .sum()
    }
}

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    // The first byte the carry cache releases is always zero and is dropped.
    skip_first: bool,
    out: Vec<u8>,
    check: Fletcher16,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            skip_first: true,
            out: Vec::new(),
            check: Fletcher16::new(),
        }
    }

    fn emit(&mut self, byte: u8) {
        if self.skip_first {
            debug_assert_eq!(byte, 0);
            self.skip_first = false;
        } else {
            self.out.push(byte);
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut pending = self.cache;
            loop {
                self.emit(pending.wrapping_add(carry));
                pending = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    fn normalize(&mut self) {
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Codes the interval `[start, start + freq)` out of `2^total_bits`.
    pub fn encode_interval(&mut self, start: u32, freq: u32, total_bits: u32) {
        debug_assert!(freq > 0 && start + freq <= 1 << total_bits && total_bits <= 16);
        let r = self.range >> total_bits;
        self.low += u64::from(r) * u64::from(start);
        self.range = r * freq;
        self.normalize();
    }

    pub fn encode_symbol(&mut self, symbol: usize, table: &FrequencyTable) {
        self.check.push(symbol as u32);
        self.encode_interval(table.start(symbol), table.freq(symbol), PROB_BITS);
    }

    /// `p_one` is a probability of `1` on the 16-bit grid.
    pub fn encode_bit(&mut self, bit: bool, p_one: u16) {
        debug_assert!(p_one > 0);
        self.check.push(u32::from(bit));
        let bound = (self.range >> PROB_BITS) * u32::from(p_one);
        if bit {
            self.range = bound;
        } else {
            self.low += u64::from(bound);
            self.range -= bound;
        }
        self.normalize();
    }

    /// Uniformly coded raw value of up to 32 bits.
    pub fn encode_raw(&mut self, value: u32, bits: u32) {
        debug_assert!(bits == 32 || value >> bits == 0);
        self.check.push(value);
        let mut remaining = bits;
        while remaining > 0 {
            let chunk = remaining.min(16);
            remaining -= chunk;
            let part = (value >> remaining) & ((1 << chunk) - 1);
            self.encode_interval(part, 1, chunk);
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        let c = self.check.value();
        self.out.extend_from_slice(&c.to_be_bytes());
        self.out
    }
}

pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    input: &'a [u8],
    pos: usize,
    expected_check: u16,
    check: Fletcher16,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(stream: &'a [u8]) -> Result<Self> {
        if stream.len() < 6 {
            return Err(Error::Truncated);
        }
        let (input, tail) = stream.split_at(stream.len() - 2);
        let mut d = RangeDecoder {
            code: 0,
            range: u32::MAX,
            input,
            pos: 0,
            expected_check: u16::from_be_bytes([tail[0], tail[1]]),
            check: Fletcher16::new(),
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | u32::from(d.next_byte()?);
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self.input.get(self.pos).ok_or(Error::Truncated)?;
        self.pos += 1;
        Ok(b)
    }

    fn normalize(&mut self) -> Result<()> {
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | u32::from(self.next_byte()?);
        }
        Ok(())
    }

    fn target(&mut self, total_bits: u32) -> Result<(u32, u32)> {
        let r = self.range >> total_bits;
        let count = self.code / r;
        if count >= 1 << total_bits {
            return Err(Error::Coder("code value outside the coding interval".into()));
        }
        Ok((r, count))
    }

    fn consume(&mut self, r: u32, start: u32, freq: u32) -> Result<()> {
        self.code -= r * start;
        self.range = r * freq;
        self.normalize()
    }

    pub fn decode_symbol(&mut self, table: &FrequencyTable) -> Result<usize> {
        let (r, count) = self.target(PROB_BITS)?;
        let symbol = table.lookup(count);
        self.consume(r, table.start(symbol), table.freq(symbol))?;
        self.check.push(symbol as u32);
        Ok(symbol)
    }

    pub fn decode_bit(&mut self, p_one: u16) -> Result<bool> {
        let bound = (self.range >> PROB_BITS) * u32::from(p_one);
        let bit = self.code < bound;
        if bit {
            self.range = bound;
        } else {
            self.code -= bound;
            self.range -= bound;
        }
        self.normalize()?;
        self.check.push(u32::from(bit));
        Ok(bit)
    }

    pub fn decode_raw(&mut self, bits: u32) -> Result<u32> {
        let mut value = 0u32;
        let mut remaining = bits;
        while remaining > 0 {
            let chunk = remaining.min(16);
            remaining -= chunk;
            let (r, part) = self.target(chunk)?;
            self.consume(r, part, 1)?;
            value |= part << remaining;
        }
        self.check.push(value);
        Ok(value)
    }

    /// Verifies that the whole stream was consumed and the checksum matches.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.input.len() {
            return Err(Error::Coder(format!(
                "{} trailing bytes after decoding",
                self.input.len() - self.pos
            )));
        }
        if self.check.value() != self.expected_check {
            return Err(Error::StreamChecksum);
        }
        Ok(())
    }
}

pub fn encode_symbols(symbols: &[usize], table: &FrequencyTable) -> Result<Vec<u8>> {
    let mut enc = RangeEncoder::new();
    for &s in symbols {
        if s >= table.len() {
            return Err(Error::Coder(format!("symbol {s} outside table of {}", table.len())));
        }
        enc.encode_symbol(s, table);
    }
    Ok(enc.finish())
}

pub fn decode_symbols(bytes: &[u8], n: usize, table: &FrequencyTable) -> Result<Vec<usize>> {
    let mut dec = RangeDecoder::new(bytes)?;
    let out = (0..n).map(|_| dec.decode_symbol(table)).collect::<Result<Vec<_>>>()?;
    dec.finish()?;
    Ok(out)
}

pub fn encode_bits(bits: &[bool], probs_of_one: &[f64]) -> Result<Vec<u8>> {
    if bits.len() != probs_of_one.len() {
        return Err(Error::Shape { expected: bits.len(), actual: probs_of_one.len() });
    }
    let mut enc = RangeEncoder::new();
    for (&b, &p) in bits.iter().zip(probs_of_one) {
        enc.encode_bit(b, quantize_prob(p));
    }
    Ok(enc.finish())
}

pub fn decode_bits(bytes: &[u8], n: usize, probs_of_one: &[f64]) -> Result<Vec<bool>> {
    if probs_of_one.len() != n {
        return Err(Error::Shape { expected: n, actual: probs_of_one.len() });
    }
    let mut dec = RangeDecoder::new(bytes)?;
    let out = probs_of_one
        .iter()
        .map(|&p| dec.decode_bit(quantize_prob(p)))
        .collect::<Result<Vec<_>>>()?;
    dec.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FLUSH_BYTES: usize = 6;

    #[test]
    fn empty_stream_is_flush_only() {
        let t = FrequencyTable::from_weights(&[1.0, 1.0]).unwrap();
        let bytes = encode_symbols(&[], &t).unwrap();
        assert_eq!(bytes.len(), FLUSH_BYTES);
        assert!(decode_symbols(&bytes, 0, &t).unwrap().is_empty());
        let bits = encode_bits(&[], &[]).unwrap();
        assert_eq!(bits, bytes);
    }

    #[test]
    fn eight_uniform_binary_symbols() {
        let t = FrequencyTable::from_weights(&[1.0, 1.0]).unwrap();
        let syms = [0, 1, 1, 0, 1, 0, 0, 1];
        let bytes = encode_symbols(&syms, &t).unwrap();
        assert!(bytes.len() * 8 <= 8 + 32 + 16 + 8);
        assert_eq!(decode_symbols(&bytes, 8, &t).unwrap(), syms);
    }

    #[test]
    fn skewed_binary_source_hits_entropy() {
        let h = -(0.9f64 * 0.9f64.log2() + 0.1 * 0.1f64.log2());
        assert!((h - 0.469).abs() < 5e-4);
        let t = FrequencyTable::from_weights(&[0.9, 0.1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let syms: Vec<usize> = (0..10_000).map(|_| usize::from(rng.gen_bool(0.1))).collect();
        let bytes = encode_symbols(&syms, &t).unwrap();
        let rate = (bytes.len() * 8) as f64 / 1e4;
        let empirical: f64 = syms.iter().map(|&s| t.cost_bits(s)).sum::<f64>() / 1e4;
        assert!((rate - h).abs() / h < 0.01 || rate <= empirical * 1.01 + 64.0 / 1e4, "rate {rate}");
        assert_eq!(decode_symbols(&bytes, syms.len(), &t).unwrap(), syms);
    }

    #[test]
    fn confident_bits() {
        let cost = -(0.99f64).log2();
        assert!((cost - 0.0145).abs() < 1e-4);
        let bits = vec![true; 512];
        let probs = vec![0.99; 512];
        let bytes = encode_bits(&bits, &probs).unwrap();
        let ideal = 512.0 * cost;
        assert!((bytes.len() * 8) as f64 <= ideal * 1.01 + 48.0 + 8.0, "{} bytes", bytes.len());
        assert_eq!(decode_bits(&bytes, 512, &probs).unwrap(), bits);
    }

    #[test]
    fn incompressible_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bits: Vec<bool> = (0..4096).map(|_| rng.gen()).collect();
        let probs = vec![0.5; 4096];
        let bytes = encode_bits(&bits, &probs).unwrap();
        assert!(bytes.len() * 8 <= 4096 + 48 + 8);
        assert_eq!(decode_bits(&bytes, 4096, &probs).unwrap(), bits);
    }

    #[test]
    fn adversarial_bits_cost_about_six_and_a_half_bits() {
        let per = -(0.01f64).log2();
        assert!((per - 6.644).abs() < 1e-3);
        let bits = vec![false; 1000];
        let probs = vec![0.99; 1000];
        let bytes = encode_bits(&bits, &probs).unwrap();
        let total = (bytes.len() * 8) as f64;
        assert!(total >= 1000.0 * per * 0.99 && total <= 1000.0 * per * 1.01 + 48.0, "{total} bits");
        assert_eq!(decode_bits(&bytes, 1000, &probs).unwrap(), bits);
    }

    #[test]
    fn saturated_probabilities_are_clamped() {
        assert_eq!(quantize_prob(0.0), 1);
        assert_eq!(quantize_prob(1.0), 65535);
        assert_eq!(quantize_prob(0.5), 32768);
        let bits = [true, false, true, false];
        let probs = [0.0, 1.0, 0.0, 1.0];
        let bytes = encode_bits(&bits, &probs).unwrap();
        assert_eq!(decode_bits(&bytes, 4, &probs).unwrap(), bits);
    }

    #[test]
    fn raw_values_roundtrip() {
        let mut enc = RangeEncoder::new();
        let vals = [0u32, 1, 0xdead_beef, u32::MAX, 12345];
        for &v in &vals {
            enc.encode_raw(v, 32);
        }
        enc.encode_raw(5, 3);
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &v in &vals {
            assert_eq!(dec.decode_raw(32).unwrap(), v);
        }
        assert_eq!(dec.decode_raw(3).unwrap(), 5);
        dec.finish().unwrap();
    }

    #[test]
    fn corruption_is_detected() {
        let t = FrequencyTable::from_weights(&[0.5, 0.3, 0.2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let syms: Vec<usize> = (0..500).map(|_| rng.gen_range(0..3)).collect();
        let bytes = encode_symbols(&syms, &t).unwrap();
        assert!(matches!(decode_symbols(&bytes[..bytes.len() - 12], 500, &t), Err(_)));
        let mut flipped = bytes.clone();
        flipped[10] ^= 0x40;
        assert!(decode_symbols(&flipped, 500, &t).is_err());
        let mut bad_check = bytes.clone();
        let last = bad_check.len() - 1;
        bad_check[last] ^= 1;
        assert!(matches!(decode_symbols(&bad_check, 500, &t), Err(Error::StreamChecksum)));
    }

    #[test]
    fn weights_quantize_to_full_total() {
        let t = FrequencyTable::from_weights(&[1e-12, 0.25, 0.5, 0.25, 1e-12]).unwrap();
        let f = t.frequencies();
        assert_eq!(f.iter().sum::<u32>(), PROB_TOTAL);
        assert!(f.iter().all(|&x| x >= 1));
        assert_eq!(f[0], f[4]);
        assert!(f[1].abs_diff(f[3]) <= 1);
        assert_eq!(t.lookup(0), 0);
        assert_eq!(t.lookup(PROB_TOTAL - 1), 4);
    }

    #[test]
    fn identical_inputs_identical_streams() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let probs: Vec<f64> = (0..2000).map(|_| rng.gen()).collect();
        let bits: Vec<bool> = probs.iter().map(|&p| rng.gen_bool(p)).collect();
        assert_eq!(encode_bits(&bits, &probs).unwrap(), encode_bits(&bits, &probs).unwrap());
    }

    proptest! {
        #[test]
        fn bit_roundtrip(pairs in proptest::collection::vec((any::<bool>(), 1u16..=65535), 0..300)) {
            let mut enc = RangeEncoder::new();
            for &(b, p) in &pairs {
                enc.encode_bit(b, p);
            }
            let bytes = enc.finish();
            let mut dec = RangeDecoder::new(&bytes).unwrap();
            for &(b, p) in &pairs {
                prop_assert_eq!(dec.decode_bit(p).unwrap(), b);
            }
            prop_assert!(dec.finish().is_ok());
        }

        #[test]
        fn symbol_roundtrip(
            weights in proptest::collection::vec(0.0f64..1.0, 1..40),
            picks in proptest::collection::vec(any::<u16>(), 0..300),
        ) {
            let t = FrequencyTable::from_weights(&weights).unwrap();
            let syms: Vec<usize> = picks.iter().map(|&p| p as usize % t.len()).collect();
            let bytes = encode_symbols(&syms, &t).unwrap();
            prop_assert_eq!(decode_symbols(&bytes, syms.len(), &t).unwrap(), syms);
        }
    }
}
