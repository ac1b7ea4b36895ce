//! Byte-oriented range coder driven by discretized Laplace tables.
//!
//! Each symbol is coded relative to `c = round(mu)`: offsets in
//! `[-ALPHABET_RADIUS, ALPHABET_RADIUS]` get a 16-bit frequency derived from
//! the same bin probabilities as [`super::laplace::bin_prob`]; anything else
//! codes an escape followed by an Elias-gamma magnitude in raw bits.

use super::laplace::bin_prob;
use crate::error::{Error, Result};

pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;
pub const ALPHABET_RADIUS: i64 = 64;
const SYMBOLS: usize = 2 * ALPHABET_RADIUS as usize + 1;
const ESCAPE: usize = SYMBOLS;
const TOP: u32 = 1 << 24;
/// Largest escaped offset magnitude; beyond this a value is rejected.
const MAX_ESCAPE: u64 = 1 << 40;

/// Cumulative frequency table for one `(mu, b)` pair; the last slot is the escape.
#[derive(Clone, Debug)]
pub struct FreqTable {
    center: i64,
    cum: [u32; SYMBOLS + 2],
}

impl FreqTable {
    pub fn new(mu: f64, b: f64) -> Self {
        let center = mu.round() as i64;
        let base = mu - center as f64;
        let slots = (SYMBOLS + 1) as u32;
        let budget = (TOTAL - slots) as f64;
        let mut freq = [1u32; SYMBOLS + 1];
        let mut mass = 0.0;
        for (k, f) in freq.iter_mut().take(SYMBOLS).enumerate() {
            let p = bin_prob(k as f64 - ALPHABET_RADIUS as f64 - base, b);
            mass += p;
            *f += (p * budget).floor() as u32;
        }
        freq[ESCAPE] += ((1.0 - mass).max(0.0) * budget).floor() as u32;
        let used: u32 = freq.iter().sum();
        let mode = (0..SYMBOLS).max_by_key(|&k| (freq[k], std::cmp::Reverse(k))).unwrap();
        freq[mode] += TOTAL - used;
        let mut cum = [0u32; SYMBOLS + 2];
        for k in 0..=SYMBOLS {
            cum[k + 1] = cum[k] + freq[k];
        }
        debug_assert_eq!(cum[SYMBOLS + 1], TOTAL);
        FreqTable { center, cum }
    }

    fn freq(&self, k: usize) -> (u32, u32) {
        (self.cum[k], self.cum[k + 1] - self.cum[k])
    }

    fn lookup(&self, target: u32) -> usize {
        // cum is non-decreasing; find the last k with cum[k] <= target
        self.cum.partition_point(|&c| c <= target) - 1
    }

    /// Bits this table charges for `value`, escape included.
    pub fn cost_bits(&self, value: i64) -> f64 {
        let d = value - self.center;
        let slot = |k: usize| (TOTAL as f64 / self.freq(k).1 as f64).log2();
        if d.abs() <= ALPHABET_RADIUS {
            slot((d + ALPHABET_RADIUS) as usize)
        } else {
            let n = (d.unsigned_abs() - ALPHABET_RADIUS as u64) as f64;
            slot(ESCAPE) + 1.0 + 2.0 * n.log2().floor() + 1.0
        }
    }
}

pub struct Encoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for Encoder {
    fn default() -> Self {
        Self::new()
    }
}

impl Encoder {
    pub fn new() -> Self {
        Encoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    fn encode_freq(&mut self, start: u32, freq: u32, bits: u32) {
        let r = self.range >> bits;
        self.low += r as u64 * start as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Codes `count` raw bits of `value`, most significant first.
    pub fn encode_bits(&mut self, value: u64, count: u32) {
        for i in (0..count).rev() {
            self.encode_freq(((value >> i) & 1) as u32, 1, 1);
        }
    }

    pub fn encode(&mut self, value: f64, table: &FreqTable) -> Result<()> {
        if !value.is_finite() || value.fract() != 0.0 {
            return Err(Error::InvalidInput(format!("cannot code non-integer symbol {value}")));
        }
        let d = value as i64 - table.center;
        if d.abs() <= ALPHABET_RADIUS {
            let (start, freq) = table.freq((d + ALPHABET_RADIUS) as usize);
            self.encode_freq(start, freq, PRECISION);
            return Ok(());
        }
        let n = d.unsigned_abs() - ALPHABET_RADIUS as u64;
        if n > MAX_ESCAPE {
            return Err(Error::InvalidInput(format!("symbol {value} is too far from its mean")));
        }
        let (start, freq) = table.freq(ESCAPE);
        self.encode_freq(start, freq, PRECISION);
        self.encode_bits((d < 0) as u64, 1);
        let width = 64 - n.leading_zeros();
        self.encode_bits(0, width - 1);
        self.encode_bits(n, width);
        Ok(())
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct Decoder<'a> {
    code: u32,
    range: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self> {
        if input.len() < 5 {
            return Err(Error::Bitstream {
                chunk: 0,
                reason: format!("range-coded stream of {} bytes is shorter than its 5-byte preamble", input.len()),
            });
        }
        let mut d = Decoder {
            code: 0,
            range: u32::MAX,
            input,
            pos: 0,
        };
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self.input.get(self.pos).ok_or_else(|| Error::Bitstream {
            chunk: 0,
            reason: "range-coded stream ended early".into(),
        })?;
        self.pos += 1;
        Ok(b)
    }

    fn decode_freq(&mut self, bits: u32, find: impl Fn(u32) -> (usize, u32, u32)) -> Result<usize> {
        let r = self.range >> bits;
        let target = (self.code / r).min((1 << bits) - 1);
        let (sym, start, freq) = find(target);
        self.code -= r * start;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(sym)
    }

    pub fn decode_bits(&mut self, count: u32) -> Result<u64> {
        let mut v = 0u64;
        for _ in 0..count {
            let bit = self.decode_freq(1, |t| (t as usize, t, 1))?;
            v = (v << 1) | bit as u64;
        }
        Ok(v)
    }

    pub fn decode(&mut self, table: &FreqTable) -> Result<f64> {
        let k = self.decode_freq(PRECISION, |t| {
            let k = table.lookup(t);
            let (start, freq) = table.freq(k);
            (k, start, freq)
        })?;
        if k != ESCAPE {
            return Ok((table.center + k as i64 - ALPHABET_RADIUS) as f64);
        }
        let negative = self.decode_bits(1)? == 1;
        let mut zeros = 0;
        while self.decode_bits(1)? == 0 {
            zeros += 1;
            if zeros > 63 {
                return Err(Error::Bitstream {
                    chunk: 0,
                    reason: "corrupt escape code".into(),
                });
            }
        }
        let n = (1u64 << zeros) | self.decode_bits(zeros)?;
        let d = (n + ALPHABET_RADIUS as u64) as i64;
        Ok((table.center + if negative { -d } else { d }) as f64)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }
}

/// Codes `symbols` with per-element Laplace `(mu, b)` into a fresh stream.
pub fn range_encode(symbols: &[f64], mu: &[f64], b: &[f64]) -> Result<Vec<u8>> {
    check_lengths(symbols.len(), mu.len(), b.len())?;
    let mut enc = Encoder::new();
    for i in 0..symbols.len() {
        enc.encode(symbols[i], &FreqTable::new(mu[i], b[i]))?;
    }
    Ok(enc.finish())
}

pub fn range_decode(stream: &[u8], mu: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_lengths(mu.len(), mu.len(), b.len())?;
    let mut dec = Decoder::new(stream)?;
    mu.iter().zip(b).map(|(&m, &s)| dec.decode(&FreqTable::new(m, s))).collect()
}

fn check_lengths(n: usize, m: usize, b: usize) -> Result<()> {
    if n != m || n != b {
        return Err(Error::Geometry(format!("{n} symbols with {m} locations and {b} scales")));
    }
    Ok(())
}
