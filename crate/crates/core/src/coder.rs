//! Range coder over 16-bit integer frequency tables.
//!
//! The encoder keeps a 56-bit window in a `u64` (`low`) with one extra carry
//! bit, and renormalizes a byte at a time once the range drops below 2^48.
//! Pending `0xFF` bytes absorb carries. Because the table total is exactly
//! 2^16, the per-symbol scaling `range >> 16` loses less than 2^-32 of the
//! range.

use crate::error::{Error, Result};

pub const TOTAL_BITS: u32 = 16;
pub const TOTAL: u32 = 1 << TOTAL_BITS;

/// Largest `log2(p / q)` for a normalized pmf `p` and its quantization `q`:
/// every bin keeps at least `p·(TOTAL − 256)` counts.
pub const MAX_QUANTIZATION_LOSS_BITS: f64 = 0.005_646_563_141_142_043;

const WINDOW_BITS: u32 = 56;
const WINDOW_MASK: u64 = (1 << WINDOW_BITS) - 1;
const BOTTOM: u64 = 1 << (WINDOW_BITS - 8);
const TOP_BYTE_SHIFT: u32 = WINDOW_BITS - 8;
const WINDOW_BYTES: usize = (WINDOW_BITS / 8) as usize;
/// Reads past the end of a payload beyond this many bytes mean truncation.
const MAX_OVERREAD: usize = WINDOW_BYTES + 1;

/// 256 frequencies summing to [`TOTAL`], each at least 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreqTable {
    freq: [u32; 256],
    cum: [u32; 257],
}

impl FreqTable {
    pub fn from_frequencies(freq: [u32; 256]) -> Result<Self> {
        if freq.contains(&0) {
            return Err(Error::InvalidArgument("zero frequency in table".into()));
        }
        let mut cum = [0u32; 257];
        for (i, &f) in freq.iter().enumerate() {
            cum[i + 1] = cum[i] + f;
        }
        if cum[256] != TOTAL {
            return Err(Error::InvalidArgument(format!("frequencies sum to {}", cum[256])));
        }
        Ok(FreqTable { freq, cum })
    }

    pub fn freq(&self, symbol: u8) -> u32 {
        self.freq[symbol as usize]
    }

    pub fn cum(&self, symbol: u8) -> u32 {
        self.cum[symbol as usize]
    }

    pub fn frequencies(&self) -> &[u32; 256] {
        &self.freq
    }

    /// Ideal code length of `symbol` under this table.
    pub fn bits(&self, symbol: u8) -> f64 {
        TOTAL_BITS as f64 - (self.freq(symbol) as f64).log2()
    }

    fn lookup(&self, target: u32) -> u8 {
        // last index with cum[i] <= target
        (self.cum.partition_point(|&c| c <= target) - 1) as u8
    }
}

/// Quantizes a pmf to a [`FreqTable`].
///
/// Every bin first receives one count; the remaining `TOTAL − 256` counts
/// are apportioned by largest remainder, ties going to the smaller symbol.
pub fn quantize_pmf(pmf: &[f64; 256]) -> Result<FreqTable> {
    if let Some(p) = pmf.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidArgument(format!("invalid pmf entry {p}")));
    }
    let sum: f64 = pmf.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!("pmf sums to {sum}")));
    }
    let spare = (TOTAL - 256) as f64;
    let factor = spare / sum;
    let mut freq = [1u32; 256];
    // Remainders are non-negative, so their bit patterns order like the
    // values; the low byte breaks ties toward the smaller symbol.
    let mut keys = [0u128; 256];
    let mut assigned = 0u32;
    for v in 0..256 {
        let share = pmf[v] * factor;
        // truncation is floor for non-negative shares
        let whole = share as u32;
        freq[v] += whole;
        assigned += whole;
        let rem = share - whole as f64;
        keys[v] = !(((rem.to_bits() as u128) << 8) | (255 - v) as u128);
    }
    let leftover = (TOTAL - 256).saturating_sub(assigned) as usize;
    if leftover > 0 {
        if leftover < 256 {
            keys.select_nth_unstable(leftover);
        }
        for &k in keys.iter().take(leftover) {
            freq[255 - (!k & 0xFF) as usize] += 1;
        }
    }
    FreqTable::from_frequencies(freq)
}

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u64,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
    symbols: u64,
    finished: bool,
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
            range: WINDOW_MASK,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
            symbols: 0,
            finished: false,
        }
    }

    pub fn symbols(&self) -> u64 {
        self.symbols
    }

    pub fn encode(&mut self, table: &FreqTable, symbol: u8) -> Result<()> {
        if self.finished {
            return Err(Error::Coder("encode after finish".into()));
        }
        let r = self.range >> TOTAL_BITS;
        self.low += r * table.cum(symbol) as u64;
        self.range = r * table.freq(symbol) as u64;
        while self.range < BOTTOM {
            self.range <<= 8;
            self.shift_low();
        }
        self.symbols += 1;
        Ok(())
    }

    fn shift_low(&mut self) {
        let carry = self.low >> WINDOW_BITS != 0;
        if self.low & WINDOW_MASK < (0xFF << TOP_BYTE_SHIFT) || carry {
            let c = carry as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(c));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> TOP_BYTE_SHIFT) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low << 8) & WINDOW_MASK;
    }

    /// Flushes the shortest tail that pins the final interval and returns the
    /// payload. A second call is an error.
    pub fn finish(&mut self) -> Result<Vec<u8>> {
        if self.finished {
            return Err(Error::Coder("finish called twice".into()));
        }
        self.finished = true;
        // Round low up to a multiple of 2^48 inside [low, low + range); the
        // decoder supplies zeros for the bits below.
        let step = BOTTOM;
        self.low = (self.low + step - 1) & !(step - 1);
        self.shift_low();
        self.shift_low();
        let mut out = std::mem::take(&mut self.out);
        // The first emitted byte is the integer part of the code value.
        debug_assert_eq!(out.first(), Some(&0));
        out.remove(0);
        Ok(out)
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u64,
    range: u64,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = RangeDecoder {
            data,
            pos: 0,
            code: 0,
            range: WINDOW_MASK,
        };
        for _ in 0..WINDOW_BYTES {
            d.code = (d.code << 8) | d.next_byte()? as u64;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = self.data.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        if self.pos > self.data.len() + MAX_OVERREAD {
            return Err(Error::Coder("payload truncated".into()));
        }
        Ok(b)
    }

    pub fn decode(&mut self, table: &FreqTable) -> Result<u8> {
        if self.code >= self.range {
            return Err(Error::Coder("corrupt payload".into()));
        }
        let r = self.range >> TOTAL_BITS;
        let target = self.code / r;
        if target >= TOTAL as u64 {
            return Err(Error::Coder("corrupt payload".into()));
        }
        let symbol = table.lookup(target as u32);
        self.code -= r * table.cum(symbol) as u64;
        self.range = r * table.freq(symbol) as u64;
        while self.range < BOTTOM {
            self.code = (self.code << 8) | self.next_byte()? as u64;
            self.range <<= 8;
        }
        Ok(symbol)
    }

    /// Bytes consumed so far, including zero padding past the end.
    pub fn position(&self) -> usize {
        self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform() -> FreqTable {
        quantize_pmf(&[1.0 / 256.0; 256]).unwrap()
    }

    #[test]
    fn uniform_pmf_quantizes_evenly() {
        assert!(uniform().frequencies().iter().all(|&f| f == 256));
    }

    #[test]
    fn point_mass_keeps_floor_of_one() {
        let mut pmf = [0.0; 256];
        pmf[0] = 1.0;
        let t = quantize_pmf(&pmf).unwrap();
        assert_eq!(t.freq(0), TOTAL - 255);
        assert!((1..=255).all(|v| t.freq(v) == 1));
    }

    #[test]
    fn negative_entry_is_rejected() {
        let mut pmf = [1.0 / 255.0; 256];
        pmf[3] = -1e-3;
        assert!(quantize_pmf(&pmf).is_err());
    }

    #[test]
    fn empty_stream_is_short() {
        let mut enc = RangeEncoder::new();
        assert!(enc.finish().unwrap().len() <= 8);
    }

    #[test]
    fn double_finish_fails() {
        let mut enc = RangeEncoder::new();
        enc.finish().unwrap();
        assert!(enc.finish().is_err());
        assert!(enc.encode(&uniform(), 1).is_err());
    }

    #[test]
    fn half_probability_symbols_cost_one_bit() {
        let mut freq = [1u32; 256];
        freq[7] = 32768;
        freq[8] = TOTAL - 32768 - 254;
        let t = FreqTable::from_frequencies(freq).unwrap();
        let mut enc = RangeEncoder::new();
        for _ in 0..1024 {
            enc.encode(&t, 7).unwrap();
        }
        let bytes = enc.finish().unwrap();
        assert!((128..=136).contains(&bytes.len()), "{}", bytes.len());
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for _ in 0..1024 {
            assert_eq!(dec.decode(&t).unwrap(), 7);
        }
    }

    #[test]
    fn truncation_is_detected_eventually() {
        let t = uniform();
        let mut enc = RangeEncoder::new();
        for i in 0..200u32 {
            enc.encode(&t, (i * 13) as u8).unwrap();
        }
        let bytes = enc.finish().unwrap();
        let mut dec = RangeDecoder::new(&bytes[..50]).unwrap();
        let res: Result<Vec<u8>> = (0..200).map(|_| dec.decode(&t)).collect();
        assert!(res.is_err());
    }
}
