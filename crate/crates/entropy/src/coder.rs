//! Byte-oriented range coder.
//!
//! The state is a 32-bit range and a 33-bit low end; carries out of the low end
//! are resolved with a cache byte plus a run of pending `0xFF` bytes, so the range
//! never has to be truncated to avoid a carry. Renormalization keeps the range at or
//! above 2^24, which is what allows tables of up to 24 bits of precision.
//!
//! Only integer arithmetic is used, so output bytes are identical on every
//! platform.

use crate::cdf::{CdfTable, CdfView};
use crate::error::{EntropyError, Result};

const TOP: u32 = 1 << 24;
const RAW_CHUNK_BITS: u32 = 16;
const ESCAPE_BITS: u32 = 32;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    skip_first: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            skip_first: true,
            out: Vec::new(),
        }
    }

    /// Narrows the interval to `[start, start + freq)` out of `2^precision`.
    /// The topmost bin keeps the rounding remainder of the range.
    #[inline]
    pub fn encode(&mut self, start: u32, freq: u32, precision: u32) {
        debug_assert!(freq > 0);
        let r = self.range >> precision;
        self.low += r as u64 * start as u64;
        self.range = if start + freq == 1 << precision {
            self.range - r * start
        } else {
            r * freq
        };
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Appends the low `bits` bits of `value` with uniform probability.
    pub fn encode_raw(&mut self, value: u32, bits: u32) {
        let mut remaining = bits;
        while remaining > 0 {
            let n = remaining.min(RAW_CHUNK_BITS);
            remaining -= n;
            let chunk = (value >> remaining) & ((1 << n) - 1);
            self.encode(chunk, 1, n);
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                if self.skip_first {
                    // The leading byte is always zero and never receives a carry.
                    debug_assert_eq!(byte.wrapping_add(carry), 0);
                    self.skip_first = false;
                } else {
                    self.out.push(byte.wrapping_add(carry));
                }
                byte = 0xFF;
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

    /// Settles on the point of the final interval with the most trailing zero
    /// bits, flushes it, and drops trailing zero bytes (the decoder reads zeros
    /// past the end).
    pub fn finish(mut self) -> Vec<u8> {
        let end = self.low + self.range as u64;
        for b in (0..=32u32).rev() {
            let mask = (1u64 << b) - 1;
            let v = (self.low + mask) & !mask;
            if v < end {
                self.low = v;
                break;
            }
        }
        for _ in 0..5 {
            self.shift_low();
        }
        while self.out.last() == Some(&0) {
            self.out.pop();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        let mut dec = Self {
            data,
            pos: 0,
            code: 0,
            range: u32::MAX,
        };
        for _ in 0..4 {
            dec.code = (dec.code << 8) | dec.next_byte() as u32;
        }
        dec
    }

    #[inline]
    fn next_byte(&mut self) -> u8 {
        let b = self.data.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Decodes one bin index of `cdf` (cumulative counts, precision bits).
    #[inline]
    pub fn decode(&mut self, cdf: &[u32], precision: u32) -> Result<usize> {
        let total = 1u32 << precision;
        let r = self.range >> precision;
        let target = (self.code / r).min(total - 1);
        let idx = cdf.partition_point(|&c| c <= target) - 1;
        let start = cdf[idx];
        let freq = cdf[idx + 1] - start;
        self.code -= r * start;
        self.range = if start + freq == total {
            self.range - r * start
        } else {
            r * freq
        };
        if self.code >= self.range {
            return Err(EntropyError::Corrupt("code value left the coding interval"));
        }
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte() as u32;
        }
        Ok(idx)
    }

    pub fn decode_raw(&mut self, bits: u32) -> Result<u32> {
        let mut value = 0u32;
        let mut remaining = bits;
        while remaining > 0 {
            let n = remaining.min(RAW_CHUNK_BITS);
            remaining -= n;
            let r = self.range >> n;
            let chunk = (self.code / r).min((1 << n) - 1);
            self.code -= r * chunk;
            self.range = if chunk + 1 == 1 << n {
                self.range - r * chunk
            } else {
                r
            };
            if self.code >= self.range {
                return Err(EntropyError::Corrupt("code value left the coding interval"));
            }
            while self.range < TOP {
                self.range <<= 8;
                self.code = (self.code << 8) | self.next_byte() as u32;
            }
            value = (value << n) | chunk;
        }
        Ok(value)
    }

    /// Fails if the stream holds bytes the decoder never consumed.
    pub fn finish(self) -> Result<()> {
        if self.data.len() > self.pos {
            Err(EntropyError::TrailingData(self.data.len() - self.pos))
        } else {
            Ok(())
        }
    }
}

#[inline]
pub(crate) fn encode_symbol(enc: &mut RangeEncoder, symbol: i32, table: &CdfView<'_>) -> Result<()> {
    let idx = symbol as i64 - table.offset as i64;
    if idx >= 0 && (idx as usize) < table.symbols() {
        let i = idx as usize;
        enc.encode(table.cdf[i], table.cdf[i + 1] - table.cdf[i], table.precision);
        return Ok(());
    }
    match table.escape_index() {
        Some(e) => {
            enc.encode(table.cdf[e], table.cdf[e + 1] - table.cdf[e], table.precision);
            enc.encode_raw(symbol as u32, ESCAPE_BITS);
            Ok(())
        }
        None => Err(EntropyError::SymbolOutOfRange {
            symbol,
            min: table.offset,
            max: table.max_symbol(),
        }),
    }
}

#[inline]
pub(crate) fn decode_symbol(dec: &mut RangeDecoder<'_>, table: &CdfView<'_>) -> Result<i32> {
    let idx = dec.decode(table.cdf, table.precision)?;
    if Some(idx) == table.escape_index() {
        let symbol = dec.decode_raw(ESCAPE_BITS)? as i32;
        if symbol >= table.offset && symbol <= table.max_symbol() {
            return Err(EntropyError::Corrupt("escaped symbol lies inside the table"));
        }
        Ok(symbol)
    } else {
        Ok(table.offset + idx as i32)
    }
}

/// Codes every symbol with the same table.
pub fn range_encode(symbols: &[i32], table: &CdfTable) -> Result<Vec<u8>> {
    let view = table.view();
    let mut enc = RangeEncoder::new();
    for &s in symbols {
        encode_symbol(&mut enc, s, &view)?;
    }
    Ok(enc.finish())
}

pub fn range_decode(data: &[u8], table: &CdfTable, n: usize) -> Result<Vec<i32>> {
    let view = table.view();
    let mut dec = RangeDecoder::new(data);
    let out = (0..n)
        .map(|_| decode_symbol(&mut dec, &view))
        .collect::<Result<Vec<_>>>()?;
    dec.finish()?;
    Ok(out)
}

/// Codes `symbols[i]` with `tables[indexes[i]]`.
pub fn encode_indexed(symbols: &[i32], indexes: &[u32], tables: &[CdfTable]) -> Result<Vec<u8>> {
    let views: Vec<_> = tables.iter().map(CdfTable::view).collect();
    encode_with_views(symbols, indexes, &views)
}

pub fn decode_indexed(data: &[u8], indexes: &[u32], tables: &[CdfTable]) -> Result<Vec<i32>> {
    let views: Vec<_> = tables.iter().map(CdfTable::view).collect();
    decode_with_views(data, indexes, &views)
}

pub(crate) fn encode_with_views(
    symbols: &[i32],
    indexes: &[u32],
    views: &[CdfView<'_>],
) -> Result<Vec<u8>> {
    if symbols.len() != indexes.len() {
        return Err(EntropyError::LengthMismatch {
            symbols: symbols.len(),
            indexes: indexes.len(),
        });
    }
    let mut enc = RangeEncoder::new();
    for (&s, &i) in symbols.iter().zip(indexes) {
        let view = views.get(i as usize).ok_or(EntropyError::TableIndexOutOfRange {
            index: i,
            tables: views.len(),
        })?;
        encode_symbol(&mut enc, s, view)?;
    }
    Ok(enc.finish())
}

pub(crate) fn decode_with_views(
    data: &[u8],
    indexes: &[u32],
    views: &[CdfView<'_>],
) -> Result<Vec<i32>> {
    let mut dec = RangeDecoder::new(data);
    let mut out = Vec::with_capacity(indexes.len());
    for &i in indexes {
        let view = views.get(i as usize).ok_or(EntropyError::TableIndexOutOfRange {
            index: i,
            tables: views.len(),
        })?;
        out.push(decode_symbol(&mut dec, view)?);
    }
    dec.finish()?;
    Ok(out)
}

/// Ideal code length in bits of `symbols` under the quantized tables, with each
/// escape charged its raw payload.
pub fn cross_entropy_bits(symbols: &[i32], indexes: &[u32], tables: &[CdfTable]) -> f64 {
    symbols
        .iter()
        .zip(indexes)
        .map(|(&s, &i)| {
            let t = &tables[i as usize];
            let p = t.probability(s);
            let raw = if t.count(s).is_none() { ESCAPE_BITS as f64 } else { 0.0 };
            -p.log2() + raw
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdf::{build_cdf, Density, TableParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_stream() {
        let t = CdfTable::uniform(4, 0, 16, false).unwrap();
        let bytes = range_encode(&[], &t).unwrap();
        assert!(bytes.len() <= 8);
        assert_eq!(range_decode(&bytes, &t, 0).unwrap(), Vec::<i32>::new());
    }

    #[test]
    fn uniform_256_costs_eight_bits_per_symbol() {
        let t = CdfTable::uniform(256, 0, 16, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let symbols: Vec<i32> = (0..10_000).map(|_| rng.random_range(0..256)).collect();
        let bytes = range_encode(&symbols, &t).unwrap();
        // entropy is exactly 8 bits per symbol
        let ideal = 10_000.0;
        assert!((bytes.len() as f64 - ideal).abs() <= 0.01 * ideal, "{}", bytes.len());
        assert_eq!(range_decode(&bytes, &t, symbols.len()).unwrap(), symbols);
    }

    #[test]
    fn round_trip_ten_thousand_gaussian_symbols() {
        let t = build_cdf(Density::Gaussian { mean: 0.0, scale: 2.5 }, &TableParams::default())
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let symbols: Vec<i32> = (0..10_000)
            .map(|_| {
                let u: f64 = rng.random::<f64>() + rng.random::<f64>() + rng.random::<f64>() - 1.5;
                (u * 5.0).round() as i32
            })
            .collect();
        let bytes = range_encode(&symbols, &t).unwrap();
        assert_eq!(range_decode(&bytes, &t, symbols.len()).unwrap(), symbols);
    }

    #[test]
    fn escapes_round_trip() {
        let t = build_cdf(Density::Gaussian { mean: 0.0, scale: 0.11 }, &TableParams::default())
            .unwrap();
        let symbols = vec![0, 0, 5, -70000, 0, i32::MAX, i32::MIN, 0];
        let bytes = range_encode(&symbols, &t).unwrap();
        assert_eq!(range_decode(&bytes, &t, symbols.len()).unwrap(), symbols);
    }

    #[test]
    fn out_of_range_without_escape_is_an_error() {
        let t = CdfTable::uniform(4, 0, 16, false).unwrap();
        assert_eq!(
            range_encode(&[1, 4], &t),
            Err(EntropyError::SymbolOutOfRange { symbol: 4, min: 0, max: 3 })
        );
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let t = CdfTable::uniform(4, 0, 16, false).unwrap();
        let mut bytes = range_encode(&[1, 2, 3], &t).unwrap();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6, 7, 8]);
        assert!(matches!(range_decode(&bytes, &t, 3), Err(EntropyError::TrailingData(_))));
    }

    #[test]
    fn high_precision_tables_round_trip() {
        let params = TableParams { precision: 24, ..Default::default() };
        let t = build_cdf(Density::Gaussian { mean: 0.3, scale: 40.0 }, &params).unwrap();
        let symbols: Vec<i32> = (-300..300).collect();
        let bytes = range_encode(&symbols, &t).unwrap();
        assert_eq!(range_decode(&bytes, &t, symbols.len()).unwrap(), symbols);
    }

    #[test]
    fn indexed_coding_checks_lengths() {
        let t = vec![CdfTable::uniform(4, 0, 16, false).unwrap()];
        assert!(matches!(
            encode_indexed(&[1, 2], &[0], &t),
            Err(EntropyError::LengthMismatch { .. })
        ));
        assert!(matches!(
            encode_indexed(&[1], &[1], &t),
            Err(EntropyError::TableIndexOutOfRange { .. })
        ));
    }
}
