//! Reference range coder.
//!
//! 32-bit range with a 64-bit low register and carry propagation through a
//! cached byte (the LZMA construction). Streams start with one zero byte and
//! end with a four byte flush, so an empty stream is five zero bytes.
//! Out-of-table symbols are sent through an escape bin followed by an
//! order-0 Exp-Golomb code in equiprobable bits.

use super::cdf::CdfTable;
use super::{CoderId, SymbolCoder};
use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;
const MAX_ESCAPE_BITS: u32 = 31;
pub const EMPTY_STREAM: [u8; 5] = [0; 5];

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
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

    #[inline]
    pub fn encode(&mut self, start: u32, size: u32, total_bits: u32) {
        debug_assert!(size > 0);
        let r = self.range >> total_bits;
        self.low += r as u64 * start as u64;
        self.range = r * size;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    #[inline]
    pub fn encode_bit(&mut self, bit: bool) {
        self.encode(if bit { 1 << 15 } else { 0 }, 1 << 15, 16);
    }

    fn encode_escape(&mut self, magnitude: u32) {
        let v = magnitude as u64 + 1;
        let nbits = 63 - v.leading_zeros();
        for _ in 0..nbits {
            self.encode_bit(true);
        }
        self.encode_bit(false);
        for i in (0..nbits).rev() {
            self.encode_bit((v >> i) & 1 == 1);
        }
    }

    pub fn encode_symbol(&mut self, table: &CdfTable, symbol: i32) {
        let bin = table.bin_of(symbol);
        self.encode(table.cdf[bin], table.freq(bin), table.precision_bits);
        if bin == 0 {
            self.encode_escape((table.offset as i64 - symbol as i64 - 1) as u32);
        } else if bin == table.num_bins() - 1 {
            self.encode_escape((symbol as i64 - table.max_symbol() as i64 - 1) as u32);
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
    r: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        if data.len() < 5 {
            return Err(Error::Truncated(format!(
                "range coded stream of {} bytes is shorter than its 5 byte preamble",
                data.len()
            )));
        }
        let mut code = 0u32;
        for &b in &data[1..5] {
            code = (code << 8) | b as u32;
        }
        Ok(RangeDecoder {
            data,
            pos: 5,
            code,
            range: u32::MAX,
            r: 0,
        })
    }

    pub fn consumed(&self) -> usize {
        self.pos
    }

    #[inline]
    fn decode_freq(&mut self, total_bits: u32) -> u32 {
        self.r = self.range >> total_bits;
        (self.code / self.r).min((1 << total_bits) - 1)
    }

    #[inline]
    fn consume(&mut self, start: u32, size: u32) -> Result<()> {
        self.code = self.code.wrapping_sub(self.r * start);
        self.range = self.r * size;
        while self.range < TOP {
            let b = *self.data.get(self.pos).ok_or_else(|| {
                Error::Truncated(format!("range decoder ran past {} bytes", self.data.len()))
            })?;
            self.pos += 1;
            self.code = (self.code << 8) | b as u32;
            self.range <<= 8;
        }
        Ok(())
    }

    pub fn decode_bit(&mut self) -> Result<bool> {
        let v = self.decode_freq(16);
        let bit = v >= 1 << 15;
        self.consume(if bit { 1 << 15 } else { 0 }, 1 << 15)?;
        Ok(bit)
    }

    fn decode_escape(&mut self) -> Result<u32> {
        let mut nbits = 0;
        while self.decode_bit()? {
            nbits += 1;
            if nbits > MAX_ESCAPE_BITS {
                return Err(Error::Bitstream("escape code longer than 31 bits".into()));
            }
        }
        let mut v: u64 = 1;
        for _ in 0..nbits {
            v = (v << 1) | self.decode_bit()? as u64;
        }
        Ok((v - 1) as u32)
    }

    pub fn decode_symbol(&mut self, table: &CdfTable) -> Result<i32> {
        let v = self.decode_freq(table.precision_bits);
        // Largest bin whose start is <= v.
        let bin = table.cdf.partition_point(|&c| c <= v) - 1;
        let bin = bin.min(table.num_bins() - 1);
        self.consume(table.cdf[bin], table.freq(bin))?;
        let n = table.num_bins();
        let sym = if bin == 0 {
            table.offset as i64 - 1 - self.decode_escape()? as i64
        } else if bin == n - 1 {
            table.max_symbol() as i64 + 1 + self.decode_escape()? as i64
        } else {
            table.offset as i64 + bin as i64 - 1
        };
        i32::try_from(sym).map_err(|_| Error::Bitstream("escaped symbol overflows i32".into()))
    }
}

/// The reference coder, identified in bitstreams as [`CoderId::Reference`].
#[derive(Clone, Copy, Debug, Default)]
pub struct ReferenceCoder;

impl SymbolCoder for ReferenceCoder {
    fn id(&self) -> CoderId {
        CoderId::Reference
    }

    fn encode(&self, tables: &[CdfTable], table_index: &[u32], symbols: &[i32]) -> Result<Vec<u8>> {
        super::check_request(tables, table_index, symbols.len())?;
        let mut enc = RangeEncoder::new();
        for (&t, &s) in table_index.iter().zip(symbols) {
            enc.encode_symbol(&tables[t as usize], s);
        }
        Ok(enc.finish())
    }

    fn decode(&self, tables: &[CdfTable], table_index: &[u32], bytes: &[u8]) -> Result<Vec<i32>> {
        super::check_request(tables, table_index, table_index.len())?;
        let mut dec = RangeDecoder::new(bytes)?;
        table_index
            .iter()
            .map(|&t| dec.decode_symbol(&tables[t as usize]))
            .collect()
    }
}
