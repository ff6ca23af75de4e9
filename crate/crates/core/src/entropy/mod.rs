//! Entropy coding: integer CDF tables, the reference range coder, and the
//! flat-buffer boundary through which an external (native) coder plugs in.

pub mod cdf;
pub mod conformance;
pub mod external;
pub mod range;

use serde::{Deserialize, Serialize};

pub use cdf::{build_gaussian_cdf, gaussian_table, gaussian_table_range, CdfTable, DEFAULT_PRECISION};
pub use external::{handle_request, serve, ExternalCoder};
pub use range::{RangeDecoder, RangeEncoder, ReferenceCoder};

use crate::error::{Error, Result};

/// Which coder produced a stream; recorded in the sequence header.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoderId {
    Reference = 0,
    Native = 1,
}

impl CoderId {
    pub fn from_u8(v: u8) -> Result<CoderId> {
        match v {
            0 => Ok(CoderId::Reference),
            1 => Ok(CoderId::Native),
            _ => Err(Error::Bitstream(format!("unknown coder id {v}"))),
        }
    }
}

/// A lossless coder over symbols with per-symbol CDF tables.
///
/// `table_index[i]` selects the table for symbol `i`. Implementations must be
/// deterministic: identical inputs give identical bytes.
pub trait SymbolCoder: Send + Sync {
    fn id(&self) -> CoderId;
    fn encode(&self, tables: &[CdfTable], table_index: &[u32], symbols: &[i32]) -> Result<Vec<u8>>;
    fn decode(&self, tables: &[CdfTable], table_index: &[u32], bytes: &[u8]) -> Result<Vec<i32>>;
}

pub(crate) fn check_request(tables: &[CdfTable], table_index: &[u32], count: usize) -> Result<()> {
    if table_index.len() != count {
        return Err(Error::Config(format!(
            "{} table indices for {count} symbols",
            table_index.len()
        )));
    }
    if let Some(&bad) = table_index.iter().find(|&&t| t as usize >= tables.len()) {
        return Err(Error::Config(format!(
            "table index {bad} out of {} tables",
            tables.len()
        )));
    }
    Ok(())
}

/// Encodes with one table per symbol.
pub fn encode_symbols(coder: &dyn SymbolCoder, symbols: &[i32], tables: &[CdfTable]) -> Result<Vec<u8>> {
    let idx: Vec<u32> = (0..symbols.len() as u32).collect();
    coder.encode(tables, &idx, symbols)
}

pub fn decode_symbols(coder: &dyn SymbolCoder, bytes: &[u8], tables: &[CdfTable]) -> Result<Vec<i32>> {
    let idx: Vec<u32> = (0..tables.len() as u32).collect();
    coder.decode(tables, &idx, bytes)
}

/// Ideal code length of `symbols` under their tables, in bits.
pub fn ideal_bits(symbols: &[i32], tables: &[CdfTable], table_index: &[u32]) -> f64 {
    symbols
        .iter()
        .zip(table_index)
        .map(|(&s, &t)| -tables[t as usize].probability(s).log2())
        .sum()
}
