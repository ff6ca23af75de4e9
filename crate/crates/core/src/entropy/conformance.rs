//! Conformance vectors: symbols, tables and the bytes the reference coder
//! produces for them. Any coder claiming compatibility must decode these
//! bytes back to the listed symbols (and, to be interchangeable at the
//! bitstream level, reproduce them exactly).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cdf::{build_gaussian_cdf, gaussian_table, CdfTable};
use super::{ReferenceCoder, SymbolCoder};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformanceCase {
    pub name: String,
    pub tables: Vec<CdfTable>,
    pub table_index: Vec<u32>,
    pub symbols: Vec<i32>,
    pub expected_hex: String,
    /// SHA-256 over the symbols as little-endian i32.
    pub symbols_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformanceFile {
    pub format: String,
    pub cases: Vec<ConformanceCase>,
}

pub fn symbols_digest(symbols: &[i32]) -> String {
    let mut h = Sha256::new();
    for s in symbols {
        h.update(s.to_le_bytes());
    }
    to_hex(&h.finalize())
}

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn from_hex(s: &str) -> Result<Vec<u8>> {
    if s.len() % 2 != 0 {
        return Err(Error::Parse("odd-length hex string".into()));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| {
            u8::from_str_radix(&s[i..i + 2], 16)
                .map_err(|_| Error::Parse(format!("bad hex at {i}")))
        })
        .collect()
}

fn case(name: &str, tables: Vec<CdfTable>, table_index: Vec<u32>, symbols: Vec<i32>) -> ConformanceCase {
    let bytes = ReferenceCoder
        .encode(&tables, &table_index, &symbols)
        .expect("reference coder accepts generated vectors");
    ConformanceCase {
        name: name.into(),
        symbols_sha256: symbols_digest(&symbols),
        expected_hex: to_hex(&bytes),
        tables,
        table_index,
        symbols,
    }
}

/// Deterministically generates the shipped vector set.
pub fn generate() -> ConformanceFile {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4842_4352);
    let mut cases = vec![case("empty", vec![gaussian_table(0.0, 1.0).unwrap()], vec![], vec![])];

    let unit = build_gaussian_cdf(0.0, 1.0, -8, 8, 16).unwrap();
    let syms: Vec<i32> = (0..256).map(|i| ((i * 7) % 9) - 4).collect();
    cases.push(case("unit-gaussian", vec![unit.clone()], vec![0; syms.len()], syms));

    let syms = vec![0, 9, -9, 40, -300, 100_000, -100_000, 8, -8];
    cases.push(case("escapes", vec![unit], vec![0; syms.len()], syms));

    let tables: Vec<CdfTable> = (0..64)
        .map(|_| gaussian_table(rng.random_range(-5.0..5.0), rng.random_range(0.11..8.0)).unwrap())
        .collect();
    let idx: Vec<u32> = (0..2000).map(|_| rng.random_range(0..64)).collect();
    let syms: Vec<i32> = idx
        .iter()
        .map(|&t| {
            let tb = &tables[t as usize];
            rng.random_range(tb.offset - 2..=tb.max_symbol() + 2)
        })
        .collect();
    cases.push(case("mixed-tables", tables, idx, syms));

    let low_precision = build_gaussian_cdf(1.5, 2.5, -6, 9, 12).unwrap();
    let syms: Vec<i32> = (0..500).map(|_| rng.random_range(-8..12)).collect();
    cases.push(case("precision-12", vec![low_precision], vec![0; syms.len()], syms));

    ConformanceFile {
        format: "hbcodec-conformance/1".into(),
        cases,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseReport {
    pub name: String,
    pub bytes_match: bool,
    pub decodes: bool,
}

/// Checks a coder against every case: its own encoding must equal the
/// expected bytes, and the expected bytes must decode to the listed symbols
/// (verified through the checksum).
pub fn check(coder: &dyn SymbolCoder, file: &ConformanceFile) -> Result<Vec<CaseReport>> {
    file.cases
        .iter()
        .map(|c| {
            let expected = from_hex(&c.expected_hex)?;
            let ours = coder.encode(&c.tables, &c.table_index, &c.symbols)?;
            let decodes = match coder.decode(&c.tables, &c.table_index, &expected) {
                Ok(s) => symbols_digest(&s) == c.symbols_sha256,
                Err(_) => false,
            };
            Ok(CaseReport {
                name: c.name.clone(),
                bytes_match: ours == expected,
                decodes,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_passes_generated_vectors() {
        let f = generate();
        for r in check(&ReferenceCoder, &f).unwrap() {
            assert!(r.bytes_match && r.decodes, "{r:?}");
        }
    }

    #[test]
    fn wrong_table_fails_checksum() {
        let f = generate();
        let c = f.cases.iter().find(|c| c.name == "unit-gaussian").unwrap();
        let wrong = vec![build_gaussian_cdf(0.0, 3.0, -8, 8, 16).unwrap()];
        let bytes = from_hex(&c.expected_hex).unwrap();
        let decoded = ReferenceCoder.decode(&wrong, &c.table_index, &bytes).unwrap();
        assert_eq!(decoded.len(), c.symbols.len());
        assert_ne!(symbols_digest(&decoded), c.symbols_sha256);
    }

    #[test]
    fn hex_roundtrip() {
        assert_eq!(from_hex(&to_hex(&[0, 1, 254, 255])).unwrap(), vec![0, 1, 254, 255]);
        assert!(from_hex("abc").is_err());
    }
}
