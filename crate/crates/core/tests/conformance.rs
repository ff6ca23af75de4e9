//! The shipped conformance vectors.

mod common;

use std::fs;

use hbcodec::entropy::conformance::{check, generate, ConformanceFile};
use hbcodec::entropy::ReferenceCoder;

use common::*;

fn shipped() -> ConformanceFile {
    serde_json::from_slice(&fs::read(assets().join("conformance.json")).unwrap()).unwrap()
}

#[test]
fn shipped_vectors_match_the_generator() {
    assert_eq!(shipped(), generate());
}

#[test]
fn reference_coder_passes_every_case() {
    let file = shipped();
    assert!(file.cases.len() >= 5);
    for r in check(&ReferenceCoder, &file).unwrap() {
        assert!(r.bytes_match && r.decodes, "{r:?}");
    }
}

#[test]
fn a_wrong_byte_fails_the_check() {
    let mut file = shipped();
    let case = file.cases.iter_mut().find(|c| c.name == "mixed-tables").unwrap();
    let last = case.expected_hex.len() - 12;
    let flipped = if &case.expected_hex[last..last + 1] == "0" { "1" } else { "0" };
    case.expected_hex.replace_range(last..last + 1, flipped);
    let r = check(&ReferenceCoder, &file).unwrap();
    let bad = r.iter().find(|r| r.name == "mixed-tables").unwrap();
    assert!(!bad.bytes_match);
}
