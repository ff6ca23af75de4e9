//! Golden streams: three rate points in two coding modes on one 5-frame clip.
//!
//! Regenerate (after retraining) with
//! `cargo test -p hbcodec --test golden -- --ignored regenerate`.

mod common;

use std::fs;

use serde::{Deserialize, Serialize};

use hbcodec::codec::checkpoint::{hex, sha256};
use hbcodec::codec::{decode_sequence, encode_sequence, EncodeOptions};
use hbcodec::entropy::ReferenceCoder;
use hbcodec::train::{seeded_clip, SynthConfig};
use hbcodec::yuv::{read_y4m, write_y4m_bytes, Frame420, Y4mHeader};

use common::*;

const WIDTH: usize = 72;
const HEIGHT: usize = 40;
const INTRA_PERIOD: usize = 4;
const LAMBDA_INDICES: [usize; 3] = [0, 2, 4];

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    checkpoint: String,
    checkpoint_sha256: String,
    lambda_index: usize,
    stream: String,
    stream_sha256: String,
    recon_sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    clip: String,
    intra_period: usize,
    entries: Vec<Entry>,
}

fn dir() -> std::path::PathBuf {
    assets().join("golden")
}

fn clip() -> Vec<Frame420> {
    let bytes = fs::read(dir().join("clip.y4m")).expect("golden clip");
    read_y4m(bytes.as_slice()).unwrap().1
}

fn options(lambda_index: usize) -> EncodeOptions {
    EncodeOptions {
        lambda_index,
        intra_period: INTRA_PERIOD,
        ..EncodeOptions::default()
    }
}

#[test]
#[ignore]
fn regenerate() {
    fs::create_dir_all(dir()).unwrap();
    let cfg = SynthConfig::default();
    let frames: Vec<Frame420> = seeded_clip(&cfg, (WIDTH, HEIGHT), 2024)
        .unwrap()
        .iter()
        .map(|f| f.quantize_8bit())
        .collect();
    fs::write(dir().join("clip.y4m"), write_y4m_bytes(&Y4mHeader::new(WIDTH, HEIGHT, (25, 1)), &frames).unwrap()).unwrap();
    let mut entries = Vec::new();
    for name in [FULL, MERGED] {
        let ck = model(name);
        for i in LAMBDA_INDICES {
            let enc = encode_sequence(&ck, &frames, &options(i), &ReferenceCoder).unwrap();
            let stream = format!("{}-l{i}.bin", ck.model.coding_mode());
            fs::write(dir().join(&stream), &enc.bytes).unwrap();
            entries.push(Entry {
                checkpoint: name.into(),
                checkpoint_sha256: ck.hash_hex(),
                lambda_index: i,
                stream,
                stream_sha256: hex(&sha256(&enc.bytes)),
                recon_sha256: frames_sha256(&enc.reconstructions),
            });
        }
    }
    let m = Manifest {
        clip: "clip.y4m".into(),
        intra_period: INTRA_PERIOD,
        entries,
    };
    fs::write(dir().join("manifest.json"), serde_json::to_string_pretty(&m).unwrap()).unwrap();
}

fn manifest() -> Manifest {
    serde_json::from_slice(&fs::read(dir().join("manifest.json")).expect("golden manifest")).unwrap()
}

#[test]
fn golden_streams_decode_to_the_recorded_reconstructions() {
    let m = manifest();
    assert_eq!(m.entries.len(), 6);
    for e in &m.entries {
        let ck = model(&e.checkpoint);
        assert_eq!(ck.hash_hex(), e.checkpoint_sha256, "{} changed since the goldens were made", e.checkpoint);
        let bytes = fs::read(dir().join(&e.stream)).unwrap();
        assert_eq!(hex(&sha256(&bytes)), e.stream_sha256);
        let decoded = decode_sequence(&ck, &bytes, &ReferenceCoder).unwrap();
        assert_eq!(frames_sha256(&decoded), e.recon_sha256, "{}", e.stream);
    }
}

#[test]
fn encoder_reproduces_golden_streams() {
    let m = manifest();
    let frames = clip();
    for e in &m.entries {
        let ck = model(&e.checkpoint);
        let enc = encode_sequence(&ck, &frames, &options(e.lambda_index), &ReferenceCoder).unwrap();
        assert_eq!(hex(&sha256(&enc.bytes)), e.stream_sha256, "{}", e.stream);
        assert_eq!(frames_sha256(&enc.reconstructions), e.recon_sha256, "{}", e.stream);
    }
}
