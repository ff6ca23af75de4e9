#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hbcodec::codec::{load_checkpoint, Checkpoint};
use hbcodec::yuv::{write_raw_yuv, Frame420};

pub const FULL: &str = "toy-conditional.hbck";
pub const ABLATED: &str = "toy-conditional-noaf.hbck";
pub const MERGED: &str = "toy-merged.hbck";

pub fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn assets() -> PathBuf {
    repo().join("assets")
}

pub fn model_path(name: &str) -> PathBuf {
    repo().join("models").join(name)
}

pub fn model(name: &str) -> Checkpoint {
    let p = model_path(name);
    load_checkpoint(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// SHA-256 of the 8-bit planar samples of `frames`.
pub fn frames_sha256(frames: &[Frame420]) -> String {
    hbcodec::codec::checkpoint::hex(&hbcodec::codec::checkpoint::sha256(&write_raw_yuv(frames)))
}
