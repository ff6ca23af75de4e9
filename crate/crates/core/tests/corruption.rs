//! A damaged motion substream must not leak outside its group of pictures.

mod common;

use hbcodec::codec::{decode_sequence, encode_sequence, EncodeOptions, SequenceBitstream, SubstreamId};
use hbcodec::entropy::ReferenceCoder;
use hbcodec::gop::FrameType;
use hbcodec::train::{seeded_clip, SynthConfig};
use hbcodec::Error;

use common::*;

/// Payload byte offsets of the motion side information of `display`: the
/// motion hyper substream and the motion latents after it.
fn motion_bytes(stream: &SequenceBitstream, display: usize) -> Vec<usize> {
    let pos = stream.frames.iter().position(|f| f.display_index == display).unwrap();
    let frame = &stream.frames[pos];
    assert_eq!(frame.frame_type, FrameType::B);
    let motion = frame.substreams.iter().position(|s| s.id == SubstreamId::Motion).expect("no motion substream");
    let first = if motion > 0 && frame.substreams[motion - 1].id == SubstreamId::Hyper { motion - 1 } else { motion };
    let mut off = stream.frame_offsets()[pos] + 17;
    let mut out = Vec::new();
    for (k, s) in frame.substreams.iter().enumerate() {
        if (first..=motion).contains(&k) {
            out.extend(off + 5..off + 5 + s.bytes.len());
        }
        off += 5 + s.bytes.len();
    }
    assert!(out.len() > 5, "motion side information of frame {display} is {} bytes", out.len());
    out
}

#[test]
fn motion_corruption_stays_in_its_gop() {
    let ck = model(FULL);
    let cfg = SynthConfig {
        frames: 9,
        ..SynthConfig::default()
    };
    let frames = seeded_clip(&cfg, (64, 64), 77).unwrap();
    let opts = EncodeOptions {
        lambda_index: 0,
        intra_period: 4,
        ..EncodeOptions::default()
    };
    let enc = encode_sequence(&ck, &frames, &opts, &ReferenceCoder).unwrap();
    let clean = decode_sequence(&ck, &enc.bytes, &ReferenceCoder).unwrap();
    let stream = SequenceBitstream::from_bytes(&enc.bytes).unwrap();
    // Second GOP: intra frames 4 and 8, B frames 5..=7.
    for (target, mask) in [(6usize, 0x5au8), (5, 0xff), (7, 0x01)] {
        let mut bytes = enc.bytes.clone();
        motion_bytes(&stream, target).into_iter().for_each(|i| bytes[i] ^= mask);
        match decode_sequence(&ck, &bytes, &ReferenceCoder) {
            Err(Error::Frame { index, .. }) => assert!((5..=7).contains(&index), "error blamed on frame {index}"),
            Err(e) => panic!("error without frame context: {e}"),
            Ok(damaged) => {
                for d in [0, 1, 2, 3, 4, 8] {
                    assert_eq!(damaged[d], clean[d], "frame {d} changed by damage to frame {target}");
                }
                assert_ne!(damaged[target], clean[target], "damage to frame {target} had no effect");
            }
        }
    }
}

#[test]
fn truncation_names_a_frame_or_the_length() {
    let ck = model(FULL);
    let frames = seeded_clip(&SynthConfig::default(), (32, 32), 5).unwrap();
    let enc = encode_sequence(
        &ck,
        &frames,
        &EncodeOptions {
            intra_period: 4,
            ..EncodeOptions::default()
        },
        &ReferenceCoder,
    )
    .unwrap();
    let cut = &enc.bytes[..enc.bytes.len() - 3];
    match decode_sequence(&ck, cut, &ReferenceCoder) {
        Err(Error::Truncated(m)) => assert!(m.contains("bytes"), "{m}"),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("truncated stream decoded"),
    }
}
