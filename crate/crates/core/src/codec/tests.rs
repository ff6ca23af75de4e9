use super::*;
use crate::afmod::AfHost;
use crate::entropy::ReferenceCoder;
use crate::flow::perturb_parameters;
use crate::yuv::Plane;

fn tiny(mode: CodingMode) -> CodecConfig {
    CodecConfig {
        coding_mode: mode,
        width: 8,
        latent_channels: 4,
        hyper_channels: 2,
        ..CodecConfig::default()
    }
}

fn texture(x: f32, y: f32) -> f32 {
    0.5 + 0.2 * (0.37 * x).sin() * (0.23 * y).cos() + 0.15 * (0.11 * x + 0.19 * y).sin()
}

/// Frame `t` of a scene translating right by one pixel per frame.
fn moving(w: usize, h: usize, t: usize) -> Frame420 {
    let s = t as f32;
    Frame420::new(
        Plane::from_fn(w, h, |x, y| texture(x as f32 - s, y as f32)),
        Plane::from_fn(w / 2, h / 2, |x, y| texture(2.0 * x as f32 - s + 7.0, 2.0 * y as f32) * 0.8),
        Plane::from_fn(w / 2, h / 2, |x, y| texture(2.0 * y as f32, 2.0 * x as f32 - s) * 0.9),
    )
    .unwrap()
}

fn clip(w: usize, h: usize, n: usize) -> Vec<Frame420> {
    (0..n).map(|t| moving(w, h, t)).collect()
}

fn perturbed(mode: CodingMode, seed: u64) -> Checkpoint {
    let m = Model::new(tiny(mode), seed).unwrap();
    perturb_parameters(&m.store, seed + 100, 0.02).unwrap();
    Checkpoint::from_model(m, serde_json::Value::Null).unwrap()
}

fn tensors(f: &Frame420) -> FrameTensors {
    FrameTensors::from_frames(&[f], &Device::Cpu, DType::F32).unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
    (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap()
}

#[test]
fn space_to_depth_tensor_matches_planes() {
    let p = Plane::from_fn(6, 4, |x, y| (x + 10 * y) as f32);
    let t = planes_to_tensor(&[&p], &Device::Cpu).unwrap();
    let s = space_to_depth_tensor(&t).unwrap();
    let host = crate::yuv::space_to_depth(&p).unwrap();
    let got = tensor_to_planes(&s, 0).unwrap();
    for i in 0..4 {
        assert_eq!(got[i], host[i]);
    }
    let back = depth_to_space_tensor(&s).unwrap();
    assert_eq!(back.flatten_all().unwrap().to_vec1::<f32>().unwrap(), p.data());
}

#[test]
fn coding_mode_names_roundtrip() {
    for m in CodingMode::ALL {
        assert_eq!(m.name().parse::<CodingMode>().unwrap(), m);
        assert_eq!(CodingMode::from_u8(m.to_u8()).unwrap(), m);
    }
    assert_eq!("space-to-depth".parse::<CodingMode>().unwrap(), CodingMode::SpaceToDepth);
    assert!("rgb".parse::<CodingMode>().is_err());
}

#[test]
fn uv_before_y_is_an_ordering_error() {
    let m = Model::new(tiny(CodingMode::Conditional), 1).unwrap();
    let x = tensors(&moving(32, 32, 0));
    let ctx = m.inter_context(&[RateContext::inter(0, 0)]).unwrap();
    let r = m.encode_inter_uv(&x.uv, &x.uv, None, &ctx, &ReferenceCoder);
    assert!(matches!(r, Err(Error::Ordering(_))));
}

#[test]
fn uv_codec_has_only_a_temporal_prior() {
    let m = Model::new(tiny(CodingMode::Conditional), 1).unwrap();
    let names = m.store.names();
    assert!(names.iter().any(|n| n.starts_with("inter_uv.prior.")));
    assert!(!names.iter().any(|n| n.starts_with("inter_uv.hyper")));
    assert!(names.iter().any(|n| n.starts_with("inter_y.hyper.")));
    let (_, uv) = m.separate_codecs().unwrap();
    assert!(!uv.has_hyperprior());
    assert_eq!(uv.config().parts[0].cond_channels, 3);
}

#[test]
fn intra_codec_is_hyperprior_only() {
    let m = Model::new(tiny(CodingMode::Conditional), 1).unwrap();
    for n in m.store.names().iter().filter(|n| n.starts_with("intra_")) {
        assert!(!n.contains("context") && !n.contains("autoregressive"), "{n}");
    }
    assert!(m.intra_y.has_hyperprior() && m.intra_uv.has_hyperprior());
}

#[test]
fn every_codec_convolution_is_modulated() {
    let mut m = Model::new(tiny(CodingMode::Conditional), 1).unwrap();
    for c in m.codecs_mut() {
        let total = c.af_convs().len();
        assert_eq!(crate::afmod::count_modulators(c), total);
        assert!(total > 0);
    }
}

#[test]
fn independent_mode_ignores_decoded_luma() {
    let ck = perturbed(CodingMode::Independent, 2);
    let m = &ck.model;
    let (_, uv) = m.separate_codecs().unwrap();
    assert_eq!(uv.config().parts[0].cond_channels, 2);
    let x = tensors(&moving(32, 32, 1));
    let xc = tensors(&moving(32, 32, 0));
    let ctx = m.inter_context(&[RateContext::inter(1, 1)]).unwrap();
    let a = m.encode_inter_uv(&x.uv, &xc.uv, Some(&x.y), &ctx, &ReferenceCoder).unwrap();
    let b = m.encode_inter_uv(&x.uv, &xc.uv, Some(&x.y.zeros_like().unwrap()), &ctx, &ReferenceCoder).unwrap();
    assert_eq!(a.substreams, b.substreams);
    assert_eq!(max_abs_diff(&a.recon[0], &b.recon[0]), 0.0);
}

#[test]
fn conditional_mode_uses_decoded_luma() {
    let ck = perturbed(CodingMode::Conditional, 3);
    let m = &ck.model;
    let x = tensors(&moving(32, 32, 1));
    let xc = tensors(&moving(32, 32, 0));
    let ctx = m.inter_context(&[RateContext::inter(1, 1)]).unwrap();
    let a = m.encode_inter_uv(&x.uv, &xc.uv, Some(&x.y), &ctx, &ReferenceCoder).unwrap();
    let b = m.encode_inter_uv(&x.uv, &xc.uv, Some(&x.y.zeros_like().unwrap()), &ctx, &ReferenceCoder).unwrap();
    assert!(max_abs_diff(&a.recon[0], &b.recon[0]) > 0.0);
}

#[test]
fn space_to_depth_codes_six_chroma_resolution_channels() {
    let m = Model::new(tiny(CodingMode::SpaceToDepth), 1).unwrap();
    let p = &m.joint_codec().unwrap().config().parts;
    assert_eq!(p.len(), 1);
    assert_eq!((p[0].channels, p[0].cond_channels, p[0].double_res), (6, 6, false));
    let m = Model::new(tiny(CodingMode::Merged), 1).unwrap();
    let p = &m.joint_codec().unwrap().config().parts;
    assert_eq!((p[0].channels, p[0].double_res, p[1].channels), (1, true, 2));
    assert!(m.separate_codecs().is_none());
}

#[test]
fn perfect_prediction_costs_almost_nothing() {
    let m = Model::new(tiny(CodingMode::Conditional), 4).unwrap();
    let flows = FlowPairTensor::constant(64, 64, [1.5, -0.5, -1.5, 0.5]);
    let ctx = m.inter_context(&[RateContext::inter(1, 0)]).unwrap();
    let c = m.encode_motion(&flows, &flows, &ctx, &ReferenceCoder).unwrap();
    assert_eq!(max_abs_diff(&c.recon[0], &flows), 0.0);
    let bits: usize = c.substreams.iter().map(|s| 8 * s.bytes.len()).sum();
    let samples = 4 * 64 * 64;
    assert!((bits as f64) / (samples as f64) < 0.05, "{bits} bits");
    let main = c.substreams.iter().find(|s| s.id == SubstreamId::Motion).unwrap();
    assert!(main.bytes.len() <= 8, "{}", main.bytes.len());
}

struct FlowPairTensor;

impl FlowPairTensor {
    fn constant(w: usize, h: usize, v: [f32; 4]) -> Tensor {
        let data: Vec<f32> = v.iter().flat_map(|&x| std::iter::repeat_n(x, w * h)).collect();
        Tensor::from_vec(data, (1, 4, h, w), &Device::Cpu).unwrap()
    }
}

#[test]
fn motion_decoding_matches_encoder_exactly() {
    let ck = perturbed(CodingMode::Conditional, 5);
    let m = &ck.model;
    let past = tensors(&moving(32, 32, 0));
    let fut = tensors(&moving(32, 32, 2));
    let x = tensors(&moving(32, 32, 1));
    let ctx = m.inter_context(&[RateContext::inter(0, 0)]).unwrap();
    let b = m.encode_b(&x, &past, &fut, &ctx, &ReferenceCoder).unwrap();
    let predicted = m.predict(&past, &fut).unwrap();
    let mut cur = SubstreamCursor::new(&b.substreams);
    let flows = m.decode_motion(&mut cur, &predicted, &ctx, &ReferenceCoder).unwrap();
    assert_eq!(max_abs_diff(&flows, &b.decoded_flows), 0.0);
    let rec = m.decode_b(&b.substreams, &past, &fut, &ctx, &ReferenceCoder).unwrap();
    assert_eq!(max_abs_diff(&rec.y, &b.recon.y), 0.0);
    assert_eq!(max_abs_diff(&rec.uv, &b.recon.uv), 0.0);
}

#[test]
fn every_mode_roundtrips_bit_exactly() {
    for (i, mode) in CodingMode::ALL.into_iter().enumerate() {
        let ck = perturbed(mode, 10 + i as u64);
        let frames = clip(40, 24, 5);
        let opts = EncodeOptions {
            lambda_index: 2,
            intra_period: 4,
            ..EncodeOptions::default()
        };
        let enc = encode_sequence(&ck, &frames, &opts, &ReferenceCoder).unwrap();
        assert_eq!(enc.plan.coding_order(), vec![0, 4, 2, 1, 3]);
        let order: Vec<usize> = enc.stream.frames.iter().map(|f| f.display_index).collect();
        assert_eq!(order, vec![0, 4, 2, 1, 3]);
        let dec = decode_sequence(&ck, &enc.bytes, &ReferenceCoder).unwrap();
        assert_eq!(dec.len(), 5);
        for (a, b) in dec.iter().zip(&enc.reconstructions) {
            assert_eq!((a.width(), a.height()), (40, 24));
            assert_eq!(a.y.to_u8(), b.y.to_u8(), "{mode}");
            assert_eq!(a.u.to_u8(), b.u.to_u8(), "{mode}");
            assert_eq!(a.v.to_u8(), b.v.to_u8(), "{mode}");
        }
    }
}

#[test]
fn stream_length_is_exactly_accounted() {
    let ck = perturbed(CodingMode::Conditional, 20);
    let opts = EncodeOptions {
        intra_period: 4,
        ..EncodeOptions::default()
    };
    let enc = encode_sequence(&ck, &clip(32, 32, 5), &opts, &ReferenceCoder).unwrap();
    let payload: usize = enc
        .stream
        .frames
        .iter()
        .flat_map(|f| f.substreams.iter())
        .map(|s| s.bytes.len() + bitstream::SUBSTREAM_HEADER_BYTES)
        .sum();
    let frame_headers = 5 * bitstream::FRAME_HEADER_BYTES;
    assert_eq!(enc.bytes.len(), enc.stream.header_bytes() + frame_headers + payload);
    let hb = enc.stream.header_bytes();
    let announced = u64::from_le_bytes(enc.bytes[hb - 8..hb].try_into().unwrap());
    assert_eq!(announced * 8, enc.bytes.len() as u64 * 8);
}

#[test]
fn wrong_checkpoint_is_refused() {
    let ck = perturbed(CodingMode::Conditional, 21);
    let other = perturbed(CodingMode::Conditional, 22);
    let opts = EncodeOptions {
        intra_period: 2,
        ..EncodeOptions::default()
    };
    let enc = encode_sequence(&ck, &clip(32, 32, 3), &opts, &ReferenceCoder).unwrap();
    assert!(matches!(
        decode_sequence(&other, &enc.bytes, &ReferenceCoder),
        Err(Error::CheckpointMismatch(_))
    ));
}

#[test]
fn single_frame_and_bad_inputs() {
    let ck = perturbed(CodingMode::Conditional, 23);
    let opts = EncodeOptions {
        intra_period: 4,
        ..EncodeOptions::default()
    };
    let enc = encode_sequence(&ck, &clip(32, 16, 1), &opts, &ReferenceCoder).unwrap();
    assert_eq!(decode_sequence(&ck, &enc.bytes, &ReferenceCoder).unwrap(), enc.reconstructions);
    assert!(encode_sequence(&ck, &[], &opts, &ReferenceCoder).is_err());
    let mixed = vec![moving(32, 16, 0), moving(16, 16, 1)];
    assert!(matches!(
        encode_sequence(&ck, &mixed, &opts, &ReferenceCoder),
        Err(Error::Dimension(_))
    ));
    let bad = EncodeOptions {
        lambda_index: 9,
        ..opts
    };
    assert!(encode_sequence(&ck, &clip(32, 16, 1), &bad, &ReferenceCoder).is_err());
}

#[test]
fn out_of_range_intra_lambda_is_clamped() {
    let ck = perturbed(CodingMode::Conditional, 24);
    let opts = EncodeOptions {
        intra_period: 2,
        intra_lambda: Some(1e9),
        ..EncodeOptions::default()
    };
    let enc = encode_sequence(&ck, &clip(32, 16, 1), &opts, &ReferenceCoder).unwrap();
    assert_eq!(enc.stream.frames[0].ctx.lambda_value, Some(ck.model.config.intra_lambda_range.1));
}
