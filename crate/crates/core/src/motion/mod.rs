//! Motion estimation, bidirectional motion prediction, flow resampling and
//! motion compensation.
//!
//! Flows are backward flows in luma pixels: `m_{t->r}` maps every position
//! of frame `t` to the place it is fetched from in reference `r`, so that
//! `warp(x_r, m_{t->r})` approximates `x_t`. As tensors a flow is (N, 2, H, W)
//! with the horizontal component first; a pair is (N, 4, H, W) with the
//! backward (past) flow first.

use std::io::Write;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::nn::{leaky_relu, planes_to_tensor, tensor_to_planes, upsample2, warp, Conv, ParamStore, Scope};
use crate::yuv::{Frame420, Frame444, Plane};

/// Feature width of both compensation networks.
pub const MC_WIDTH: usize = 48;
pub const ME_LEVELS: usize = 3;
pub const ME_WIDTH: usize = 24;
pub const MP_WIDTH: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub u: Plane,
    pub v: Plane,
}

impl FlowField {
    pub fn new(u: Plane, v: Plane) -> Result<Self> {
        if u.dims() != v.dims() {
            return Err(Error::Dimension(format!(
                "flow components {:?} and {:?} differ",
                u.dims(),
                v.dims()
            )));
        }
        let f = FlowField { u, v };
        if !f.u.data().iter().chain(f.v.data()).all(|x| x.is_finite()) {
            return Err(Error::NumericFailure { layer: "flow field".into() });
        }
        Ok(f)
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        FlowField {
            u: Plane::filled(width, height, u),
            v: Plane::filled(width, height, v),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.u.dims()
    }

    pub fn mean_u(&self) -> f64 {
        mean(self.u.data())
    }

    pub fn mean_v(&self) -> f64 {
        mean(self.v.data())
    }

    /// Mean Euclidean displacement.
    pub fn mean_magnitude(&self) -> f64 {
        let s: f64 = self
            .u
            .data()
            .iter()
            .zip(self.v.data())
            .map(|(&a, &b)| (a as f64).hypot(b as f64))
            .sum();
        s / self.u.data().len().max(1) as f64
    }

    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        planes_to_tensor(&[&self.u, &self.v], device)
    }

    /// Reads channels `first..first + 2` of sample `n`.
    pub fn from_tensor(t: &Tensor, n: usize, first: usize) -> Result<Self> {
        let planes = tensor_to_planes(&t.narrow(1, first, 2)?, n)?;
        let mut it = planes.into_iter();
        FlowField::new(it.next().unwrap(), it.next().unwrap())
    }

    /// Planar little-endian f32 dump: all u samples, then all v samples.
    pub fn write_planar(&self, out: &mut impl Write) -> Result<()> {
        for x in self.u.data().iter().chain(self.v.data()) {
            out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }
}

fn mean(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64).sum::<f64>() / v.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowPair {
    /// m_{t -> t-k}
    pub backward: FlowField,
    /// m_{t -> t+k}
    pub forward: FlowField,
}

impl FlowPair {
    pub fn new(backward: FlowField, forward: FlowField) -> Result<Self> {
        if backward.dims() != forward.dims() {
            return Err(Error::Dimension(format!(
                "flow pair resolutions {:?} and {:?} differ",
                backward.dims(),
                forward.dims()
            )));
        }
        Ok(FlowPair { backward, forward })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowPair {
            backward: FlowField::zeros(width, height),
            forward: FlowField::zeros(width, height),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.backward.dims()
    }

    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        planes_to_tensor(
            &[&self.backward.u, &self.backward.v, &self.forward.u, &self.forward.v],
            device,
        )
    }

    pub fn from_tensor(t: &Tensor, n: usize) -> Result<Self> {
        FlowPair::new(FlowField::from_tensor(t, n, 0)?, FlowField::from_tensor(t, n, 2)?)
    }

    pub fn downscale(&self) -> Result<Self> {
        Ok(FlowPair {
            backward: downscale_flow(&self.backward)?,
            forward: downscale_flow(&self.forward)?,
        })
    }
}

/// Halves the resolution of a flow by 2x2 averaging and halves its values.
pub fn downscale_flow(flow: &FlowField) -> Result<FlowField> {
    let (w, h) = flow.dims();
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::Dimension(format!("flow {w}x{h} has odd dimensions")));
    }
    let half = |p: &Plane| {
        Plane::from_fn(w / 2, h / 2, |x, y| {
            let s = p.get(2 * x, 2 * y) as f64
                + p.get(2 * x + 1, 2 * y) as f64
                + p.get(2 * x, 2 * y + 1) as f64
                + p.get(2 * x + 1, 2 * y + 1) as f64;
            (s * 0.125) as f32
        })
    };
    Ok(FlowField {
        u: half(&flow.u),
        v: half(&flow.v),
    })
}

/// Tensor form of [`downscale_flow`] for any number of flow channels.
pub fn downscale_flow_tensor(flow: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = flow.dims4()?;
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::Dimension(format!("flow {w}x{h} has odd dimensions")));
    }
    Ok((flow.avg_pool2d(2)? * 0.5)?)
}

/// Doubles the resolution of a flow (nearest neighbour) and its values.
fn upscale_flow_tensor(flow: &Tensor) -> Result<Tensor> {
    Ok((upsample2(flow)? * 2.0)?)
}

/// Bilinear x2 upsampling of (N, C, h, w) with the chroma sample siting of
/// [`crate::yuv::bilinear_upsample`].
pub fn upsample_chroma(t: &Tensor) -> Result<Tensor> {
    let interleave = |t: &Tensor, dim: usize| -> Result<Tensor> {
        let len = t.dim(dim)?;
        let p = t.pad_with_same(dim, 1, 1)?;
        let a = p.narrow(dim, 0, len)?;
        let b = p.narrow(dim, 1, len)?;
        let c = p.narrow(dim, 2, len)?;
        let even = ((a * 0.25)? + (&b * 0.75)?)?;
        let odd = ((b * 0.75)? + (c * 0.25)?)?;
        let s = Tensor::stack(&[even, odd], dim + 1)?;
        let mut shape = t.dims().to_vec();
        shape[dim] *= 2;
        Ok(s.reshape(shape)?)
    };
    interleave(&interleave(t, 3)?, 2)
}

/// (N, 3, H, W) YUV 4:4:4 tensor from a luma tensor and a chroma tensor.
pub fn yuv444_tensor(y: &Tensor, uv: &Tensor) -> Result<Tensor> {
    Ok(Tensor::cat(&[y, &upsample_chroma(uv)?], 1)?)
}

pub fn frame444_tensor(f: &Frame444, device: &Device, dtype: DType) -> Result<Tensor> {
    Ok(planes_to_tensor(&[&f.y, &f.u, &f.v], device)?.to_dtype(dtype)?)
}

/// Luma (N, 1, H, W) and chroma (N, 2, H/2, W/2) tensors of a frame.
pub fn frame420_tensors(f: &Frame420, device: &Device, dtype: DType) -> Result<(Tensor, Tensor)> {
    Ok((
        planes_to_tensor(&[&f.y], device)?.to_dtype(dtype)?,
        planes_to_tensor(&[&f.u, &f.v], device)?.to_dtype(dtype)?,
    ))
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension(format!(
            "{what}: {:?} does not match {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Pads H and W by replication up to multiples of `a`.
fn pad_to_multiple(t: &Tensor, a: usize) -> Result<Tensor> {
    let (_, _, h, w) = t.dims4()?;
    let ph = h.div_ceil(a) * a - h;
    let pw = w.div_ceil(a) * a - w;
    Ok(t.pad_with_same(2, 0, ph)?.pad_with_same(3, 0, pw)?)
}

fn crop(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    Ok(t.narrow(2, 0, h)?.narrow(3, 0, w)?)
}

#[derive(Clone, Debug)]
struct Stack3 {
    convs: [Conv; 3],
}

impl Stack3 {
    /// Two activated layers and a zero-initialised output layer.
    fn new(scope: &Scope, cin: usize, width: usize, cout: usize) -> Result<Self> {
        Ok(Stack3 {
            convs: [
                Conv::new(&scope.pp("c0"), cin, width, 3, 1)?,
                Conv::new(&scope.pp("c1"), width, width, 3, 1)?,
                Conv::zeroed(&scope.pp("c2"), width, cout, 3, 1)?,
            ],
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let f = leaky_relu(&self.convs[0].forward(x)?)?;
        let f = leaky_relu(&self.convs[1].forward(&f)?)?;
        self.convs[2].forward(&f)
    }
}

/// Coarse-to-fine pyramid flow estimator operating on YUV 4:4:4.
#[derive(Clone, Debug)]
pub struct MeNet {
    levels: Vec<Stack3>,
}

impl MeNet {
    pub fn new(store: &ParamStore) -> Result<Self> {
        let s = store.root().pp("menet");
        let levels = (0..ME_LEVELS)
            .map(|l| Stack3::new(&s.pp(format!("level{l}")), 3 + 3 + 2, ME_WIDTH, 2))
            .collect::<Result<Vec<_>>>()?;
        Ok(MeNet { levels })
    }

    /// Flow warping `reference` onto `cur`, both (N, 3, H, W).
    pub fn forward(&self, cur: &Tensor, reference: &Tensor) -> Result<Tensor> {
        check_same(cur, reference, "motion estimation")?;
        let (n, _, h, w) = cur.dims4()?;
        let a = 1 << (ME_LEVELS - 1);
        let cur_p = pad_to_multiple(cur, a)?;
        let ref_p = pad_to_multiple(reference, a)?;
        let mut curs = vec![cur_p];
        let mut refs = vec![ref_p];
        for _ in 1..ME_LEVELS {
            curs.push(curs.last().unwrap().avg_pool2d(2)?);
            refs.push(refs.last().unwrap().avg_pool2d(2)?);
        }
        let (_, _, ch, cw) = curs[ME_LEVELS - 1].dims4()?;
        let mut flow = Tensor::zeros((n, 2, ch, cw), cur.dtype(), cur.device())?;
        for l in (0..ME_LEVELS).rev() {
            if l != ME_LEVELS - 1 {
                flow = upscale_flow_tensor(&flow)?;
            }
            let warped = warp(&refs[l], &flow)?;
            let inp = Tensor::cat(&[&curs[l], &warped, &flow], 1)?;
            flow = (&flow + self.levels[ME_LEVELS - 1 - l].forward(&inp)?)?;
        }
        crop(&flow, h, w)
    }
}

pub fn estimate_flow(menet: &MeNet, cur: &Frame444, reference: &Frame444, device: &Device, dtype: DType) -> Result<FlowField> {
    if (cur.width(), cur.height()) != (reference.width(), reference.height()) {
        return Err(Error::Dimension(format!(
            "motion estimation: {}x{} against {}x{}",
            cur.width(),
            cur.height(),
            reference.width(),
            reference.height()
        )));
    }
    let f = menet.forward(
        &frame444_tensor(cur, device, dtype)?,
        &frame444_tensor(reference, device, dtype)?,
    )?;
    FlowField::from_tensor(&f, 0, 0)
}

/// Predicts the flow pair of the middle frame from its two references
/// assuming constant velocity, plus a learned correction.
#[derive(Clone, Debug)]
pub struct MpNet {
    refine: Stack3,
}

impl MpNet {
    pub fn new(store: &ParamStore) -> Result<Self> {
        Ok(MpNet {
            refine: Stack3::new(&store.root().pp("mpnet"), 2 + 2, MP_WIDTH, 4)?,
        })
    }

    /// `past` and `future` are (N, 3, H, W) YUV 4:4:4 references.
    pub fn forward(&self, menet: &MeNet, past: &Tensor, future: &Tensor) -> Result<Tensor> {
        let span = menet.forward(past, future)?.detach();
        let base = Tensor::cat(&[&(&span * -0.5)?, &(&span * 0.5)?], 1)?;
        let inp = Tensor::cat(&[&span, &past.narrow(1, 0, 1)?, &future.narrow(1, 0, 1)?], 1)?;
        Ok((base + self.refine.forward(&inp)?)?)
    }
}

/// Only the two decoded references enter the prediction.
pub fn predict_flows(menet: &MeNet, mpnet: &MpNet, ref_past: &Frame420, ref_future: &Frame420, device: &Device, dtype: DType) -> Result<FlowPair> {
    let (py, puv) = frame420_tensors(ref_past, device, dtype)?;
    let (fy, fuv) = frame420_tensors(ref_future, device, dtype)?;
    check_same(&py, &fy, "motion prediction")?;
    let p = mpnet.forward(menet, &yuv444_tensor(&py, &puv)?, &yuv444_tensor(&fy, &fuv)?)?;
    FlowPair::from_tensor(&p, 0)
}

/// Warps both references and refines their average.
#[derive(Clone, Debug)]
pub struct McNet {
    channels: usize,
    refine: Stack3,
}

impl McNet {
    pub fn new(scope: &Scope, channels: usize) -> Result<Self> {
        Ok(McNet {
            channels,
            refine: Stack3::new(scope, 4 * channels + 4, MC_WIDTH, channels)?,
        })
    }

    pub fn width(&self) -> usize {
        self.refine.convs[0].out_channels
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `flows` is a (N, 4, H, W) pair at the resolution of the references.
    pub fn forward(&self, past: &Tensor, future: &Tensor, flows: &Tensor) -> Result<Tensor> {
        check_same(past, future, "motion compensation references")?;
        let (n, c, h, w) = past.dims4()?;
        if c != self.channels {
            return Err(Error::Shape(format!("compensation network for {} channels got {c}", self.channels)));
        }
        if flows.dims() != [n, 4, h, w] {
            return Err(Error::Dimension(format!(
                "flows {:?} do not match references {:?}",
                flows.dims(),
                past.dims()
            )));
        }
        let wp = warp(past, &flows.narrow(1, 0, 2)?)?;
        let wf = warp(future, &flows.narrow(1, 2, 2)?)?;
        let base = ((&wp + &wf)? * 0.5)?;
        let inp = Tensor::cat(&[&wp, &wf, past, future, flows], 1)?;
        Ok((base + self.refine.forward(&inp)?)?.clamp(0.0, 1.0)?)
    }
}

/// The two compensation networks (separate weights for luma and chroma).
#[derive(Clone, Debug)]
pub struct Compensation {
    pub y: McNet,
    pub uv: McNet,
}

impl Compensation {
    pub fn new(store: &ParamStore) -> Result<Self> {
        Ok(Compensation {
            y: McNet::new(&store.root().pp("mcnet_y"), 1)?,
            uv: McNet::new(&store.root().pp("mcnet_uv"), 2)?,
        })
    }
}

pub fn motion_compensate_y(net: &Compensation, ref_y_past: &Plane, ref_y_future: &Plane, flows: &FlowPair, device: &Device, dtype: DType) -> Result<Plane> {
    let p = planes_to_tensor(&[ref_y_past], device)?.to_dtype(dtype)?;
    let f = planes_to_tensor(&[ref_y_future], device)?.to_dtype(dtype)?;
    let m = flows.to_tensor(device)?.to_dtype(dtype)?;
    Ok(tensor_to_planes(&net.y.forward(&p, &f, &m)?, 0)?.remove(0))
}

/// `ref_uv_*` hold (U, V); `flows_down` must come from [`FlowPair::downscale`].
pub fn motion_compensate_uv(net: &Compensation, ref_uv_past: [&Plane; 2], ref_uv_future: [&Plane; 2], flows_down: &FlowPair, device: &Device, dtype: DType) -> Result<[Plane; 2]> {
    let p = planes_to_tensor(&ref_uv_past, device)?.to_dtype(dtype)?;
    let f = planes_to_tensor(&ref_uv_future, device)?.to_dtype(dtype)?;
    let m = flows_down.to_tensor(device)?.to_dtype(dtype)?;
    let mut out = tensor_to_planes(&net.uv.forward(&p, &f, &m)?, 0)?;
    let v = out.pop().unwrap();
    let u = out.pop().unwrap();
    Ok([u, v])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::yuv::to_444;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(rng: &mut ChaCha8Rng, w: usize, h: usize, amp: f32) -> Plane {
        let data = (0..w * h).map(|_| rng.random_range(-amp..amp)).collect();
        Plane::from_vec(w, h, data).unwrap()
    }

    fn textured(w: usize, h: usize, seed: u64) -> Plane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_plane(&mut rng, w, h, 1.0);
        Plane::from_fn(w, h, |x, y| 0.5 + 0.4 * p.get(x, y))
    }

    #[test]
    fn constant_flow_halves() {
        let f = FlowField::constant(4, 4, 2.0, -3.0);
        let d = downscale_flow(&f).unwrap();
        assert_eq!(d.dims(), (2, 2));
        assert!(d.u.data().iter().all(|&x| x == 1.0));
        assert!(d.v.data().iter().all(|&x| x == -1.5));
        let z = downscale_flow(&FlowField::zeros(6, 4)).unwrap();
        assert!(z.u.data().iter().chain(z.v.data()).all(|&x| x == 0.0));
    }

    #[test]
    fn downscale_matches_nested_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let w = 2 * rng.random_range(1..12);
            let h = 2 * rng.random_range(1..12);
            let f = FlowField::new(random_plane(&mut rng, w, h, 20.0), random_plane(&mut rng, w, h, 20.0)).unwrap();
            let d = downscale_flow(&f).unwrap();
            for (src, dst) in [(&f.u, &d.u), (&f.v, &d.v)] {
                for y in 0..h / 2 {
                    for x in 0..w / 2 {
                        let mut acc = 0.0f64;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                acc += src.get(2 * x + dx, 2 * y + dy) as f64;
                            }
                        }
                        assert_eq!(dst.get(x, y), (acc / 4.0 / 2.0) as f32);
                    }
                }
            }
        }
    }

    #[test]
    fn downscale_rejects_odd() {
        assert!(matches!(downscale_flow(&FlowField::zeros(5, 4)), Err(Error::Dimension(_))));
    }

    #[test]
    fn tensor_downscale_agrees_with_host() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = FlowField::new(random_plane(&mut rng, 8, 6, 5.0), random_plane(&mut rng, 8, 6, 5.0)).unwrap();
        let t = downscale_flow_tensor(&f.to_tensor(&Device::Cpu).unwrap()).unwrap();
        let back = FlowField::from_tensor(&t, 0, 0).unwrap();
        let host = downscale_flow(&f).unwrap();
        for (a, b) in back.u.data().iter().zip(host.u.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn chroma_upsampling_matches_host() {
        let p = textured(6, 4, 1);
        let t = planes_to_tensor(&[&p], &Device::Cpu).unwrap();
        let up = tensor_to_planes(&upsample_chroma(&t).unwrap(), 0).unwrap().remove(0);
        let host = crate::yuv::bilinear_upsample(&p);
        assert_eq!(up.dims(), host.dims());
        for (a, b) in up.data().iter().zip(host.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn untrained_estimator_outputs_luma_resolution_zero_flow() {
        let store = ParamStore::new(1, DType::F32);
        let me = MeNet::new(&store).unwrap();
        let f = Frame420::new(textured(22, 10, 1), textured(11, 5, 2), textured(11, 5, 3)).unwrap();
        let g = Frame420::new(textured(22, 10, 4), textured(11, 5, 5), textured(11, 5, 6)).unwrap();
        let flow = estimate_flow(&me, &to_444(&f), &to_444(&g), &Device::Cpu, DType::F32).unwrap();
        assert_eq!(flow.dims(), (22, 10));
        assert_eq!(flow.mean_magnitude(), 0.0);
        let h = Frame420::constant(20, 10, 0.5, 0.5, 0.5).unwrap();
        assert!(matches!(
            estimate_flow(&me, &to_444(&f), &to_444(&h), &Device::Cpu, DType::F32),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn prediction_is_the_scaled_reference_flow() {
        let store = ParamStore::new(2, DType::F32);
        let me = MeNet::new(&store).unwrap();
        let mp = MpNet::new(&store).unwrap();
        // Make the last estimator level output a constant flow of (4, 0).
        let bias = store.get("menet.level0.c2.bias").unwrap();
        bias.set(&Tensor::new(&[4.0f32, 0.0], &Device::Cpu).unwrap()).unwrap();
        let a = Frame420::constant(16, 8, 0.3, 0.5, 0.5).unwrap();
        let b = Frame420::constant(16, 8, 0.6, 0.5, 0.5).unwrap();
        let p = predict_flows(&me, &mp, &a, &b, &Device::Cpu, DType::F32).unwrap();
        let coarse_scale = (1 << (ME_LEVELS - 1)) as f64;
        assert!((p.backward.mean_u() + 2.0 * coarse_scale).abs() < 1e-4, "{}", p.backward.mean_u());
        assert!((p.forward.mean_u() - 2.0 * coarse_scale).abs() < 1e-4);
        assert_eq!(p.dims(), (16, 8));
        let t = p.to_tensor(&Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[1, 4, 8, 16]);
    }

    #[test]
    fn prediction_ignores_everything_but_the_references() {
        // The references are the only inputs: two calls with the same
        // references agree, whatever else exists.
        let store = ParamStore::new(3, DType::F32);
        let me = MeNet::new(&store).unwrap();
        let mp = MpNet::new(&store).unwrap();
        crate::flow::perturb_parameters(&store, 9, 0.05).unwrap();
        let a = Frame420::new(textured(16, 8, 1), textured(8, 4, 2), textured(8, 4, 3)).unwrap();
        let b = Frame420::new(textured(16, 8, 4), textured(8, 4, 5), textured(8, 4, 6)).unwrap();
        let p1 = predict_flows(&me, &mp, &a, &b, &Device::Cpu, DType::F32).unwrap();
        let _current = Frame420::new(textured(16, 8, 7), textured(8, 4, 8), textured(8, 4, 9)).unwrap();
        let p2 = predict_flows(&me, &mp, &a, &b, &Device::Cpu, DType::F32).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn compensation_starts_as_reference_average() {
        let store = ParamStore::new(4, DType::F32);
        let mc = Compensation::new(&store).unwrap();
        assert_eq!(mc.y.width(), 48);
        assert_eq!(mc.uv.width(), 48);
        let a = textured(16, 8, 1);
        let b = textured(16, 8, 2);
        let out = motion_compensate_y(&mc, &a, &b, &FlowPair::zeros(16, 8), &Device::Cpu, DType::F32).unwrap();
        for i in 0..a.data().len() {
            let m = 0.5 * (a.data()[i] + b.data()[i]);
            assert!((out.data()[i] - m).abs() < 1e-6);
        }
        let u = textured(8, 4, 3);
        let v = textured(8, 4, 4);
        let flows = FlowPair::zeros(16, 8).downscale().unwrap();
        let [ou, ov] = motion_compensate_uv(&mc, [&u, &v], [&u, &v], &flows, &Device::Cpu, DType::F32).unwrap();
        assert_eq!(ou.dims(), (8, 4));
        assert_eq!(ou, u);
        assert_eq!(ov, v);
    }

    #[test]
    fn compensation_networks_share_no_weights() {
        let store = ParamStore::new(5, DType::F32);
        let _ = Compensation::new(&store).unwrap();
        let names = store.names();
        let y: Vec<_> = names.iter().filter(|n| n.starts_with("mcnet_y.")).collect();
        let uv: Vec<_> = names.iter().filter(|n| n.starts_with("mcnet_uv.")).collect();
        assert_eq!(y.len(), 6);
        assert_eq!(uv.len(), 6);
        let vy: Vec<_> = y.iter().map(|n| store.get(n).unwrap()).collect();
        for n in &uv {
            let v = store.get(n).unwrap();
            assert!(vy.iter().all(|w| w.as_tensor().id() != v.as_tensor().id()));
        }
    }

    #[test]
    fn compensation_checks_flow_resolution() {
        let store = ParamStore::new(6, DType::F32);
        let mc = Compensation::new(&store).unwrap();
        let a = textured(16, 8, 1);
        assert!(matches!(
            motion_compensate_y(&mc, &a, &a, &FlowPair::zeros(8, 4), &Device::Cpu, DType::F32),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn shifted_flow_compensates_translation() {
        let store = ParamStore::new(8, DType::F32);
        let mc = Compensation::new(&store).unwrap();
        let base = textured(20, 8, 3);
        // past is the current frame moved 1 px right, future 1 px left.
        let past = Plane::from_fn(20, 8, |x, y| base.get_clamped(x as isize - 1, y as isize));
        let future = Plane::from_fn(20, 8, |x, y| base.get_clamped(x as isize + 1, y as isize));
        let flows = FlowPair::new(FlowField::constant(20, 8, 1.0, 0.0), FlowField::constant(20, 8, -1.0, 0.0)).unwrap();
        let out = motion_compensate_y(&mc, &past, &future, &flows, &Device::Cpu, DType::F32).unwrap();
        for y in 0..8 {
            for x in 2..18 {
                assert!((out.get(x, y) - base.get(x, y)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn flow_dump_is_planar_f32() {
        let f = FlowField::new(Plane::filled(2, 1, 1.5), Plane::filled(2, 1, -2.0)).unwrap();
        let mut out = Vec::new();
        f.write_planar(&mut out).unwrap();
        assert_eq!(out.len(), 16);
        assert_eq!(f32::from_le_bytes(out[8..12].try_into().unwrap()), -2.0);
    }

    #[test]
    fn non_finite_flows_are_rejected() {
        let u = Plane::filled(2, 2, f32::NAN);
        assert!(FlowField::new(u, Plane::zeros(2, 2)).is_err());
    }
}
