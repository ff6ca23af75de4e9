//! Synthetic training material: layered scenes of textured patches that
//! translate and rotate, rendered in RGB and converted to 4:2:0. Scenes are
//! analytic, so any window and any time can be rendered and the exact flow
//! between two times is known.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::FlowField;
use crate::yuv::{rgb_to_yuv420, Frame420, Plane, RgbImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Largest translation speed, pixels per frame.
    pub max_speed: f64,
    /// Largest rotation speed, radians per frame.
    pub max_spin: f64,
    pub patches: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 448,
            height: 256,
            frames: 5,
            max_speed: 2.0,
            max_spin: 0.02,
            patches: 3,
        }
    }
}

#[derive(Clone, Debug)]
struct Wave {
    k: [f64; 2],
    phase: f64,
    amp: [f64; 3],
    sharp: bool,
}

#[derive(Clone, Debug)]
struct Texture {
    base: [f64; 3],
    waves: Vec<Wave>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let base = [0.0; 3].map(|_: f64| rng.random_range(0.2..0.8));
        let n = rng.random_range(3..7);
        let waves = (0..n)
            .map(|i| {
                let freq = if i == 0 { rng.random_range(0.8..1.6) } else { rng.random_range(0.05..0.7) };
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let a = rng.random_range(0.04..0.16);
                Wave {
                    k: [freq * angle.cos(), freq * angle.sin()],
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    amp: [0.0; 3].map(|_: f64| a * rng.random_range(0.3..1.0)),
                    sharp: rng.random_bool(0.4),
                }
            })
            .collect();
        Texture { base, waves }
    }

    fn sample(&self, q: [f64; 2]) -> [f64; 3] {
        let mut c = self.base;
        for w in &self.waves {
            let s = (w.k[0] * q[0] + w.k[1] * q[1] + w.phase).sin();
            let s = if w.sharp { (3.0 * s).tanh() } else { s };
            for (ch, a) in c.iter_mut().zip(w.amp) {
                *ch += a * s;
            }
        }
        c.map(|v| v.clamp(0.0, 1.0))
    }
}

#[derive(Clone, Debug)]
enum Shape {
    Everywhere,
    Rect([f64; 2]),
    Disc(f64),
}

#[derive(Clone, Debug)]
struct Layer {
    texture: Texture,
    shape: Shape,
    center: [f64; 2],
    velocity: [f64; 2],
    spin: f64,
}

impl Layer {
    fn pose(&self, t: f64) -> ([f64; 2], f64) {
        (
            [self.center[0] + self.velocity[0] * t, self.center[1] + self.velocity[1] * t],
            self.spin * t,
        )
    }

    fn to_local(&self, p: [f64; 2], t: f64) -> [f64; 2] {
        let (c, a) = self.pose(t);
        let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
        let (s, co) = a.sin_cos();
        [co * dx + s * dy, -s * dx + co * dy]
    }

    fn to_screen(&self, q: [f64; 2], t: f64) -> [f64; 2] {
        let (c, a) = self.pose(t);
        let (s, co) = a.sin_cos();
        [c[0] + co * q[0] - s * q[1], c[1] + s * q[0] + co * q[1]]
    }

    fn contains(&self, q: [f64; 2]) -> bool {
        match self.shape {
            Shape::Everywhere => true,
            Shape::Rect([hx, hy]) => q[0].abs() <= hx && q[1].abs() <= hy,
            Shape::Disc(r) => q[0] * q[0] + q[1] * q[1] <= r * r,
        }
    }
}

/// A randomly drawn scene: a moving background and patches on top of it.
#[derive(Clone, Debug)]
pub struct Scene {
    layers: Vec<Layer>,
    cfg: SynthConfig,
}

fn velocity(rng: &mut ChaCha8Rng, max: f64) -> [f64; 2] {
    let speed = rng.random_range(0.0..=max);
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    [speed * a.cos(), speed * a.sin()]
}

impl Scene {
    pub fn random(cfg: &SynthConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (cfg.width as f64, cfg.height as f64);
        let mut layers = vec![Layer {
            texture: Texture::random(&mut rng),
            shape: Shape::Everywhere,
            center: [w / 2.0, h / 2.0],
            velocity: velocity(&mut rng, cfg.max_speed),
            spin: rng.random_range(-0.25..=0.25) * cfg.max_spin,
        }];
        let side = w.min(h);
        for _ in 0..cfg.patches {
            let shape = if rng.random_bool(0.5) {
                Shape::Rect([rng.random_range(0.08..0.3) * side, rng.random_range(0.08..0.3) * side])
            } else {
                Shape::Disc(rng.random_range(0.08..0.3) * side)
            };
            layers.push(Layer {
                texture: Texture::random(&mut rng),
                shape,
                center: [rng.random_range(0.0..w), rng.random_range(0.0..h)],
                velocity: velocity(&mut rng, cfg.max_speed),
                spin: rng.random_range(-1.0..=1.0) * cfg.max_spin,
            });
        }
        Scene { layers, cfg: cfg.clone() }
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    fn top(&self, p: [f64; 2], t: f64) -> (&Layer, [f64; 2]) {
        self.layers
            .iter()
            .rev()
            .map(|l| (l, l.to_local(p, t)))
            .find(|(l, q)| l.contains(*q))
            .unwrap()
    }

    fn check_window(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<()> {
        if w == 0 || h == 0 || w % 2 != 0 || h % 2 != 0 || x0 + w > self.cfg.width || y0 + h > self.cfg.height {
            return Err(Error::Dimension(format!(
                "window {w}x{h}+{x0}+{y0} outside {}x{} scene or odd",
                self.cfg.width, self.cfg.height
            )));
        }
        Ok(())
    }

    /// Renders the window with top-left corner `(x0, y0)` at time `t`.
    pub fn render_rgb(&self, t: f64, x0: usize, y0: usize, w: usize, h: usize) -> Result<RgbImage> {
        self.check_window(x0, y0, w, h)?;
        let mut data = Vec::with_capacity(w * h * 3);
        for j in 0..h {
            for i in 0..w {
                let p = [(x0 + i) as f64, (y0 + j) as f64];
                let (l, q) = self.top(p, t);
                data.extend(l.texture.sample(q).map(|c| c as f32));
            }
        }
        RgbImage::new(w, h, data)
    }

    pub fn render(&self, t: f64, x0: usize, y0: usize, w: usize, h: usize) -> Result<Frame420> {
        rgb_to_yuv420(&self.render_rgb(t, x0, y0, w, h)?)
    }

    /// Exact backward flow from the frame at `t` to the frame at `r`.
    pub fn flow(&self, t: f64, r: f64, x0: usize, y0: usize, w: usize, h: usize) -> Result<FlowField> {
        self.check_window(x0, y0, w, h)?;
        let mut u = Plane::zeros(w, h);
        let mut v = Plane::zeros(w, h);
        for j in 0..h {
            for i in 0..w {
                let p = [(x0 + i) as f64, (y0 + j) as f64];
                let (l, q) = self.top(p, t);
                let s = l.to_screen(q, r);
                u.set(i, j, (s[0] - p[0]) as f32);
                v.set(i, j, (s[1] - p[1]) as f32);
            }
        }
        FlowField::new(u, v)
    }

    /// All frames of the clip, cropped to a window.
    pub fn clip(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Vec<Frame420>> {
        (0..self.cfg.frames).map(|t| self.render(t as f64, x0, y0, w, h)).collect()
    }

    pub fn full_clip(&self) -> Result<Vec<Frame420>> {
        self.clip(0, 0, self.cfg.width, self.cfg.height)
    }
}

/// Draws a scene and a random window of the given size.
pub fn random_window(cfg: &SynthConfig, crop: (usize, usize), rng: &mut ChaCha8Rng) -> Result<(Scene, usize, usize)> {
    let (w, h) = crop;
    if w > cfg.width || h > cfg.height {
        return Err(Error::Config(format!("crop {w}x{h} exceeds {}x{} scenes", cfg.width, cfg.height)));
    }
    let scene = Scene::random(cfg, rng.random());
    let x0 = rng.random_range(0..=(cfg.width - w) / 2) * 2;
    let y0 = rng.random_range(0..=(cfg.height - h) / 2) * 2;
    Ok((scene, x0, y0))
}

/// A clip of `cfg.frames` frames cropped to `crop`.
pub fn random_clip(cfg: &SynthConfig, crop: (usize, usize), rng: &mut ChaCha8Rng) -> Result<Vec<Frame420>> {
    let (scene, x0, y0) = random_window(cfg, crop, rng)?;
    scene.clip(x0, y0, crop.0, crop.1)
}

/// A clip drawn from its own seed; the same seed always gives the same clip.
pub fn seeded_clip(cfg: &SynthConfig, size: (usize, usize), seed: u64) -> Result<Vec<Frame420>> {
    random_clip(cfg, size, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// A frame pair `frame_{t}`, `frame_{t+d}` and the exact flow between them.
pub struct FlowSample {
    pub cur: Frame420,
    pub reference: Frame420,
    pub flow: FlowField,
}

pub fn random_flow_sample(cfg: &SynthConfig, crop: (usize, usize), max_distance: u32, rng: &mut ChaCha8Rng) -> Result<FlowSample> {
    let (scene, x0, y0) = random_window(cfg, crop, rng)?;
    let d = rng.random_range(1..=max_distance.max(1)) as f64;
    let d = if rng.random_bool(0.5) { d } else { -d };
    let t = rng.random_range(0.0..cfg.frames as f64);
    Ok(FlowSample {
        cur: scene.render(t, x0, y0, crop.0, crop.1)?,
        reference: scene.render(t + d, x0, y0, crop.0, crop.1)?,
        flow: scene.flow(t, t + d, x0, y0, crop.0, crop.1)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::warp;
    use candle_core::{Device, Tensor};

    fn small() -> SynthConfig {
        SynthConfig {
            width: 64,
            height: 48,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn scenes_are_deterministic_and_distinct() {
        let a = Scene::random(&small(), 7).full_clip().unwrap();
        let b = Scene::random(&small(), 7).full_clip().unwrap();
        let c = Scene::random(&small(), 8).full_clip().unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 5);
        assert_eq!((a[0].width(), a[0].height()), (64, 48));
    }

    #[test]
    fn windows_agree_with_the_full_frame() {
        let s = Scene::random(&small(), 3);
        let full = s.render(1.5, 0, 0, 64, 48).unwrap();
        let win = s.render(1.5, 10, 6, 20, 16).unwrap();
        for j in 0..16 {
            for i in 0..20 {
                assert_eq!(win.y.get(i, j), full.y.get(i + 10, j + 6));
            }
        }
    }

    #[test]
    fn exact_flow_warps_reference_onto_current() {
        let cfg = SynthConfig {
            patches: 0,
            ..small()
        };
        let s = Scene::random(&cfg, 11);
        let cur = s.render(2.0, 16, 8, 32, 32).unwrap();
        let r = s.render(0.0, 16, 8, 32, 32).unwrap();
        let f = s.flow(2.0, 0.0, 16, 8, 32, 32).unwrap();
        let dev = Device::Cpu;
        let rt = Tensor::from_vec(r.y.data().to_vec(), (1, 1, 32, 32), &dev).unwrap();
        let w = warp(&rt, &f.to_tensor(&dev).unwrap()).unwrap();
        let w = w.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        // Compare away from the border where the fetch leaves the window.
        let mut err = 0.0;
        let mut n = 0;
        for j in 6..26 {
            for i in 6..26 {
                err += (w[j * 32 + i] - cur.y.get(i, j)).abs();
                n += 1;
            }
        }
        assert!(err / (n as f32) < 0.03, "{}", err / n as f32);
    }

    #[test]
    fn flows_respect_speed_limits() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..4 {
            let s = random_flow_sample(&cfg, (32, 32), 2, &mut rng).unwrap();
            let m = s.flow.mean_magnitude();
            // Rotation adds at most spin * distance * radius.
            assert!(m <= 2.0 * 2.0 + 0.02 * 2.0 * 64.0 + 1e-6, "{m}");
        }
    }
}
