//! Training: the rate-distortion objective, synthetic clips and a staged
//! trainer (motion estimation, compensation, intra, then whole groups of
//! pictures).

pub mod loss;
pub mod synth;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::afmod::RateContext;
use crate::codec::{Checkpoint, FrameTensors, Model};
use crate::error::{Error, Result};
use crate::flow::{NoiseSource, Phase, QuantMode};
use crate::gop::{plan_gop, FrameType, GopPlan};
use crate::nn::scalar;
use crate::yuv::Frame420;

pub use loss::{rd_loss, FrameTerm};
pub use synth::{random_clip, random_flow_sample, seeded_clip, Scene, SynthConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Supervised motion-estimation steps.
    pub menet_steps: usize,
    /// Compensation warm-up steps on estimated flows.
    pub mc_steps: usize,
    /// Intra-only steps before whole-GOP training.
    pub intra_steps: usize,
    /// Whole-GOP steps.
    pub steps: usize,
    pub batch: usize,
    pub crop: usize,
    pub lr: f64,
    pub warmup_lr: f64,
    pub grad_clip: f64,
    pub intra_period: usize,
    /// Intra lambda is its table combination times `2^U(-j, j)`.
    pub intra_jitter: f64,
    pub quant: QuantMode,
    pub augment_std: f64,
    pub seed: u64,
    pub log_every: usize,
    pub synth: SynthConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            menet_steps: 2000,
            mc_steps: 1000,
            intra_steps: 2000,
            steps: 5000,
            batch: 8,
            crop: 256,
            lr: 1e-4,
            warmup_lr: 1e-3,
            grad_clip: 5.0,
            intra_period: 4,
            intra_jitter: 1.5,
            quant: QuantMode::Noise,
            augment_std: 0.0,
            seed: 0,
            log_every: 50,
            synth: SynthConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Small crops and budgets that fit a single CPU core.
    pub fn toy() -> Self {
        TrainConfig {
            menet_steps: 1500,
            mc_steps: 500,
            intra_steps: 1500,
            steps: 2500,
            batch: 2,
            crop: 32,
            lr: 5e-4,
            log_every: 25,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.crop == 0 || self.crop % 16 != 0 {
            return Err(Error::Config(format!("batch {} and crop {} must be positive, crop a multiple of 16", self.batch, self.crop)));
        }
        if !(self.lr > 0.0 && self.warmup_lr > 0.0 && self.grad_clip > 0.0) {
            return Err(Error::Config("learning rates and clip norm must be positive".into()));
        }
        if self.synth.frames < 2 {
            return Err(Error::Config("training clips need at least two frames".into()));
        }
        Ok(())
    }
}

/// Draws table indices so that every index appears once per round.
#[derive(Clone, Debug)]
pub struct LambdaSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl LambdaSampler {
    pub fn new(table_len: usize, seed: u64) -> Self {
        LambdaSampler {
            order: (0..table_len).collect(),
            pos: table_len,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    MotionEstimation,
    Compensation,
    Intra,
    Gop,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: Stage,
    pub step: usize,
    pub loss: f64,
    /// Estimated bits per pixel and frame; zero for stages without rate.
    pub bpp: f64,
    pub lambda_indices: Vec<usize>,
}

/// Mean rate-distortion loss on held-out clips, per table index.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Validation {
    pub loss: f64,
    pub per_lambda: Vec<LambdaValidation>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LambdaValidation {
    pub lambda_index: usize,
    pub loss: f64,
    pub bpp: f64,
    pub mse_y: f64,
}

fn batch_tensors(model: &Model, frames: &[&Frame420]) -> Result<FrameTensors> {
    FrameTensors::from_frames(frames, model.device(), model.dtype())
}

fn clip_tensors(model: &Model, clips: &[Vec<Frame420>]) -> Result<Vec<FrameTensors>> {
    let t = clips[0].len();
    (0..t)
        .map(|i| batch_tensors(model, &clips.iter().map(|c| &c[i]).collect::<Vec<_>>()))
        .collect()
}

fn named_vars(model: &Model, keep: impl Fn(&str) -> bool) -> Vec<(String, Var)> {
    model
        .store
        .names()
        .into_iter()
        .filter(|n| keep(n))
        .map(|n| {
            let v = model.store.get(&n).unwrap();
            (n, v)
        })
        .collect()
}

/// Rescales gradients to a global norm of at most `max_norm`; a non-finite
/// gradient is reported with the parameter it belongs to.
pub fn clip_gradients(grads: &mut GradStore, vars: &[(String, Var)], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for (name, v) in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            let s = scalar(&g.sqr()?.sum_all()?)?;
            if !s.is_finite() {
                return Err(Error::NumericFailure { layer: name.clone() });
            }
            sq += s;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for (_, v) in vars {
            if let Some(g) = grads.remove(v.as_tensor()) {
                grads.insert(v.as_tensor(), (g * k)?);
            }
        }
    }
    Ok(norm)
}

struct Optim {
    vars: Vec<(String, Var)>,
    opt: AdamW,
    clip: f64,
}

impl Optim {
    fn new(vars: Vec<(String, Var)>, lr: f64, clip: f64) -> Result<Self> {
        let params = ParamsAdamW {
            lr,
            weight_decay: 0.0,
            ..ParamsAdamW::default()
        };
        let opt = AdamW::new(vars.iter().map(|(_, v)| v.clone()).collect(), params)?;
        Ok(Optim { vars, opt, clip })
    }

    fn step(&mut self, loss: &Tensor) -> Result<()> {
        let mut grads = loss.backward()?;
        clip_gradients(&mut grads, &self.vars, self.clip)?;
        self.opt.step(&grads)?;
        Ok(())
    }
}

fn check_finite(v: f64, what: impl FnOnce() -> String) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericFailure { layer: what() })
    }
}

/// Name of the first parameter holding a non-finite value.
pub fn non_finite_parameter(model: &Model) -> Result<Option<String>> {
    for name in model.store.names() {
        let v = model.store.get(&name).unwrap();
        if !scalar(&v.as_tensor().abs()?.sum_all()?)?.is_finite() {
            return Ok(Some(name));
        }
    }
    Ok(None)
}

/// Points a numeric failure at a broken parameter when there is one.
fn diagnose(model: &Model, err: Error) -> Error {
    match err {
        Error::NumericFailure { layer } => match non_finite_parameter(model) {
            Ok(Some(p)) => Error::NumericFailure {
                layer: format!("{p} (seen in {layer})"),
            },
            _ => Error::NumericFailure { layer },
        },
        e => e,
    }
}

pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    rng: ChaCha8Rng,
    noise: NoiseSource,
    sampler: LambdaSampler,
    plan: GopPlan,
    pub history: Vec<StepRecord>,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let plan = plan_gop(cfg.synth.frames, cfg.intra_period)?;
        let table_len = model.config.lambda_table.len();
        Ok(Trainer {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            noise: NoiseSource::new(cfg.seed ^ 0x5eed),
            sampler: LambdaSampler::new(table_len, cfg.seed ^ 0x1a4b),
            model,
            cfg,
            plan,
            history: Vec::new(),
        })
    }

    fn crop(&self) -> (usize, usize) {
        (self.cfg.crop, self.cfg.crop)
    }

    fn record(&mut self, stage: Stage, step: usize, loss: f64, bpp: f64, lambda_indices: Vec<usize>) {
        if self.cfg.log_every > 0 && step % self.cfg.log_every == 0 {
            log::info!("{stage:?} step {step}: loss {loss:.5} bpp {bpp:.4}");
        }
        self.history.push(StepRecord {
            stage,
            step,
            loss,
            bpp,
            lambda_indices,
        });
    }

    /// Supervised motion estimation on exact synthetic flows (L1 error).
    pub fn train_motion_estimation(&mut self, steps: usize) -> Result<()> {
        let mut opt = Optim::new(named_vars(&self.model, |n| n.starts_with("menet.")), self.cfg.warmup_lr, self.cfg.grad_clip)?;
        for step in 0..steps {
            let samples = (0..self.cfg.batch)
                .map(|_| random_flow_sample(&self.cfg.synth, self.crop(), 4, &mut self.rng))
                .collect::<Result<Vec<_>>>()?;
            let m = &self.model;
            let cur = batch_tensors(m, &samples.iter().map(|s| &s.cur).collect::<Vec<_>>())?.yuv444()?;
            let r = batch_tensors(m, &samples.iter().map(|s| &s.reference).collect::<Vec<_>>())?.yuv444()?;
            let gt = Tensor::cat(
                &samples.iter().map(|s| s.flow.to_tensor(m.device())).collect::<Result<Vec<_>>>()?,
                0,
            )?
            .to_dtype(m.dtype())?;
            let flow = m.menet.forward(&cur, &r)?;
            let loss = (flow - gt)?.abs()?.mean_all()?;
            let l = check_finite(scalar(&loss)?, || "menet flow loss".into())?;
            opt.step(&loss)?;
            self.record(Stage::MotionEstimation, step, l, 0.0, vec![]);
        }
        Ok(())
    }

    fn random_clips(&mut self) -> Result<Vec<Vec<Frame420>>> {
        (0..self.cfg.batch)
            .map(|_| random_clip(&self.cfg.synth, (self.cfg.crop, self.cfg.crop), &mut self.rng))
            .collect()
    }

    /// Compensation warm-up: bi-directional prediction of the middle frame
    /// from estimated flows, trained for squared error.
    pub fn train_compensation(&mut self, steps: usize) -> Result<()> {
        let mut opt = Optim::new(named_vars(&self.model, |n| n.starts_with("mcnet_")), self.cfg.warmup_lr, self.cfg.grad_clip)?;
        let last = self.cfg.synth.frames - 1;
        for step in 0..steps {
            let clips = self.random_clips()?;
            let x = clip_tensors(&self.model, &clips)?;
            let mid = last / 2;
            let pred = self.model.compensate_with_estimated(&x[mid], &x[0], &x[last])?;
            let mse_y = (&pred.y - &x[mid].y)?.sqr()?.mean_all()?;
            let mse_uv = (&pred.uv - &x[mid].uv)?.sqr()?.mean_all()?;
            let loss = ((mse_y * 0.75)? + (mse_uv * 0.25)?)?;
            let l = check_finite(scalar(&loss)?, || "compensation loss".into())?;
            opt.step(&loss)?;
            self.record(Stage::Compensation, step, l, 0.0, vec![]);
        }
        Ok(())
    }

    fn intra_lambda(&mut self, idx: usize, jitter: bool) -> f64 {
        let c = &self.model.config;
        let base = c.intra_combos[idx];
        let (lo, hi) = c.intra_lambda_range;
        let v = if jitter && self.cfg.intra_jitter > 0.0 {
            base * 2f64.powf(self.rng.random_range(-self.cfg.intra_jitter..=self.cfg.intra_jitter))
        } else {
            base
        };
        v.clamp(lo, hi)
    }

    /// Intra-only steps on single frames.
    pub fn train_intra(&mut self, steps: usize) -> Result<()> {
        let mut opt = Optim::new(named_vars(&self.model, |n| n.starts_with("intra_")), self.cfg.warmup_lr, self.cfg.grad_clip)?;
        for step in 0..steps {
            let frames = (0..self.cfg.batch)
                .map(|_| {
                    let (scene, x0, y0) = synth::random_window(&self.cfg.synth, self.crop(), &mut self.rng)?;
                    let t = self.rng.random_range(0..self.cfg.synth.frames) as f64;
                    scene.render(t, x0, y0, self.cfg.crop, self.cfg.crop)
                })
                .collect::<Result<Vec<_>>>()?;
            let x = batch_tensors(&self.model, &frames.iter().collect::<Vec<_>>())?;
            let idx: Vec<usize> = (0..self.cfg.batch).map(|_| self.sampler.next_index()).collect();
            let lambdas: Vec<f64> = idx.iter().map(|&i| self.intra_lambda(i, true)).collect();
            let ctxs: Vec<RateContext> = idx.iter().zip(&lambdas).map(|(&i, &l)| RateContext::intra(i, l)).collect();
            let ctx = self.model.intra_context(&ctxs)?;
            let mut phase = Phase::Train {
                noise: &mut self.noise,
                mode: self.cfg.quant,
                augment_std: self.cfg.augment_std,
            };
            let (rec, bits) = self.model.train_intra(&x, &ctx, &mut phase)?;
            let loss = rd_loss(&[FrameTerm {
                original: &x,
                recon: &rec,
                bits: &bits,
                lambdas: &lambdas,
            }])?;
            let l = check_finite(scalar(&loss)?, || "intra rate-distortion loss".into())?;
            let bpp = scalar(&bits)? / (self.cfg.batch * self.cfg.crop * self.cfg.crop) as f64;
            opt.step(&loss)?;
            self.record(Stage::Intra, step, l, bpp, idx);
        }
        Ok(())
    }

    /// One differentiable pass over a batch of clips in coding order.
    /// Returns the loss, the per-frame bits and per-frame luma MSE.
    fn gop_pass(&mut self, clips: &[Vec<Frame420>], idx: &[usize], jitter: bool, train: bool) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
        let x = clip_tensors(&self.model, clips)?;
        let intra: Vec<f64> = idx.iter().map(|&i| self.intra_lambda(i, jitter)).collect();
        let inter: Vec<f64> = idx.iter().map(|&i| self.model.config.lambda_table[i]).collect();
        let mut recon: Vec<Option<FrameTensors>> = vec![None; x.len()];
        let mut outputs = Vec::new();
        let mut phase = if train {
            Phase::Train {
                noise: &mut self.noise,
                mode: self.cfg.quant,
                augment_std: self.cfg.augment_std,
            }
        } else {
            Phase::Infer
        };
        for e in &self.plan.entries {
            let d = e.display_index;
            let (rec, bits, lambdas) = match e.frame_type {
                FrameType::I => {
                    let ctxs: Vec<RateContext> = idx.iter().zip(&intra).map(|(&i, &l)| RateContext::intra(i, l)).collect();
                    let ctx = self.model.intra_context(&ctxs)?;
                    let (r, b) = self.model.train_intra(&x[d], &ctx, &mut phase)?;
                    (r, b, intra.clone())
                }
                FrameType::B => {
                    let ctxs: Vec<RateContext> = idx.iter().map(|&i| RateContext::inter(i, e.coding_level)).collect();
                    let ctx = self.model.inter_context(&ctxs)?;
                    let get = |r: Option<usize>| {
                        r.and_then(|r| recon[r].as_ref())
                            .ok_or_else(|| Error::Ordering(format!("frame {d} references an uncoded frame")))
                    };
                    let (r, b) = self.model.train_b(&x[d], get(e.ref_past)?, get(e.ref_future)?, &ctx, &mut phase)?;
                    (r, b, inter.clone())
                }
            };
            recon[d] = Some(rec);
            outputs.push((d, bits, lambdas));
        }
        let mut bits_host = Vec::new();
        let mut mse_host = Vec::new();
        for (d, b, _) in &outputs {
            let r = recon[*d].as_ref().unwrap();
            let bv = check_finite(scalar(b)?, || format!("estimated bits of frame {d}"))?;
            let mv = check_finite(scalar(&(&r.y - &x[*d].y)?.sqr()?.mean_all()?)?, || format!("reconstruction of frame {d}"))?;
            bits_host.push(bv);
            mse_host.push(mv);
        }
        let terms: Vec<FrameTerm> = outputs
            .iter()
            .map(|(d, b, l)| FrameTerm {
                original: &x[*d],
                recon: recon[*d].as_ref().unwrap(),
                bits: b,
                lambdas: l,
            })
            .collect();
        Ok((rd_loss(&terms)?, bits_host, mse_host))
    }

    /// Whole-GOP steps; motion estimation stays frozen.
    pub fn train_gop(&mut self, steps: usize) -> Result<()> {
        let mut opt = Optim::new(named_vars(&self.model, |n| !n.starts_with("menet.")), self.cfg.lr, self.cfg.grad_clip)?;
        let pixels = (self.cfg.batch * self.cfg.crop * self.cfg.crop) as f64;
        for step in 0..steps {
            let clips = self.random_clips()?;
            let idx: Vec<usize> = (0..self.cfg.batch).map(|_| self.sampler.next_index()).collect();
            let (loss, bits, _) = self.gop_pass(&clips, &idx, true, true)?;
            let l = check_finite(scalar(&loss)?, || "rate-distortion loss".into())?;
            opt.step(&loss)?;
            let bpp = bits.iter().sum::<f64>() / (pixels * bits.len() as f64);
            self.record(Stage::Gop, step, l, bpp, idx);
        }
        Ok(())
    }

    /// Runs every stage with the configured step counts.
    pub fn run(&mut self) -> Result<()> {
        let c = self.cfg.clone();
        let r = self
            .train_motion_estimation(c.menet_steps)
            .and_then(|_| self.train_compensation(c.mc_steps))
            .and_then(|_| self.train_intra(c.intra_steps))
            .and_then(|_| self.train_gop(c.steps));
        r.map_err(|e| diagnose(&self.model, e))
    }

    /// Rounded-latent loss on fixed clips for every table index.
    pub fn validate(&mut self, clips: &[Vec<Frame420>]) -> Result<Validation> {
        validate(self, clips)
    }

    pub fn into_checkpoint(self, extra: serde_json::Value) -> Result<Checkpoint> {
        let gop: Vec<&StepRecord> = self.history.iter().filter(|r| r.stage == Stage::Gop).collect();
        let provenance = serde_json::json!({
            "train": self.cfg,
            "gop_loss": gop.iter().map(|r| r.loss).collect::<Vec<_>>(),
            "gop_lambda_indices": gop.iter().map(|r| r.lambda_indices.clone()).collect::<Vec<_>>(),
            "extra": extra,
        });
        Checkpoint::from_model(self.model, provenance)
    }
}

fn validate(tr: &mut Trainer, clips: &[Vec<Frame420>]) -> Result<Validation> {
    if clips.is_empty() {
        return Err(Error::Config("no validation clips".into()));
    }
    let n = tr.model.config.lambda_table.len();
    let mut per_lambda = Vec::with_capacity(n);
    for i in 0..n {
        let mut loss = 0.0;
        let mut bpp = 0.0;
        let mut mse = 0.0;
        for clip in clips {
            let (h, w) = (clip[0].height(), clip[0].width());
            let (l, bits, m) = tr.gop_pass(std::slice::from_ref(clip), &[i], false, false)?;
            loss += scalar(&l)?;
            bpp += bits.iter().sum::<f64>() / (bits.len() * h * w) as f64;
            mse += m.iter().sum::<f64>() / m.len() as f64;
        }
        let k = clips.len() as f64;
        per_lambda.push(LambdaValidation {
            lambda_index: i,
            loss: loss / k,
            bpp: bpp / k,
            mse_y: mse / k,
        });
    }
    Ok(Validation {
        loss: per_lambda.iter().map(|p| p.loss).sum::<f64>() / n as f64,
        per_lambda,
    })
}

/// Held-out clips drawn from scenes no training step sees.
pub fn held_out_clips(cfg: &SynthConfig, crop: usize, count: usize, seed: u64) -> Result<Vec<Vec<Frame420>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed_beef);
    (0..count).map(|_| random_clip(cfg, (crop, crop), &mut rng)).collect()
}
