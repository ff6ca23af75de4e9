//! Rate-distortion objective over a group of frames.

use candle_core::Tensor;

use crate::codec::FrameTensors;
use crate::error::{Error, Result};

/// Luma and chroma weights of the distortion term, and their sum.
pub const LUMA_WEIGHT: f64 = 6.0;
pub const CHROMA_WEIGHT: f64 = 2.0;
pub const WEIGHT_SUM: f64 = 8.0;

/// One frame's contribution to the objective.
pub struct FrameTerm<'a> {
    pub original: &'a FrameTensors,
    pub recon: &'a FrameTensors,
    /// Estimated bits summed over the batch.
    pub bits: &'a Tensor,
    /// Rate parameter of every sample in the batch.
    pub lambdas: &'a [f64],
}

/// Per-sample mean squared error of an (N, C, H, W) pair, shape (N,).
pub fn per_sample_mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.sqr()?.flatten_from(1)?.mean(1)?)
}

/// `(1/T) Σ_t [ mean_n λ_n (6 MSE_Y + 2 MSE_UV) / 8 + R_t ]`, with `R_t`
/// the frame's bits per luma pixel and per sample.
pub fn rd_loss(frames: &[FrameTerm]) -> Result<Tensor> {
    if frames.is_empty() {
        return Err(Error::Config("rd_loss needs at least one frame".into()));
    }
    let mut total: Option<Tensor> = None;
    for f in frames {
        let (n, _, h, w) = f.original.y.dims4()?;
        if f.lambdas.len() != n {
            return Err(Error::Shape(format!("{} lambdas for a batch of {n}", f.lambdas.len())));
        }
        let dev = f.original.y.device();
        let dtype = f.original.y.dtype();
        let mse_y = per_sample_mse(&f.original.y, &f.recon.y)?;
        let mse_uv = per_sample_mse(&f.original.uv, &f.recon.uv)?;
        let weighted = ((mse_y * (LUMA_WEIGHT / WEIGHT_SUM))? + (mse_uv * (CHROMA_WEIGHT / WEIGHT_SUM))?)?;
        let lambdas = Tensor::new(f.lambdas, dev)?.to_dtype(dtype)?;
        let dist = (weighted * lambdas)?.mean_all()?;
        let rate = (f.bits / (n * h * w) as f64)?;
        let term = (dist + rate)?;
        total = Some(match total {
            None => term,
            Some(t) => (t + term)?,
        });
    }
    Ok((total.unwrap() / frames.len() as f64)?)
}
