//! Rate targeting: pick the table point nearest a bitrate, then refine the
//! continuous intra lambda by safeguarded regula falsi in the log domain.

use serde::{Deserialize, Serialize};

use super::{evaluate, RatePoint, RdPoint, SequenceCodec};
use crate::error::{Error, Result};
use crate::yuv::Frame420;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetOptions {
    /// Accepted relative distance to the target.
    pub tolerance: f64,
    /// Encodes allowed after the table sweep.
    pub max_probes: usize,
    pub intra_period: usize,
    /// Relative bpp drop tolerated between neighbouring probes before the
    /// rate curve counts as non-monotone.
    pub monotone_slack: f64,
}

impl Default for TargetOptions {
    fn default() -> Self {
        TargetOptions {
            tolerance: 0.02,
            max_probes: 8,
            intra_period: 32,
            monotone_slack: 0.005,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub lambda_index: usize,
    pub intra_lambda: f64,
    pub bpp: f64,
    pub psnr_yuv: f64,
}

impl Probe {
    fn of(p: &RdPoint) -> Self {
        Probe {
            lambda_index: p.lambda_index,
            intra_lambda: p.intra_lambda,
            bpp: p.bpp,
            psnr_yuv: p.psnr_yuv,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TargetResult {
    pub target_bpp: f64,
    pub point: RdPoint,
    pub converged: bool,
    /// One entry per table index at its default intra lambda.
    pub sweep: Vec<RdPoint>,
    /// Encodes after the sweep, in order.
    pub probes: Vec<Probe>,
}

fn rel(b: f64, target: f64) -> f64 {
    (b / target - 1.0).abs()
}

fn check_monotone(trace: &[Probe], slack: f64) -> Result<()> {
    let mut by_index: Vec<&Probe> = trace.iter().collect();
    by_index.sort_by(|a, b| a.lambda_index.cmp(&b.lambda_index).then(a.intra_lambda.total_cmp(&b.intra_lambda)));
    for w in by_index.windows(2) {
        if w[0].lambda_index == w[1].lambda_index
            && w[1].intra_lambda > w[0].intra_lambda
            && w[1].bpp < w[0].bpp * (1.0 - slack)
        {
            let lines: Vec<String> = by_index
                .iter()
                .map(|p| format!("index {} intra lambda {:.2}: {:.5} bpp", p.lambda_index, p.intra_lambda, p.bpp))
                .collect();
            return Err(Error::NonMonotone(format!(
                "bpp falls from {:.5} to {:.5} as intra lambda rises from {:.2} to {:.2}; trace: {}",
                w[0].bpp,
                w[1].bpp,
                w[0].intra_lambda,
                w[1].intra_lambda,
                lines.join("; ")
            )));
        }
    }
    Ok(())
}

pub fn target_rate(codec: &dyn SequenceCodec, frames: &[Frame420], target_bpp: f64, opts: &TargetOptions) -> Result<TargetResult> {
    if !(target_bpp > 0.0 && target_bpp.is_finite()) {
        return Err(Error::Config(format!("target bitrate {target_bpp} must be positive")));
    }
    let table = codec.lambda_table();
    let (lam_lo, lam_hi) = codec.intra_lambda_range();
    let at = |i: usize, intra: Option<f64>| RatePoint {
        lambda_index: i,
        intra_lambda: intra,
        intra_period: opts.intra_period,
    };
    let sweep = (0..table.len())
        .map(|i| evaluate(codec, frames, &at(i, None)))
        .collect::<Result<Vec<_>>>()?;
    let min = sweep.iter().map(|p| p.bpp).fold(f64::INFINITY, f64::min);
    let max = sweep.iter().map(|p| p.bpp).fold(0.0, f64::max);
    if target_bpp < min * (1.0 - opts.tolerance) || target_bpp > max * (1.0 + opts.tolerance) {
        return Err(Error::RateOutOfRange {
            target: target_bpp,
            min,
            max,
        });
    }
    let mut order: Vec<usize> = (0..sweep.len()).collect();
    order.sort_by(|&a, &b| (sweep[a].bpp / target_bpp).ln().abs().total_cmp(&(sweep[b].bpp / target_bpp).ln().abs()));
    let mut best = sweep[order[0]].clone();
    let mut probes: Vec<Probe> = Vec::new();
    let done = |best: &RdPoint| rel(best.bpp, target_bpp) <= opts.tolerance;

    let probe = |i: usize, x: f64, probes: &mut Vec<Probe>, best: &mut RdPoint| -> Result<f64> {
        let p = evaluate(codec, frames, &at(i, Some(x.exp())))?;
        probes.push(Probe::of(&p));
        if rel(p.bpp, target_bpp) < rel(best.bpp, target_bpp) {
            *best = p.clone();
        }
        check_monotone(probes, opts.monotone_slack)?;
        Ok((p.bpp / target_bpp).ln())
    };

    'bases: for &i in &order {
        if done(&best) || probes.len() >= opts.max_probes {
            break;
        }
        let base = &sweep[i];
        let x0 = base.intra_lambda.ln();
        let y0 = (base.bpp / target_bpp).ln();
        let x_end = if y0 < 0.0 { lam_hi.ln() } else { lam_lo.ln() };
        if (x_end - x0).abs() < 1e-12 {
            continue;
        }
        let y_end = probe(i, x_end, &mut probes, &mut best)?;
        if y_end.signum() == y0.signum() {
            continue;
        }
        // Bracket (xa, ya) / (xb, yb) with opposite signs.
        let (mut xa, mut ya, mut xb, mut yb) = (x0, y0, x_end, y_end);
        let mut last_side = 0i8;
        while !done(&best) && probes.len() < opts.max_probes {
            let (lo, hi) = (xa.min(xb), xa.max(xb));
            let mut x = xb - yb * (xb - xa) / (yb - ya);
            let margin = 0.05 * (hi - lo);
            if !x.is_finite() || x < lo + margin || x > hi - margin {
                x = 0.5 * (lo + hi);
            }
            let y = probe(i, x, &mut probes, &mut best)?;
            if y == 0.0 {
                break 'bases;
            }
            if y.signum() == yb.signum() {
                xb = x;
                yb = y;
                if last_side == 1 {
                    ya *= 0.5;
                }
                last_side = 1;
            } else {
                xa = x;
                ya = y;
                if last_side == -1 {
                    yb *= 0.5;
                }
                last_side = -1;
            }
        }
        break;
    }
    Ok(TargetResult {
        target_bpp,
        converged: done(&best),
        point: best,
        sweep,
        probes,
    })
}
