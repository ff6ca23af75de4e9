//! Integer cumulative frequency tables shared by every symbol coder.
//!
//! A table covering regular symbols `offset ..= offset + n - 1` has `n + 2`
//! bins: bin 0 is the low-tail escape, bins `1..=n` are the regular symbols
//! and bin `n + 1` is the high-tail escape. Every bin has frequency >= 1 and
//! the frequencies sum to exactly `2^precision_bits`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PRECISION: u32 = 16;
/// Regular-symbol half width of a Gaussian table, in units of the scale.
pub const TAIL_SIGMAS: f64 = 6.0;
pub const MAX_HALF_WIDTH: i32 = 2048;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CdfTable {
    pub precision_bits: u32,
    pub offset: i32,
    pub cdf: Vec<u32>,
}

impl CdfTable {
    pub fn validate(&self) -> Result<()> {
        if !(2..=16).contains(&self.precision_bits) {
            return Err(Error::Config(format!(
                "precision {} outside 2..=16",
                self.precision_bits
            )));
        }
        if self.cdf.len() < 3 || self.cdf[0] != 0 {
            return Err(Error::Config("cdf must start at 0 and hold >= 2 bins".into()));
        }
        if *self.cdf.last().unwrap() != 1 << self.precision_bits {
            return Err(Error::Config("cdf does not end at 2^precision".into()));
        }
        if self.cdf.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("cdf is not strictly increasing".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn num_bins(&self) -> usize {
        self.cdf.len() - 1
    }

    /// Number of regular (non-escape) symbols.
    #[inline]
    pub fn num_regular(&self) -> usize {
        self.num_bins() - 2
    }

    #[inline]
    pub fn max_symbol(&self) -> i32 {
        self.offset + self.num_regular() as i32 - 1
    }

    #[inline]
    pub fn freq(&self, bin: usize) -> u32 {
        self.cdf[bin + 1] - self.cdf[bin]
    }

    /// Probability the table assigns to `symbol`'s bin (escape bins included).
    pub fn probability(&self, symbol: i32) -> f64 {
        let bin = self.bin_of(symbol);
        self.freq(bin) as f64 / (1u64 << self.precision_bits) as f64
    }

    #[inline]
    pub fn bin_of(&self, symbol: i32) -> usize {
        if symbol < self.offset {
            0
        } else if symbol > self.max_symbol() {
            self.num_bins() - 1
        } else {
            (symbol - self.offset) as usize + 1
        }
    }

    /// Quantizes a probability mass function over all bins (tails included).
    pub fn from_pmf(pmf: &[f64], offset: i32, precision_bits: u32) -> Result<CdfTable> {
        let total = 1u64 << precision_bits;
        if pmf.len() < 3 || pmf.len() as u64 > total {
            return Err(Error::Config(format!(
                "{} bins do not fit precision {precision_bits}",
                pmf.len()
            )));
        }
        let mass: f64 = pmf.iter().map(|p| p.max(0.0)).sum();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::Config("pmf has no finite positive mass".into()));
        }
        let mut freq: Vec<i64> = pmf
            .iter()
            .map(|&p| ((p.max(0.0) / mass) * total as f64).round().max(1.0) as i64)
            .collect();
        repair_mass(&mut freq, total as i64);
        let mut cdf = Vec::with_capacity(freq.len() + 1);
        let mut acc = 0u32;
        cdf.push(0);
        for f in freq {
            acc += f as u32;
            cdf.push(acc);
        }
        let table = CdfTable {
            precision_bits,
            offset,
            cdf,
        };
        debug_assert!(table.validate().is_ok());
        Ok(table)
    }
}

/// Makes the frequencies sum to `total` while keeping every bin >= 1.
///
/// A surplus is taken one unit at a time from the currently largest bin and a
/// deficit is added to the largest bin; ties go to the lowest index.
fn repair_mass(freq: &mut [i64], total: i64) {
    let argmax = |f: &[i64]| {
        let mut best = 0;
        for (i, &v) in f.iter().enumerate() {
            if v > f[best] {
                best = i;
            }
        }
        best
    };
    let sum: i64 = freq.iter().sum();
    let mut diff = total - sum;
    if diff > 0 {
        let i = argmax(freq);
        freq[i] += diff;
        return;
    }
    while diff < 0 {
        let i = argmax(freq);
        let take = (freq[i] - 1).min(-diff).max(0);
        if take == 0 {
            break;
        }
        // Take at most half of the largest bin per pass so mass is spread.
        let take = take.min((freq[i] / 2).max(1));
        freq[i] -= take;
        diff += take;
    }
}

/// Standard normal CDF.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Probability of the unit-width bin centred on `value` under N(mean, scale^2).
#[inline]
pub fn gaussian_bin_probability(value: f64, mean: f64, scale: f64) -> f64 {
    // Evaluate on the lower tail side for accuracy.
    let v = (value - mean).abs();
    std_normal_cdf((0.5 - v) / scale) - std_normal_cdf((-0.5 - v) / scale)
}

/// Regular symbol range `[lo, hi]` used for an element with the given parameters.
pub fn gaussian_table_range(mean: f64, scale: f64) -> (i32, i32) {
    let center = mean.round().clamp(-1e6, 1e6) as i32;
    let half = ((scale * TAIL_SIGMAS).ceil() as i32 + 1).clamp(1, MAX_HALF_WIDTH);
    (center - half, center + half)
}

/// Quantized Gaussian over `lo ..= hi` with tail-mass escape bins at both ends.
pub fn build_gaussian_cdf(
    mean: f64,
    scale: f64,
    lo: i32,
    hi: i32,
    precision_bits: u32,
) -> Result<CdfTable> {
    if !(scale > 0.0 && scale.is_finite() && mean.is_finite()) || hi < lo {
        return Err(Error::Config(format!(
            "invalid gaussian table mean={mean} scale={scale} range=[{lo},{hi}]"
        )));
    }
    let n = (hi - lo + 1) as usize;
    let mut pmf = Vec::with_capacity(n + 2);
    pmf.push(std_normal_cdf((lo as f64 - 0.5 - mean) / scale));
    for s in lo..=hi {
        pmf.push(gaussian_bin_probability(s as f64, mean, scale));
    }
    pmf.push(std_normal_cdf(-(hi as f64 + 0.5 - mean) / scale));
    CdfTable::from_pmf(&pmf, lo, precision_bits)
}

/// Table for one latent element, using [`gaussian_table_range`].
pub fn gaussian_table(mean: f64, scale: f64) -> Result<CdfTable> {
    let (lo, hi) = gaussian_table_range(mean, scale);
    build_gaussian_cdf(mean, scale, lo, hi, DEFAULT_PRECISION)
}
