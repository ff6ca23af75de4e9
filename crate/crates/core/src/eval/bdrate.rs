//! Bjøntegaard delta rate: the average rate difference between two RD
//! curves over their common quality range, from log-rate interpolated as a
//! function of PSNR.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BdMethod {
    /// Monotone piecewise-cubic Hermite interpolation.
    #[default]
    Pchip,
    /// Least-squares cubic polynomial.
    Cubic,
}

/// Sorts `(rate, psnr)` points by PSNR and returns `(psnr, ln rate)`.
fn prepare(points: &[(f64, f64)], what: &str, min: usize) -> Result<Vec<(f64, f64)>> {
    if points.len() < min {
        return Err(Error::Config(format!("{what} curve needs at least {min} points, got {}", points.len())));
    }
    let mut v = Vec::with_capacity(points.len());
    for &(r, q) in points {
        if !(r > 0.0 && r.is_finite() && q.is_finite()) {
            return Err(Error::Config(format!("{what} point ({r}, {q}) needs a positive rate and finite PSNR")));
        }
        v.push((q, r.ln()));
    }
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    if v.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Config(format!("{what} curve repeats a PSNR value")));
    }
    Ok(v)
}

/// Fritsch-Carlson derivatives with the shape-preserving end conditions.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s.signum() != d0.signum() {
            0.0
        } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    d[0] = end(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

/// Exact integral of the PCHIP interpolant over `[lo, hi]`.
fn pchip_integral(pts: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let d = pchip_slopes(&x, &y);
    let mut total = 0.0;
    for i in 0..x.len() - 1 {
        let (a, b) = (x[i].max(lo), x[i + 1].min(hi));
        if b <= a {
            continue;
        }
        let h = x[i + 1] - x[i];
        let eval = |t: f64| {
            let s = (t - x[i]) / h;
            let (s2, s3) = (s * s, s * s * s);
            (2.0 * s3 - 3.0 * s2 + 1.0) * y[i]
                + (s3 - 2.0 * s2 + s) * h * d[i]
                + (-2.0 * s3 + 3.0 * s2) * y[i + 1]
                + (s3 - s2) * h * d[i + 1]
        };
        // Two-point Gauss-Legendre is exact for cubics.
        let (m, r) = ((a + b) / 2.0, (b - a) / 2.0);
        let g = 1.0 / 3f64.sqrt();
        total += r * (eval(m - r * g) + eval(m + r * g));
    }
    total
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        if a[p][col].abs() < 1e-300 {
            return Err(Error::Config("degenerate curve for a cubic fit".into()));
        }
        a.swap(col, p);
        b.swap(col, p);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Ok(x)
}

/// Integral over `[lo, hi]` of the least-squares cubic through the points.
fn cubic_integral(pts: &[(f64, f64)], lo: f64, hi: f64) -> Result<f64> {
    // Centre and scale the abscissa for conditioning.
    let mean = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let scale = pts.iter().map(|p| (p.0 - mean).abs()).fold(0.0, f64::max).max(1e-12);
    let mut ata = vec![vec![0.0; 4]; 4];
    let mut aty = vec![0.0; 4];
    for &(x, y) in pts {
        let t = (x - mean) / scale;
        let pw = [1.0, t, t * t, t * t * t];
        for i in 0..4 {
            aty[i] += pw[i] * y;
            for j in 0..4 {
                ata[i][j] += pw[i] * pw[j];
            }
        }
    }
    let c = solve(ata, aty)?;
    let anti = |x: f64| {
        let t = (x - mean) / scale;
        scale * (c[0] * t + c[1] * t * t / 2.0 + c[2] * t.powi(3) / 3.0 + c[3] * t.powi(4) / 4.0)
    };
    Ok(anti(hi) - anti(lo))
}

/// Percentage rate change of `test` against `anchor` at equal PSNR; both
/// curves are `(rate, psnr)` pairs with at least four points.
pub fn bd_rate(anchor: &[(f64, f64)], test: &[(f64, f64)]) -> Result<f64> {
    bd_rate_with(anchor, test, BdMethod::Pchip)
}

pub fn bd_rate_with(anchor: &[(f64, f64)], test: &[(f64, f64)], method: BdMethod) -> Result<f64> {
    let a = prepare(anchor, "anchor", 4)?;
    let t = prepare(test, "test", 4)?;
    let lo = a[0].0.max(t[0].0);
    let hi = a[a.len() - 1].0.min(t[t.len() - 1].0);
    if hi <= lo {
        return Err(Error::NoOverlap(format!(
            "anchor PSNR [{:.3}, {:.3}] and test PSNR [{:.3}, {:.3}] do not overlap",
            a[0].0,
            a[a.len() - 1].0,
            t[0].0,
            t[t.len() - 1].0
        )));
    }
    let (ia, it) = match method {
        BdMethod::Pchip => (pchip_integral(&a, lo, hi), pchip_integral(&t, lo, hi)),
        BdMethod::Cubic => (cubic_integral(&a, lo, hi)?, cubic_integral(&t, lo, hi)?),
    };
    let avg = (it - ia) / (hi - lo);
    Ok((avg.exp() - 1.0) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve() -> Vec<(f64, f64)> {
        vec![(0.05, 28.0), (0.1, 31.0), (0.2, 33.5), (0.4, 36.0), (0.8, 38.1)]
    }

    #[test]
    fn identical_curves_give_zero() {
        for m in [BdMethod::Pchip, BdMethod::Cubic] {
            assert!(bd_rate_with(&curve(), &curve(), m).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn scaled_rates_give_the_scale() {
        let t: Vec<_> = curve().iter().map(|&(r, q)| (r * 1.1, q)).collect();
        for m in [BdMethod::Pchip, BdMethod::Cubic] {
            let bd = bd_rate_with(&curve(), &t, m).unwrap();
            assert!((bd - 10.0).abs() < 1e-9, "{bd}");
        }
    }

    #[test]
    fn disjoint_quality_ranges_are_refused() {
        let t: Vec<_> = curve().iter().map(|&(r, q)| (r, q + 20.0)).collect();
        assert!(matches!(bd_rate(&curve(), &t), Err(Error::NoOverlap(_))));
        assert!(bd_rate(&curve()[..3], &curve()).is_err());
        assert!(bd_rate(&[(0.0, 1.0), (1.0, 2.0), (2.0, 3.0), (3.0, 4.0)], &curve()).is_err());
    }

    #[test]
    fn pchip_reproduces_monotone_data_without_overshoot() {
        let pts: Vec<(f64, f64)> = vec![(0.0, 0.0), (1.0, 0.0), (2.0, 1.0), (3.0, 1.0)];
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let d = pchip_slopes(&x, &y);
        assert_eq!(d[1], 0.0);
        assert_eq!(d[2], 0.0);
        let i = pchip_integral(&pts, 0.0, 3.0);
        assert!((i - 1.5).abs() < 1e-12, "{i}");
    }

    proptest! {
        #[test]
        fn swapping_curves_inverts_the_ratio(shift in 0.5f64..1.5, noise in prop::collection::vec(-0.2f64..0.2, 5)) {
            let a = curve();
            let t: Vec<_> = a.iter().zip(&noise).map(|(&(r, q), n)| (r * shift * (1.0 + n * 0.1), q)).collect();
            let ab = bd_rate(&a, &t).unwrap() / 100.0 + 1.0;
            let ba = bd_rate(&t, &a).unwrap() / 100.0 + 1.0;
            prop_assert!((ab * ba - 1.0).abs() < 1e-9);
        }
    }
}
