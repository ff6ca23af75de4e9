//! Plane and frame quality metrics.

use serde::{Deserialize, Serialize};

use super::frame::{Frame420, Plane};
use crate::error::{Error, Result};

/// Reported in place of +inf for a plane with zero error.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanePsnr {
    pub db: f64,
    pub lossless: bool,
}

pub fn psnr_from_mse(mse: f64) -> PlanePsnr {
    if mse <= 0.0 {
        return PlanePsnr {
            db: PSNR_CAP_DB,
            lossless: true,
        };
    }
    PlanePsnr {
        db: (-10.0 * mse.log10()).min(PSNR_CAP_DB),
        lossless: false,
    }
}

pub fn plane_psnr(reference: &Plane, test: &Plane) -> Result<PlanePsnr> {
    Ok(psnr_from_mse(reference.mse(test)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct YuvPsnr {
    pub psnr_y: f64,
    pub psnr_u: f64,
    pub psnr_v: f64,
    pub psnr_yuv: f64,
    pub lossless: bool,
}

/// The one place where Y/U/V qualities are combined: (6, 1, 1) / 8 in the dB domain.
pub fn weighted_psnr_yuv(psnr_y: f64, psnr_u: f64, psnr_v: f64) -> f64 {
    (6.0 * psnr_y + psnr_u + psnr_v) / 8.0
}

pub fn psnr_yuv(reference: &Frame420, test: &Frame420) -> Result<YuvPsnr> {
    if reference.y.dims() != test.y.dims() {
        return Err(Error::Dimension(format!(
            "reference {}x{} vs test {}x{}",
            reference.width(),
            reference.height(),
            test.width(),
            test.height()
        )));
    }
    let y = plane_psnr(&reference.y, &test.y)?;
    let u = plane_psnr(&reference.u, &test.u)?;
    let v = plane_psnr(&reference.v, &test.v)?;
    Ok(YuvPsnr {
        psnr_y: y.db,
        psnr_u: u.db,
        psnr_v: v.db,
        psnr_yuv: weighted_psnr_yuv(y.db, u.db, v.db),
        lossless: y.lossless && u.lossless && v.lossless,
    })
}
