//! RD curve plots (SVG) with a BD-rate table against an anchor curve.

use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::bdrate::bd_rate;
use super::RdPoint;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub name: String,
    pub points: Vec<RdPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BdRow {
    pub name: String,
    /// Percent against the anchor; absent when it cannot be computed.
    pub bd_rate: Option<f64>,
    pub note: Option<String>,
}

/// What was drawn; also written next to the SVG as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotSummary {
    pub anchor: String,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub curves: Vec<Curve>,
    pub bd_table: Vec<BdRow>,
}

impl PlotSummary {
    pub fn table(&self) -> String {
        let mut s = format!("BD-rate against {} (PSNR-YUV)\n", self.anchor);
        for r in &self.bd_table {
            match (r.bd_rate, &r.note) {
                (Some(v), _) => s.push_str(&format!("  {:<24} {:+8.2} %\n", r.name, v)),
                (None, Some(n)) => s.push_str(&format!("  {:<24} n/a ({n})\n", r.name)),
                (None, None) => s.push_str(&format!("  {:<24} n/a\n", r.name)),
            }
        }
        s
    }
}

pub fn metadata_path(svg: &Path) -> PathBuf {
    let mut p = svg.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = (hi - lo).max(1e-6 * hi.abs().max(1.0));
    (lo - 0.05 * span, hi + 0.05 * span)
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(23, 190, 207),
];

fn draw(path: &Path, curves: &[Curve], xr: (f64, f64), yr: (f64, f64)) -> std::result::Result<(), Box<dyn std::error::Error>> {
    let root = SVGBackend::new(path, (800, 560)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Rate-distortion", ("sans-serif", 20))
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(xr.0..xr.1, yr.0..yr.1)?;
    chart
        .configure_mesh()
        .x_desc("bits per pixel")
        .y_desc("PSNR-YUV (dB)")
        .draw()?;
    for (k, c) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.bpp, p.psnr_yuv)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))?
            .label(c.name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        chart.draw_series(pts.into_iter().map(|p| Circle::new(p, 4, color.filled())))?;
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}

/// Draws all curves into `svg` and computes BD-rates against curve
/// `anchor`. Metadata goes to `<svg>.json`.
pub fn plot_rd(curves: &[Curve], svg: &Path, anchor: usize) -> Result<PlotSummary> {
    if curves.is_empty() {
        return Err(Error::Config("usage: plot needs at least one metrics file".into()));
    }
    if anchor >= curves.len() {
        return Err(Error::Config(format!("anchor {anchor} out of {} curves", curves.len())));
    }
    let all: Vec<&RdPoint> = curves.iter().flat_map(|c| &c.points).collect();
    if all.is_empty() {
        return Err(Error::Config("the metrics files contain no points".into()));
    }
    if all.iter().any(|p| !(p.bpp.is_finite() && p.psnr_yuv.is_finite())) {
        return Err(Error::Config("non-finite rate or PSNR in the metrics".into()));
    }
    let x_range = padded(
        all.iter().map(|p| p.bpp).fold(f64::INFINITY, f64::min).max(0.0),
        all.iter().map(|p| p.bpp).fold(f64::NEG_INFINITY, f64::max),
    );
    let x_range = (x_range.0.max(0.0), x_range.1);
    let y_range = padded(
        all.iter().map(|p| p.psnr_yuv).fold(f64::INFINITY, f64::min),
        all.iter().map(|p| p.psnr_yuv).fold(f64::NEG_INFINITY, f64::max),
    );
    let a: Vec<(f64, f64)> = curves[anchor].points.iter().map(|p| (p.bpp, p.psnr_yuv)).collect();
    let bd_table = curves
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != anchor)
        .map(|(_, c)| {
            let t: Vec<(f64, f64)> = c.points.iter().map(|p| (p.bpp, p.psnr_yuv)).collect();
            match bd_rate(&a, &t) {
                Ok(v) => BdRow {
                    name: c.name.clone(),
                    bd_rate: Some(v),
                    note: None,
                },
                Err(e) => BdRow {
                    name: c.name.clone(),
                    bd_rate: None,
                    note: Some(e.to_string()),
                },
            }
        })
        .collect();
    draw(svg, curves, x_range, y_range).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let summary = PlotSummary {
        anchor: curves[anchor].name.clone(),
        x_range,
        y_range,
        curves: curves.to_vec(),
        bd_table,
    };
    std::fs::write(metadata_path(svg), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
