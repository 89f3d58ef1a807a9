//! Image-quality and localisation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radiate::VolumeGrid;
use crate::Vec3;

/// Side length of the SSIM window, in pixels.
pub const SSIM_WINDOW: usize = 8;

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch(format!("fields of {} and {} values", a.len(), b.len())));
    }
    Ok(())
}

/// `10·log10(peak² / MSE)` in dB; `+∞` when the fields are identical.
pub fn psnr(test: &[f64], reference: &[f64], peak: f64) -> Result<f64> {
    same_len(test, reference)?;
    let mse = test.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / test.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Mean SSIM over every 8×8 window of two row-major `width × height` images.
pub fn ssim(test: &[f64], reference: &[f64], width: usize, height: usize, dynamic_range: f64) -> Result<f64> {
    same_len(test, reference)?;
    if test.len() != width * height {
        return Err(Error::ShapeMismatch(format!("{} pixels for a {width}x{height} image", test.len())));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::ShapeMismatch(format!("image {width}x{height} is smaller than the SSIM window")));
    }
    if !(dynamic_range > 0.0) {
        return Err(Error::InvalidParameter(format!("dynamic range must be positive, got {dynamic_range}")));
    }
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=height - SSIM_WINDOW {
        for x0 in 0..=width - SSIM_WINDOW {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + SSIM_WINDOW {
                for x in x0..x0 + SSIM_WINDOW {
                    let a = test[y * width + x];
                    let b = reference[y * width + x];
                    sa += a;
                    sb += b;
                    saa += a * a;
                    sbb += b * b;
                    sab += a * b;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = (saa / n - ma * ma).max(0.0);
            let vb = (sbb / n - mb * mb).max(0.0);
            let cov = sab / n - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Maximum amplitude projection; pixel `(u, v)` is stored at `v·width + u`.
///
/// The image axes are the two remaining volume axes in increasing order:
/// projecting along z gives `(x, y)`, along y `(x, z)`, along x `(y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapImage {
    pub axis: Axis,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl MapImage {
    pub fn max_value(&self) -> f64 {
        self.pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Copy scaled so the largest pixel is 1 (unchanged if that is not positive).
    pub fn normalized(&self) -> MapImage {
        let peak = self.max_value();
        let mut out = self.clone();
        if peak > 0.0 {
            out.pixels.iter_mut().for_each(|p| *p /= peak);
        }
        out
    }
}

pub fn map_projection(volume: &VolumeGrid, axis: Axis) -> MapImage {
    let d = volume.dims();
    let (ua, va) = match axis {
        Axis::X => (1, 2),
        Axis::Y => (0, 2),
        Axis::Z => (0, 1),
    };
    let (width, height) = (d[ua], d[va]);
    let mut pixels = vec![f64::NEG_INFINITY; width * height];
    for (idx, &value) in volume.intensities().iter().enumerate() {
        let c = volume.coords(idx);
        let p = &mut pixels[c[va] * width + c[ua]];
        *p = p.max(value);
    }
    MapImage {
        axis,
        width,
        height,
        pixels,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationErrors {
    pub per_sensor: Vec<f64>,
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    pub rms: f64,
}

/// Euclidean distance (mm) between matching estimated and true positions.
pub fn localization_errors(estimated: &[Vec3], truth: &[Vec3]) -> Result<LocalizationErrors> {
    if estimated.len() != truth.len() || estimated.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimates for {} true positions",
            estimated.len(),
            truth.len()
        )));
    }
    let per_sensor: Vec<f64> = estimated.iter().zip(truth).map(|(e, t)| (e - t).norm()).collect();
    let n = per_sensor.len() as f64;
    Ok(LocalizationErrors {
        max: per_sensor.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min: per_sensor.iter().copied().fold(f64::INFINITY, f64::min),
        mean: per_sensor.iter().sum::<f64>() / n,
        rms: (per_sensor.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        per_sensor,
    })
}
