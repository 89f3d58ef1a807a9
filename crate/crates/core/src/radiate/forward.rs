//! Exact evaluation of the discrete far-field model and its derivatives.
//!
//! Work is split over detectors (forward), sources (amplitude adjoint) or run
//! sequentially (single-detector position gradient). Each output value is a
//! sequential sum in a fixed source or detector order, so results do not
//! depend on the number of worker threads.

use rayon::prelude::*;

use super::{KernelConfig, MediumConfig, SignalSet, SourceCloud, TimeGrid, VolumeGrid};
use crate::error::{Error, Result};
use crate::Vec3;

/// Detector-to-source distances at or below this (mm) are rejected as degenerate.
pub const EPS_DIST: f64 = 1e-6;

/// Sampled pulse shape shared by the forward and gradient loops.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Pulse {
    speed: f64,
    t0: f64,
    dt: f64,
    n_samples: usize,
    inv_sigma2: f64,
    half_inv_sigma2: f64,
    cutoff: f64,
    step: f64,
    decay: f64,
    recurrence: bool,
}

impl Pulse {
    pub(crate) fn new(time: &TimeGrid, medium: &MediumConfig, kernel: &KernelConfig) -> Self {
        let sigma = kernel.sigma;
        let step = medium.speed_of_sound * time.dt;
        let inv_sigma2 = 1.0 / (sigma * sigma);
        Self {
            speed: medium.speed_of_sound,
            t0: time.t0,
            dt: time.dt,
            n_samples: time.n_samples,
            inv_sigma2,
            half_inv_sigma2: 0.5 * inv_sigma2,
            cutoff: kernel.cutoff_radii * sigma,
            step,
            decay: (-step * step * inv_sigma2).exp(),
            // The multiplicative Gaussian recurrence stays well inside f64
            // range as long as a sample step is no wider than two sigma.
            recurrence: step <= 2.0 * sigma,
        }
    }

    pub(crate) fn inv_sigma2(&self) -> f64 {
        self.inv_sigma2
    }

    /// Sample range (half-open) that can fall within the cutoff of distance `r`.
    #[inline]
    fn window(&self, r: f64) -> Option<(usize, usize)> {
        let origin = self.speed * self.t0;
        let lo = ((r - self.cutoff - origin) / self.step).floor();
        let hi = ((r + self.cutoff - origin) / self.step).floor() + 2.0;
        if !(hi > 0.0) || !lo.is_finite() || lo >= self.n_samples as f64 {
            return None;
        }
        let j0 = lo.max(0.0) as usize;
        let j1 = (hi.min(self.n_samples as f64)) as usize;
        (j0 < j1).then_some((j0, j1))
    }

    /// Calls `f(j, u, g)` for every sample with `|u| <= cutoff`, where
    /// `u = r - v t_j` and `g = exp(-u² / 2σ²)`.
    #[inline]
    pub(crate) fn visit(&self, r: f64, mut f: impl FnMut(usize, f64, f64)) {
        let Some((j0, j1)) = self.window(r) else {
            return;
        };
        if self.recurrence {
            let u0 = r - self.speed * (self.t0 + j0 as f64 * self.dt);
            let mut g = (-u0 * u0 * self.half_inv_sigma2).exp();
            let mut q = ((2.0 * u0 * self.step - self.step * self.step) * self.half_inv_sigma2).exp();
            for j in j0..j1 {
                let u = r - self.speed * (self.t0 + j as f64 * self.dt);
                if u.abs() <= self.cutoff {
                    f(j, u, g);
                }
                g *= q;
                q *= self.decay;
            }
        } else {
            for j in j0..j1 {
                let u = r - self.speed * (self.t0 + j as f64 * self.dt);
                if u.abs() <= self.cutoff {
                    f(j, u, (-u * u * self.half_inv_sigma2).exp());
                }
            }
        }
    }
}

fn validate(time: &TimeGrid, medium: &MediumConfig, kernel: &KernelConfig) -> Result<()> {
    time.validate()?;
    medium.validate()?;
    kernel.validate()
}

#[inline]
fn distance(detector: &Vec3, source: &Vec3, d: usize, k: usize) -> Result<f64> {
    let r = (detector - source).norm();
    if r <= EPS_DIST {
        return Err(Error::DegenerateGeometry {
            detector: d,
            source_index: k,
            distance: r,
        });
    }
    Ok(r)
}

fn accumulate_row(pulse: &Pulse, sources: &SourceCloud, detector: &Vec3, d: usize, row: &mut [f64]) -> Result<()> {
    for (k, (p, a)) in sources.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let r = distance(detector, p, d, k)?;
        let w = a / (2.0 * r);
        pulse.visit(r, |j, u, g| row[j] += w * u * g);
    }
    Ok(())
}

/// Signals at `detectors` radiated by `sources`.
///
/// Zero-amplitude sources are skipped, so they never trigger the degeneracy
/// check. Contributions with `|r - v t| > cutoff_radii·σ` are omitted.
pub fn forward(
    sources: &SourceCloud,
    detectors: &[Vec3],
    time: &TimeGrid,
    medium: &MediumConfig,
    kernel: &KernelConfig,
) -> Result<SignalSet> {
    validate(time, medium, kernel)?;
    let pulse = Pulse::new(time, medium, kernel);
    let mut out = SignalSet::zeros(detectors.len(), *time, *medium);
    let n = time.n_samples;
    let results: Vec<Result<()>> = out
        .data_mut()
        .par_chunks_mut(n)
        .zip(detectors.par_iter())
        .enumerate()
        .map(|(d, (row, x))| accumulate_row(&pulse, sources, x, d, row))
        .collect();
    results.into_iter().collect::<Result<()>>()?;
    Ok(out)
}

/// One detector's trace.
pub fn forward_single(
    sources: &SourceCloud,
    detector: &Vec3,
    time: &TimeGrid,
    medium: &MediumConfig,
    kernel: &KernelConfig,
) -> Result<Vec<f64>> {
    validate(time, medium, kernel)?;
    let pulse = Pulse::new(time, medium, kernel);
    let mut row = vec![0.0; time.n_samples];
    accumulate_row(&pulse, sources, detector, 0, &mut row)?;
    Ok(row)
}

/// [`forward`] on the voxel centres of `volume`; zero voxels are skipped.
pub fn forward_from_grid(
    volume: &VolumeGrid,
    detectors: &[Vec3],
    time: &TimeGrid,
    medium: &MediumConfig,
    kernel: &KernelConfig,
) -> Result<SignalSet> {
    forward(&volume.to_source_cloud(), detectors, time, medium, kernel)
}

/// Adjoint of [`forward`] with respect to the amplitudes:
/// `∂⟨forward(P), residual⟩ / ∂P_k` for every source `k`.
///
/// The gradient is needed for zero-amplitude sources too, so every pair is
/// checked for degeneracy here.
pub fn grad_amplitudes(
    sources: &SourceCloud,
    detectors: &[Vec3],
    time: &TimeGrid,
    medium: &MediumConfig,
    kernel: &KernelConfig,
    residual: &SignalSet,
) -> Result<Vec<f64>> {
    validate(time, medium, kernel)?;
    if residual.n_detectors() != detectors.len() || residual.n_samples() != time.n_samples {
        return Err(Error::ShapeMismatch(format!(
            "residual is {} x {}, expected {} x {}",
            residual.n_detectors(),
            residual.n_samples(),
            detectors.len(),
            time.n_samples
        )));
    }
    let pulse = Pulse::new(time, medium, kernel);
    sources
        .positions()
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let mut acc = 0.0;
            for (d, x) in detectors.iter().enumerate() {
                let r = distance(x, p, d, k)?;
                let row = residual.row(d);
                let mut s = 0.0;
                pulse.visit(r, |j, u, g| s += row[j] * u * g);
                acc += s / (2.0 * r);
            }
            Ok(acc)
        })
        .collect()
}

/// Gradient of `Σ_j cotangent_j · p(detector, t_j)` with respect to the
/// detector coordinates.
pub fn grad_detector_position(
    sources: &SourceCloud,
    detector: &Vec3,
    time: &TimeGrid,
    medium: &MediumConfig,
    kernel: &KernelConfig,
    cotangent: &[f64],
) -> Result<Vec3> {
    validate(time, medium, kernel)?;
    if cotangent.len() != time.n_samples {
        return Err(Error::ShapeMismatch(format!(
            "cotangent has {} samples, time grid has {}",
            cotangent.len(),
            time.n_samples
        )));
    }
    let pulse = Pulse::new(time, medium, kernel);
    position_gradient(&pulse, sources, detector, cotangent)
}

pub(crate) fn position_gradient(
    pulse: &Pulse,
    sources: &SourceCloud,
    detector: &Vec3,
    cotangent: &[f64],
) -> Result<Vec3> {
    let inv_s2 = pulse.inv_sigma2();
    let mut grad = Vec3::zeros();
    for (k, (p, a)) in sources.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let delta = detector - p;
        let r = distance(detector, p, 0, k)?;
        let inv_2r = 0.5 / r;
        let inv_2r2 = inv_2r / r;
        // d/dr [ u e^{-u²/2σ²} / 2r ] = e (1 - u²/σ²) / 2r - u e / 2r²
        let mut s = 0.0;
        pulse.visit(r, |j, u, g| {
            s += cotangent[j] * g * ((1.0 - u * u * inv_s2) * inv_2r - u * inv_2r2);
        });
        grad += delta * (a * s / r);
    }
    Ok(grad)
}

/// Single-detector trace using a prepared pulse (no validation).
pub(crate) fn trace_with(pulse: &Pulse, sources: &SourceCloud, detector: &Vec3, out: &mut [f64]) -> Result<()> {
    out.iter_mut().for_each(|v| *v = 0.0);
    accumulate_row(pulse, sources, detector, 0, out)
}
