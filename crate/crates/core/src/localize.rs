//! Per-sensor localisation against a frozen reference volume: a lattice
//! search at the widest kernel followed by annealed Adam refinement.
//!
//! Both steps evaluate traces through [`TraceTable`], which bins source
//! distances on an axis `oversample` times finer than the sample spacing and
//! convolves with a pre-sampled pulse. Per evaluation this costs one pass over
//! the sources plus a short convolution, independent of how many sources
//! share a distance bin.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{nc_loss, Adam, OptimConfig};
use crate::radiate::forward::EPS_DIST;
use crate::radiate::{KernelConfig, MediumConfig, SignalSet, SourceCloud, TimeGrid, VolumeGrid};
use crate::Vec3;

/// Frozen source distribution that sensors are localised against.
#[derive(Debug, Clone)]
pub struct Reference {
    sources: SourceCloud,
}

impl Reference {
    /// Keeps voxels whose intensity exceeds `relative_threshold · max`.
    pub fn from_volume(volume: &VolumeGrid, relative_threshold: f64) -> Self {
        let peak = volume.max_value();
        let sources = if peak > 0.0 {
            volume.sources_above(relative_threshold.max(0.0) * peak)
        } else {
            SourceCloud::empty()
        };
        Self { sources }
    }

    pub fn from_sources(sources: SourceCloud) -> Self {
        Self { sources }
    }

    pub fn sources(&self) -> &SourceCloud {
        &self.sources
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty() || self.sources.amplitudes().iter().all(|&a| a == 0.0)
    }

    /// Amplitude-weighted mean source position (origin when empty).
    pub fn centroid(&self) -> Vec3 {
        let total: f64 = self.sources.amplitudes().iter().map(|a| a.abs()).sum();
        if total == 0.0 {
            return Vec3::zeros();
        }
        self.sources.iter().map(|(p, a)| p * a.abs()).sum::<Vec3>() / total
    }
}

/// Axis-aligned box in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl SearchBox {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0..3).all(|a| self.max[a] > self.min[a] && self.min[a].is_finite() && self.max[a].is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "search box {:?}..{:?} is degenerate",
                self.min.as_slice(),
                self.max.as_slice()
            )));
        }
        Ok(())
    }

    /// Bounding box of `points`, grown on every side by `fraction` of its
    /// largest half-extent.
    pub fn around(points: &[Vec3], fraction: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("no points to bound".into()));
        }
        let mut min = points[0];
        let mut max = points[0];
        for p in points {
            min = min.inf(p);
            max = max.sup(p);
        }
        let half = 0.5 * (max - min).max();
        let margin = (fraction * half).max(1e-3);
        Self::new(min.add_scalar(-margin), max.add_scalar(margin))
    }

    pub fn center(&self) -> Vec3 {
        0.5 * (self.min + self.max)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// The box scaled about its centre.
    pub fn scaled(&self, factor: f64) -> Self {
        let c = self.center();
        let h = 0.5 * factor * (self.max - self.min);
        Self { min: c - h, max: c + h }
    }

    /// Lattice points `min + step·(i, j, k)` inside the box, x fastest.
    pub fn lattice(&self, step: f64) -> Vec<Vec3> {
        let counts: Vec<usize> = (0..3)
            .map(|a| ((self.max[a] - self.min[a]) / step + 1e-9).floor() as usize + 1)
            .collect();
        let mut out = Vec::with_capacity(counts.iter().product());
        for k in 0..counts[2] {
            for j in 0..counts[1] {
                for i in 0..counts[0] {
                    out.push(self.min + step * Vec3::new(i as f64, j as f64, k as f64));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub n_stages: usize,
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0) || !(self.sigma_max >= self.sigma_min) || self.n_stages == 0 {
            return Err(Error::InvalidParameter(format!("invalid anneal schedule {self:?}")));
        }
        Ok(())
    }

    /// Geometric sequence from `sigma_max` down to `sigma_min`.
    pub fn sigmas(&self) -> Vec<f64> {
        if self.n_stages == 1 {
            return vec![self.sigma_min];
        }
        let ratio = self.sigma_min / self.sigma_max;
        (0..self.n_stages)
            .map(|s| {
                if s + 1 == self.n_stages {
                    self.sigma_min
                } else {
                    self.sigma_max * ratio.powf(s as f64 / (self.n_stages - 1) as f64)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeConfig {
    pub search_bounds: SearchBox,
    /// Lattice spacing of the coarse search, mm.
    pub grid_step: f64,
    pub top_k: usize,
    pub anneal: AnnealSchedule,
    /// Per-stage optimiser; the step size shrinks with σ (`lr · σ / σ_max`).
    pub optim: OptimConfig,
    /// Reference voxels below this fraction of the peak are ignored.
    pub reference_threshold: f64,
    /// An estimate counts as converged when its loss is below this value or
    /// its gradient norm is below `gradient_tol`.
    pub converged_loss: f64,
    pub gradient_tol: f64,
    /// Distance-axis bins per kernel σ.
    pub bins_per_sigma: f64,
}

impl LocalizeConfig {
    /// Defaults for a kernel of width `sigma` on a lattice of `pitch`.
    pub fn with_bounds(search_bounds: SearchBox, pitch: f64, sigma: f64) -> Self {
        Self {
            search_bounds,
            grid_step: 2.0,
            top_k: 3,
            anneal: AnnealSchedule {
                sigma_max: 4.0 * pitch,
                sigma_min: sigma,
                n_stages: 4,
            },
            optim: OptimConfig {
                learning_rate: 0.1,
                max_iters: 600,
                convergence_tol: 1e-9,
                ..OptimConfig::default()
            },
            reference_threshold: 0.02,
            converged_loss: -0.9,
            gradient_tol: 1e-6,
            bins_per_sigma: 16.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.search_bounds.validate()?;
        self.anneal.validate()?;
        self.optim.validate()?;
        if !(self.grid_step > 0.0) || self.top_k == 0 || !(self.bins_per_sigma >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "grid_step {} / top_k {} / bins_per_sigma {} out of range",
                self.grid_step, self.top_k, self.bins_per_sigma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorEstimate {
    pub index: usize,
    pub position: Vec3,
    pub final_loss: f64,
    pub converged: bool,
    /// Each stage's best position scored with the finest-σ objective, so the
    /// stages are comparable.
    #[serde(default)]
    pub stage_losses: Vec<f64>,
}

impl SensorEstimate {
    pub fn new(index: usize, position: Vec3, final_loss: f64, converged: bool) -> Self {
        Self {
            index,
            position,
            final_loss,
            converged,
            stage_losses: Vec::new(),
        }
    }

    fn failed(index: usize, position: Vec3) -> Self {
        Self::new(index, position, 1.0, false)
    }

    /// No stage scores worse than the one before it. Converged sensors sit
    /// within ~1e-7 of NC = −1, where the stages differ by round-off.
    pub fn anneals_monotonically(&self) -> bool {
        self.stage_losses.windows(2).all(|w| w[1] <= w[0] + ANNEAL_TOLERANCE)
    }
}

/// Slack on stage-to-stage loss comparisons.
pub const ANNEAL_TOLERANCE: f64 = 1e-6;

/// Single-detector evaluator on a binned distance axis.
#[derive(Debug, Clone)]
pub struct TraceTable {
    time: TimeGrid,
    origin: f64,
    fine: f64,
    oversample: usize,
    half_width: usize,
    axis_len: usize,
    /// `h(u) = u·exp(−u²/2σ²)` and `h'(u)` at the fine offsets.
    taps: Vec<f64>,
    dtaps: Vec<f64>,
}

impl TraceTable {
    pub fn new(time: &TimeGrid, medium: &MediumConfig, kernel: &KernelConfig, bins_per_sigma: f64) -> Result<Self> {
        time.validate()?;
        medium.validate()?;
        kernel.validate()?;
        let step = medium.speed_of_sound * time.dt;
        let oversample = ((step * bins_per_sigma / kernel.sigma).ceil() as usize).max(1);
        let fine = step / oversample as f64;
        let half_width = (kernel.cutoff_radii * kernel.sigma / fine).floor() as usize;
        let axis_len = (time.n_samples - 1) * oversample + 2 * half_width + 2;
        let inv_s2 = 1.0 / (kernel.sigma * kernel.sigma);
        let (taps, dtaps) = (0..=2 * half_width)
            .map(|m| {
                let u = (m as f64 - half_width as f64) * fine;
                let g = (-0.5 * u * u * inv_s2).exp();
                (u * g, g * (1.0 - u * u * inv_s2))
            })
            .unzip();
        Ok(Self {
            time: *time,
            origin: medium.speed_of_sound * time.t0,
            fine,
            oversample,
            half_width,
            axis_len,
            taps,
            dtaps,
        })
    }

    #[inline]
    fn slot(&self, r: f64) -> Option<(usize, f64)> {
        let s = (r - self.origin) / self.fine + self.half_width as f64;
        if s >= 0.0 && s < (self.axis_len - 1) as f64 {
            let e = s as usize;
            Some((e, s - e as f64))
        } else {
            None
        }
    }

    /// Simulated trace at `detector`, written into `out`.
    pub fn trace(&self, sources: &SourceCloud, detector: &Vec3, out: &mut [f64]) -> Result<()> {
        let mut axis = vec![0.0; self.axis_len];
        let (mut lo, mut hi) = (usize::MAX, 0);
        for (k, (p, a)) in sources.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let r = (detector - p).norm();
            if r <= EPS_DIST {
                return Err(Error::DegenerateGeometry {
                    detector: 0,
                    source_index: k,
                    distance: r,
                });
            }
            if let Some((e, f)) = self.slot(r) {
                let w = a / (2.0 * r);
                axis[e] += w * (1.0 - f);
                axis[e + 1] += w * f;
                lo = lo.min(e);
                hi = hi.max(e + 1);
            }
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        if lo > hi {
            return Ok(());
        }
        let (s, m) = (self.oversample, self.half_width);
        // Sample j reads axis[j·S ..= j·S + 2M].
        let j_lo = lo.saturating_sub(2 * m).div_ceil(s);
        let j_hi = (hi / s).min(self.time.n_samples - 1);
        for j in j_lo..=j_hi {
            let start = (j * s).max(lo);
            let end = (j * s + 2 * m).min(hi);
            let mut acc = 0.0;
            for e in start..=end {
                acc += axis[e] * self.taps[e - j * s];
            }
            out[j] = acc;
        }
        Ok(())
    }

    /// Gradient of `Σ_j cotangent_j · trace_j` with respect to the detector.
    pub fn position_gradient(&self, sources: &SourceCloud, detector: &Vec3, cotangent: &[f64]) -> Result<Vec3> {
        let (s, m) = (self.oversample, self.half_width);
        let mut c0 = vec![0.0; self.axis_len];
        let mut c1 = vec![0.0; self.axis_len];
        for (j, &cj) in cotangent.iter().enumerate() {
            if cj == 0.0 {
                continue;
            }
            let base = j * s;
            for t in 0..=2 * m {
                c0[base + t] += cj * self.taps[t];
                c1[base + t] += cj * self.dtaps[t];
            }
        }
        let mut grad = Vec3::zeros();
        for (k, (p, a)) in sources.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let delta = detector - p;
            let r = delta.norm();
            if r <= EPS_DIST {
                return Err(Error::DegenerateGeometry {
                    detector: 0,
                    source_index: k,
                    distance: r,
                });
            }
            if let Some((e, f)) = self.slot(r) {
                let v0 = (1.0 - f) * c0[e] + f * c0[e + 1];
                let v1 = (1.0 - f) * c1[e] + f * c1[e + 1];
                // d/dr [a h(u) / 2r] = a (h'(u) − h(u)/r) / 2r
                let d = a / (2.0 * r) * (v1 - v0 / r);
                grad += delta * (d / r);
            }
        }
        Ok(grad)
    }

    /// NC loss of the trace at `detector` against `measured`, with its
    /// gradient with respect to the detector position.
    pub fn nc_with_gradient(&self, sources: &SourceCloud, detector: &Vec3, measured: &[f64]) -> Result<(f64, Vec3)> {
        let mut trace = vec![0.0; self.time.n_samples];
        self.trace(sources, detector, &mut trace)?;
        let (loss, cot) = nc_loss(&trace, measured)?;
        let grad = self.position_gradient(sources, detector, &cot)?;
        Ok((loss, grad))
    }
}

fn check_measured(measured: &[f64], time: &TimeGrid) -> Result<()> {
    if measured.len() != time.n_samples {
        return Err(Error::ShapeMismatch(format!(
            "measured trace has {} samples, time grid has {}",
            measured.len(),
            time.n_samples
        )));
    }
    Ok(())
}

/// `measured`, recorded with pulse width `sigma_from`, as it would look with
/// width `sigma_to ≥ sigma_from`.
///
/// The pulse is proportional to the derivative of a Gaussian, and blurring
/// that with a Gaussian of width `√(σ_to² − σ_from²)` gives the wider pulse up
/// to a common factor, which NC ignores. `step` is the distance travelled in
/// one sample.
pub fn smooth_trace(measured: &[f64], sigma_from: f64, sigma_to: f64, step: f64) -> Vec<f64> {
    let extra = (sigma_to * sigma_to - sigma_from * sigma_from).max(0.0).sqrt() / step;
    if extra < 1e-3 {
        return measured.to_vec();
    }
    let half = (5.0 * extra).ceil() as isize;
    let weights: Vec<f64> = (-half..=half).map(|m| (-0.5 * (m as f64 / extra).powi(2)).exp()).collect();
    let n = measured.len() as isize;
    (0..n)
        .map(|j| {
            weights
                .iter()
                .enumerate()
                .filter_map(|(w, &g)| {
                    let i = j + w as isize - half;
                    (0..n).contains(&i).then(|| g * measured[i as usize])
                })
                .sum()
        })
        .collect()
}

/// Lag of `measured` relative to `trace`, in samples within `±max_lag`, that
/// maximises their correlation.
fn best_lag(trace: &[f64], measured: &[f64], max_lag: usize) -> isize {
    let n = trace.len() as isize;
    let mut best = (f64::NEG_INFINITY, 0isize);
    for k in -(max_lag as isize)..=max_lag as isize {
        let (lo, hi) = ((-k).max(0), (n - k).min(n));
        let c: f64 = (lo..hi).map(|j| trace[j as usize] * measured[(j + k) as usize]).sum();
        // Ties go to the smaller shift.
        if c > best.0 || (c == best.0 && k.abs() < best.1.abs()) {
            best = (c, k);
        }
    }
    best.1
}

/// Lattice points of the search box ranked by NC loss at `sigma_max`.
///
/// A lattice is coarse along the range direction: half a step of range error
/// already shifts the whole trace by more than `sigma_max`. Each lattice
/// point is therefore first slid along the ray from the reference centroid
/// by the lag that best aligns its trace with `measured` (at most half a
/// lattice diagonal), and scored at the slid position. Candidates closer than
/// one lattice step to a better one are dropped. Returns at most `top_k`
/// `(position, loss)` pairs, best first.
pub fn coarse_search(
    reference: &Reference,
    measured: &[f64],
    time: &TimeGrid,
    config: &LocalizeConfig,
    medium: &MediumConfig,
    cutoff_radii: f64,
) -> Result<Vec<(Vec3, f64)>> {
    config.validate()?;
    check_measured(measured, time)?;
    if reference.is_empty() {
        return Err(Error::EmptySearch);
    }
    // A flat measurement makes every candidate undefined.
    nc_loss(measured, measured)?;
    let kernel = KernelConfig::with_cutoff(config.anneal.sigma_max, cutoff_radii)?;
    let table = TraceTable::new(time, medium, &kernel, config.bins_per_sigma)?;
    let lattice = config.search_bounds.lattice(config.grid_step);
    let centroid = reference.centroid();
    let step = medium.speed_of_sound * time.dt;
    let smoothed = smooth_trace(measured, config.anneal.sigma_min, config.anneal.sigma_max, step);
    let measured = &smoothed[..];
    let max_lag = (0.5 * 3f64.sqrt() * config.grid_step / step).ceil() as usize;
    let mut scored: Vec<(usize, Vec3, f64)> = lattice
        .par_iter()
        .enumerate()
        .map_init(
            || vec![0.0; time.n_samples],
            |trace, (i, x)| {
                table.trace(reference.sources(), x, trace).ok()?;
                let ray = x - centroid;
                let norm = ray.norm();
                let slid = if norm > 0.0 {
                    let k = best_lag(trace, measured, max_lag);
                    let y = x + ray * (k as f64 * step / norm);
                    table.trace(reference.sources(), &y, trace).ok()?;
                    y
                } else {
                    *x
                };
                nc_loss(trace, measured).ok().map(|(l, _)| (i, slid, l))
            },
        )
        .flatten()
        .collect();
    if scored.is_empty() {
        return Err(Error::EmptySearch);
    }
    scored.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    let mut out: Vec<(Vec3, f64)> = Vec::with_capacity(config.top_k);
    for (_, y, l) in scored {
        if out.len() == config.top_k {
            break;
        }
        if out.iter().all(|(p, _)| (p - y).norm() >= config.grid_step) {
            out.push((y, l));
        }
    }
    Ok(out)
}

/// Annealed refinement of one sensor from `start`.
///
/// Failures (flat traces, divergence beyond twice the search box) produce a
/// non-converged estimate at the best position seen, never an error.
pub fn refine_sensor(
    reference: &Reference,
    measured: &[f64],
    time: &TimeGrid,
    start: &Vec3,
    index: usize,
    config: &LocalizeConfig,
    medium: &MediumConfig,
    cutoff_radii: f64,
) -> Result<SensorEstimate> {
    config.validate()?;
    check_measured(measured, time)?;
    let limit = config.search_bounds.scaled(2.0);
    let sigmas = config.anneal.sigmas();
    let sigma_max = config.anneal.sigma_max;

    let mut position = *start;
    let mut stage_losses = Vec::with_capacity(sigmas.len());
    let mut last = (1.0, f64::INFINITY);
    let step = medium.speed_of_sound * time.dt;
    let sigma_fine = *sigmas.last().expect("at least one stage");
    let fine_table = TraceTable::new(time, medium, &KernelConfig::with_cutoff(sigma_fine, cutoff_radii)?, config.bins_per_sigma)?;
    let fine_trace = smooth_trace(measured, config.anneal.sigma_min, sigma_fine, step);
    for &sigma in &sigmas {
        let kernel = KernelConfig::with_cutoff(sigma, cutoff_radii)?;
        let table = TraceTable::new(time, medium, &kernel, config.bins_per_sigma)?;
        let smoothed = smooth_trace(measured, config.anneal.sigma_min, sigma, step);
        let optim = OptimConfig {
            learning_rate: config.optim.learning_rate * sigma / sigma_max,
            ..config.optim
        };
        let mut adam = Adam::new(3);
        let mut params = [position.x, position.y, position.z];
        let mut best: Option<(f64, Vec3, f64)> = None;
        let mut previous = f64::NAN;
        for it in 0..=optim.max_iters {
            let x = Vec3::new(params[0], params[1], params[2]);
            if !x.iter().all(|v| v.is_finite()) || !limit.contains(&x) {
                log::debug!("sensor {index}: left the search region at sigma {sigma}");
                let (loss, pos) = best.map(|b| (b.0, b.1)).unwrap_or((1.0, position));
                let mut e = SensorEstimate::failed(index, pos);
                e.final_loss = loss;
                e.stage_losses = stage_losses;
                return Ok(e);
            }
            let (loss, grad) = match table.nc_with_gradient(reference.sources(), &x, &smoothed) {
                Ok(v) => v,
                Err(Error::VarianceDegenerate { .. } | Error::DegenerateGeometry { .. }) => {
                    let (loss, pos) = best.map(|b| (b.0, b.1)).unwrap_or((1.0, position));
                    let mut e = SensorEstimate::failed(index, pos);
                    e.final_loss = loss;
                    e.stage_losses = stage_losses;
                    return Ok(e);
                }
                Err(e) => return Err(e),
            };
            if best.is_none_or(|b| loss < b.0) {
                best = Some((loss, x, grad.norm()));
            }
            if it > 0 && optim.converged(previous, loss) {
                break;
            }
            if it == optim.max_iters {
                break;
            }
            previous = loss;
            adam.step(&mut params, grad.as_slice(), &optim);
        }
        let (loss, x, gnorm) = best.expect("at least one evaluation per stage");
        position = x;
        last = (loss, gnorm);
        stage_losses.push(match fine_table.nc_with_gradient(reference.sources(), &x, &fine_trace) {
            Ok((l, _)) => l,
            Err(Error::VarianceDegenerate { .. } | Error::DegenerateGeometry { .. }) => 1.0,
            Err(e) => return Err(e),
        });
    }
    let converged = last.0 < config.converged_loss || last.1 < config.gradient_tol;
    Ok(SensorEstimate {
        index,
        position,
        final_loss: last.0,
        converged,
        stage_losses,
    })
}

/// Coarse search plus refinement of the `top_k` candidates for one sensor;
/// keeps the refined result with the lowest loss.
pub fn localize_sensor(
    reference: &Reference,
    measured: &[f64],
    time: &TimeGrid,
    index: usize,
    config: &LocalizeConfig,
    medium: &MediumConfig,
    cutoff_radii: f64,
) -> Result<SensorEstimate> {
    let candidates = match coarse_search(reference, measured, time, config, medium, cutoff_radii) {
        Ok(c) => c,
        Err(e @ (Error::EmptySearch | Error::VarianceDegenerate { .. })) => {
            log::warn!("sensor {index}: coarse search failed: {e}");
            return Ok(SensorEstimate::failed(index, config.search_bounds.center()));
        }
        Err(e) => return Err(e),
    };
    let mut best: Option<SensorEstimate> = None;
    for (start, _) in candidates {
        let est = refine_sensor(reference, measured, time, &start, index, config, medium, cutoff_radii)?;
        if best.as_ref().is_none_or(|b| est.final_loss < b.final_loss) {
            best = Some(est);
        }
    }
    Ok(best.expect("coarse search returns at least one candidate"))
}

/// Localises every row of `signals` independently.
pub fn localize_all(
    reference: &Reference,
    signals: &SignalSet,
    config: &LocalizeConfig,
    medium: &MediumConfig,
    cutoff_radii: f64,
) -> Result<Vec<SensorEstimate>> {
    config.validate()?;
    (0..signals.n_detectors())
        .into_par_iter()
        .map(|i| localize_sensor(reference, signals.row(i), signals.time(), i, config, medium, cutoff_radii))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radiate::forward::Pulse;
    use crate::radiate::forward_single;

    fn cloud() -> SourceCloud {
        SourceCloud::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.2, -0.4, 0.6),
                Vec3::new(-0.8, 0.9, -0.3),
                Vec3::new(0.3, 1.5, 1.1),
            ],
            vec![1.0, 0.7, 0.5, 0.9],
        )
        .unwrap()
    }

    fn setup() -> (TimeGrid, MediumConfig, KernelConfig) {
        (
            TimeGrid::new(0.0, 0.2 / 3.0, 400).unwrap(),
            MediumConfig::default(),
            KernelConfig::new(0.2).unwrap(),
        )
    }

    #[test]
    fn table_matches_exact_trace() {
        let (time, medium, kernel) = setup();
        let table = TraceTable::new(&time, &medium, &kernel, 16.0).unwrap();
        let x = Vec3::new(3.0, -9.0, 14.0);
        let mut fast = vec![0.0; time.n_samples];
        table.trace(&cloud(), &x, &mut fast).unwrap();
        let exact = forward_single(&cloud(), &x, &time, &medium, &kernel).unwrap();
        let num: f64 = fast.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = exact.iter().map(|v| v * v).sum();
        assert!((num / den).sqrt() < 1e-3);
    }

    #[test]
    fn table_gradient_matches_exact() {
        let (time, medium, kernel) = setup();
        let table = TraceTable::new(&time, &medium, &kernel, 16.0).unwrap();
        let pulse = Pulse::new(&time, &medium, &kernel);
        let x = Vec3::new(-4.0, 6.0, 12.0);
        let cot: Vec<f64> = (0..time.n_samples).map(|j| (j as f64 * 0.21).sin()).collect();
        let g_fast = table.position_gradient(&cloud(), &x, &cot).unwrap();
        let g_exact = crate::radiate::forward::position_gradient(&pulse, &cloud(), &x, &cot).unwrap();
        assert!((g_fast - g_exact).norm() < 2e-3 * g_exact.norm(), "{g_fast:?} vs {g_exact:?}");
    }

    #[test]
    fn schedule_is_geometric() {
        let s = AnnealSchedule {
            sigma_max: 0.8,
            sigma_min: 0.1,
            n_stages: 4,
        }
        .sigmas();
        assert_eq!(s.len(), 4);
        assert!((s[0] - 0.8).abs() < 1e-15 && s[3] == 0.1);
        assert!((s[1] / s[0] - 0.5).abs() < 1e-12 && (s[2] / s[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lattice_point_is_found() {
        let (time, medium, kernel) = setup();
        let bounds = SearchBox::new(Vec3::new(-4.0, -4.0, 10.0), Vec3::new(4.0, 4.0, 16.0)).unwrap();
        let mut cfg = LocalizeConfig::with_bounds(bounds, 0.2, kernel.sigma);
        cfg.top_k = 1;
        let truth = Vec3::new(2.0, -2.0, 14.0);
        // Recorded at the acquisition σ; the search widens it to σ_max itself.
        let measured = forward_single(&cloud(), &truth, &time, &medium, &kernel).unwrap();
        let reference = Reference::from_sources(cloud());
        let found = coarse_search(&reference, &measured, &time, &cfg, &medium, kernel.cutoff_radii).unwrap();
        assert_eq!(found.len(), 1);
        assert!((found[0].0 - truth).norm() < 1e-9, "found {:?}", found[0]);
    }

    #[test]
    fn empty_reference_fails_search() {
        let (time, medium, kernel) = setup();
        let bounds = SearchBox::new(Vec3::new(-1.0, -1.0, 9.0), Vec3::new(1.0, 1.0, 11.0)).unwrap();
        let cfg = LocalizeConfig::with_bounds(bounds, 0.2, kernel.sigma);
        let measured: Vec<f64> = (0..time.n_samples).map(|j| (j as f64).sin()).collect();
        let reference = Reference::from_sources(SourceCloud::empty());
        assert!(matches!(
            coarse_search(&reference, &measured, &time, &cfg, &medium, 5.0),
            Err(Error::EmptySearch)
        ));
        let est = refine_sensor(&reference, &measured, &time, &Vec3::new(0.0, 0.0, 10.0), 0, &cfg, &medium, 5.0).unwrap();
        assert!(!est.converged);
        assert!(est.position.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn box_helpers() {
        let b = SearchBox::around(&[Vec3::new(0.0, 0.0, 0.0), Vec3::new(4.0, 2.0, 1.0)], 0.5).unwrap();
        assert_eq!(b.min, Vec3::new(-1.0, -1.0, -1.0));
        assert_eq!(b.max, Vec3::new(5.0, 3.0, 2.0));
        assert_eq!(b.lattice(1.0).len(), 7 * 5 * 4);
        assert!(SearchBox::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0)).is_err());
    }
}
