//! Far-field acoustic radiation model.
//!
//! Every source element emits an outgoing N-shaped pulse
//!
//! ```text
//! p(x_d, t) = Σ_k  P_k · (r_k − v·t) / (2 r_k) · exp(−(r_k − v·t)² / 2σ²),   r_k = ‖x_d − x_k‖
//! ```
//!
//! which is the outgoing term of the spherically symmetric wave-equation
//! solution for a Gaussian initial pressure of width σ. The model is linear in
//! the amplitudes `P_k` and differentiable in the detector coordinates; both
//! derivatives are provided in [`forward`]. [`analytic`] holds the closed-form
//! spherically symmetric solutions used as oracles, and [`projector`] a
//! tabulated operator pair for fast volume reconstruction.
//!
//! Units throughout: millimetres and microseconds.

pub mod analytic;
pub mod forward;
pub mod projector;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

pub use analytic::{analytic_pressure, far_field_pressure, SphericalSourceKind, SphericalSourceSpec};
pub use forward::{
    forward, forward_from_grid, forward_single, grad_amplitudes, grad_detector_position,
    EPS_DIST,
};
pub use projector::TabulatedProjector;

/// Homogeneous, lossless propagation medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MediumConfig {
    /// Speed of sound in mm/µs.
    pub speed_of_sound: f64,
}

impl Default for MediumConfig {
    fn default() -> Self {
        Self {
            speed_of_sound: 1.5,
        }
    }
}

impl MediumConfig {
    pub fn new(speed_of_sound: f64) -> Result<Self> {
        let medium = Self { speed_of_sound };
        medium.validate()?;
        Ok(medium)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.speed_of_sound > 0.0 && self.speed_of_sound.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "speed_of_sound must be positive, got {}",
                self.speed_of_sound
            )));
        }
        Ok(())
    }
}

/// Uniform sampling grid: sample `j` is taken at `t0 + j·dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_samples: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_samples: usize) -> Result<Self> {
        let grid = Self { t0, dt, n_samples };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) || !self.t0.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "time grid needs finite t0 and dt > 0 (t0 = {}, dt = {})",
                self.t0, self.dt
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter("time grid needs at least one sample".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.dt
    }
}

/// Gaussian pulse width and truncation radius (in multiples of `sigma`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub sigma: f64,
    pub cutoff_radii: f64,
}

impl KernelConfig {
    pub const DEFAULT_CUTOFF: f64 = 5.0;

    pub fn new(sigma: f64) -> Result<Self> {
        Self::with_cutoff(sigma, Self::DEFAULT_CUTOFF)
    }

    pub fn with_cutoff(sigma: f64, cutoff_radii: f64) -> Result<Self> {
        let kernel = Self {
            sigma,
            cutoff_radii,
        };
        kernel.validate()?;
        Ok(kernel)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("kernel sigma must be positive, got {}", self.sigma)));
        }
        if !(self.cutoff_radii >= 4.0) {
            return Err(Error::InvalidParameter(format!(
                "kernel cutoff must be at least 4 sigma, got {}",
                self.cutoff_radii
            )));
        }
        Ok(())
    }

    /// Same truncation, different width.
    pub fn with_sigma(&self, sigma: f64) -> Self {
        Self {
            sigma,
            cutoff_radii: self.cutoff_radii,
        }
    }
}

/// Point-like source elements with their initial-pressure amplitudes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SourceCloud {
    positions: Vec<Vec3>,
    amplitudes: Vec<f64>,
}

impl SourceCloud {
    pub fn new(positions: Vec<Vec3>, amplitudes: Vec<f64>) -> Result<Self> {
        if positions.len() != amplitudes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} source positions but {} amplitudes",
                positions.len(),
                amplitudes.len()
            )));
        }
        Ok(Self {
            positions,
            amplitudes,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn push(&mut self, position: Vec3, amplitude: f64) {
        self.positions.push(position);
        self.amplitudes.push(amplitude);
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec3, f64)> + '_ {
        self.positions.iter().zip(self.amplitudes.iter().copied())
    }

    /// Same positions, new amplitudes.
    pub fn with_amplitudes(&self, amplitudes: Vec<f64>) -> Result<Self> {
        Self::new(self.positions.clone(), amplitudes)
    }
}

/// Initial pressure sampled on a regular lattice.
///
/// Voxel `(i, j, k)` sits at `origin + pitch·(i, j, k)` and is stored at
/// linear index `i + nx·(j + ny·k)`: x varies fastest, then y, then z.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGrid {
    dims: [usize; 3],
    origin: Vec3,
    pitch: f64,
    intensities: Vec<f64>,
}

impl VolumeGrid {
    pub fn zeros(dims: [usize; 3], origin: Vec3, pitch: f64) -> Result<Self> {
        let n = Self::check_geometry(dims, pitch)?;
        Ok(Self {
            dims,
            origin,
            pitch,
            intensities: vec![0.0; n],
        })
    }

    pub fn new(dims: [usize; 3], origin: Vec3, pitch: f64, intensities: Vec<f64>) -> Result<Self> {
        let n = Self::check_geometry(dims, pitch)?;
        if intensities.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "volume {}x{}x{} needs {} intensities, got {}",
                dims[0],
                dims[1],
                dims[2],
                n,
                intensities.len()
            )));
        }
        Ok(Self {
            dims,
            origin,
            pitch,
            intensities,
        })
    }

    /// Grid of `dims` voxels whose centre lies at `center`.
    pub fn centered(dims: [usize; 3], center: Vec3, pitch: f64) -> Result<Self> {
        let half = Vec3::new(
            (dims[0] as f64 - 1.0) * 0.5,
            (dims[1] as f64 - 1.0) * 0.5,
            (dims[2] as f64 - 1.0) * 0.5,
        );
        Self::zeros(dims, center - half * pitch, pitch)
    }

    fn check_geometry(dims: [usize; 3], pitch: f64) -> Result<usize> {
        if dims.contains(&0) {
            return Err(Error::InvalidParameter(format!("volume dims must be >= 1, got {dims:?}")));
        }
        if !(pitch > 0.0 && pitch.is_finite()) {
            return Err(Error::InvalidParameter(format!("voxel pitch must be positive, got {pitch}")));
        }
        Ok(dims[0] * dims[1] * dims[2])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn intensities_mut(&mut self) -> &mut [f64] {
        &mut self.intensities
    }

    pub fn into_intensities(self) -> Vec<f64> {
        self.intensities
    }

    /// Same lattice, new values.
    pub fn with_intensities(&self, intensities: Vec<f64>) -> Result<Self> {
        Self::new(self.dims, self.origin, self.pitch, intensities)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let i = index % self.dims[0];
        let rest = index / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn voxel_position(&self, index: usize) -> Vec3 {
        let [i, j, k] = self.coords(index);
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.pitch
    }

    /// Nearest voxel to a world point, if it falls inside the lattice.
    pub fn nearest_index(&self, p: &Vec3) -> Option<usize> {
        let rel = (p - self.origin) / self.pitch;
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let c = rel[a].round();
            if c < 0.0 || c >= self.dims[a] as f64 {
                return None;
            }
            ijk[a] = c as usize;
        }
        Some(self.index(ijk[0], ijk[1], ijk[2]))
    }

    /// Nonzero voxels as a source cloud, in storage order.
    pub fn to_source_cloud(&self) -> SourceCloud {
        self.sources_above(0.0)
    }

    /// Voxels with `|value| > threshold`, in storage order.
    pub fn sources_above(&self, threshold: f64) -> SourceCloud {
        let mut cloud = SourceCloud::empty();
        for (idx, &a) in self.intensities.iter().enumerate() {
            if a != 0.0 && a.abs() > threshold {
                cloud.push(self.voxel_position(idx), a);
            }
        }
        cloud
    }

    pub fn max_value(&self) -> f64 {
        self.intensities.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// World-space centre of the lattice.
    pub fn center(&self) -> Vec3 {
        self.origin
            + Vec3::new(
                (self.dims[0] as f64 - 1.0) * 0.5,
                (self.dims[1] as f64 - 1.0) * 0.5,
                (self.dims[2] as f64 - 1.0) * 0.5,
            ) * self.pitch
    }
}

/// Time-resolved pressure traces, one row per detector.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSet {
    data: Vec<f64>,
    n_detectors: usize,
    time: TimeGrid,
    medium: MediumConfig,
}

impl SignalSet {
    pub fn zeros(n_detectors: usize, time: TimeGrid, medium: MediumConfig) -> Self {
        Self {
            data: vec![0.0; n_detectors * time.n_samples],
            n_detectors,
            time,
            medium,
        }
    }

    pub fn from_rows(data: Vec<f64>, n_detectors: usize, time: TimeGrid, medium: MediumConfig) -> Result<Self> {
        if data.len() != n_detectors * time.n_samples {
            return Err(Error::ShapeMismatch(format!(
                "signal payload of {} values does not match {} x {}",
                data.len(),
                n_detectors,
                time.n_samples
            )));
        }
        Ok(Self {
            data,
            n_detectors,
            time,
            medium,
        })
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn n_samples(&self) -> usize {
        self.time.n_samples
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn medium(&self) -> &MediumConfig {
        &self.medium
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.time.n_samples;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.time.n_samples;
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks(self.time.n_samples)
    }

    pub fn same_shape(&self, other: &SignalSet) -> bool {
        self.n_detectors == other.n_detectors && self.time.n_samples == other.time.n_samples
    }

    /// Subset of rows, in the order given.
    pub fn select_rows(&self, rows: &[usize]) -> SignalSet {
        let mut data = Vec::with_capacity(rows.len() * self.n_samples());
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        SignalSet {
            data,
            n_detectors: rows.len(),
            time: self.time,
            medium: self.medium,
        }
    }

    /// Row-wise concatenation; time grids must agree.
    pub fn concat(sets: &[&SignalSet]) -> Result<SignalSet> {
        let first = sets
            .first()
            .ok_or_else(|| Error::InvalidParameter("cannot concatenate zero signal sets".into()))?;
        let mut data = Vec::new();
        let mut n = 0;
        for s in sets {
            if s.time != first.time {
                return Err(Error::ShapeMismatch("signal sets have different time grids".into()));
            }
            data.extend_from_slice(&s.data);
            n += s.n_detectors;
        }
        Ok(SignalSet {
            data,
            n_detectors: n,
            time: first.time,
            medium: first.medium,
        })
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}
