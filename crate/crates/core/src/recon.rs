//! TGV-regularised volume reconstruction from one or more calibrated views.
//!
//! Minimises
//!
//! ```text
//! J(P, w) = ‖A P − S‖² / ‖S‖²  +  λ · TGV(P, w)
//! ```
//!
//! over the voxel intensities `P ≥ 0` and the TGV auxiliary field `w` with
//! Adam. Dividing the data term by `‖S‖²` leaves the minimiser unchanged and
//! makes `λ` and the learning rate independent of the signal scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{tgv_loss, Adam, OptimConfig, TgvConfig};
use crate::phantom::SensorArray;
use crate::radiate::{forward_from_grid, grad_amplitudes, KernelConfig, MediumConfig, SignalSet, TabulatedProjector, VolumeGrid};
use crate::Vec3;

/// Regularisation weight against the normalised data term.
pub const DEFAULT_LAMBDA: f64 = 1e-4;
/// Bounds applied to the automatically chosen λ.
const LAMBDA_RANGE: (f64, f64) = (1e-8, 1e2);
/// λ is this fraction of the data-to-regulariser ratio at the starting point.
const LAMBDA_RATIO: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Zeros,
    /// Adjoint applied to the signals, scaled to fit them in least squares
    /// and clipped at zero.
    Backprojection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OperatorMode {
    /// Direct evaluation of the model for every voxel and sample.
    Exact,
    /// Precomputed distance table ([`TabulatedProjector`]).
    #[default]
    Tabulated,
}

/// Learning-rate schedule over the reconstruction iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the configured rate to zero at `max_iters`.
    /// Adam moves every voxel by roughly the learning rate per step, so a
    /// constant rate leaves a background floor of that size.
    #[default]
    Cosine,
}

impl LrSchedule {
    fn factor(self, it: usize, max_iters: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * it as f64 / max_iters.max(1) as f64).cos()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    pub grid_dims: [usize; 3],
    /// Centre of the grid, mm.
    pub center: Vec3,
    pub pitch: f64,
    pub tgv: TgvConfig,
    pub optim: OptimConfig,
    pub init_mode: InitMode,
    pub operator: OperatorMode,
    /// Distance-table refinement for the tabulated operator.
    pub oversample: usize,
    #[serde(default)]
    pub schedule: LrSchedule,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            grid_dims: [64, 64, 64],
            center: Vec3::zeros(),
            pitch: 0.2,
            tgv: TgvConfig {
                lambda: Some(DEFAULT_LAMBDA),
                ..TgvConfig::default()
            },
            optim: OptimConfig {
                learning_rate: 0.05,
                max_iters: 200,
                convergence_tol: 1e-7,
                ..OptimConfig::default()
            },
            init_mode: InitMode::Zeros,
            operator: OperatorMode::Tabulated,
            oversample: TabulatedProjector::DEFAULT_OVERSAMPLE,
            schedule: LrSchedule::Cosine,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        self.tgv.validate()?;
        self.optim.validate()?;
        if self.oversample == 0 {
            return Err(Error::InvalidParameter("oversample must be >= 1".into()));
        }
        self.grid().map(|_| ())
    }

    pub fn grid(&self) -> Result<VolumeGrid> {
        VolumeGrid::centered(self.grid_dims, self.center, self.pitch)
    }
}

#[derive(Debug, Clone)]
pub struct ReconResult {
    pub volume: VolumeGrid,
    /// Objective after every iteration's evaluation (normalised).
    pub loss_trace: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
}

enum Operator {
    Exact {
        grid: VolumeGrid,
        detectors: Vec<Vec3>,
        medium: MediumConfig,
        kernel: KernelConfig,
    },
    Tabulated(TabulatedProjector),
}

impl Operator {
    fn forward(&self, values: &[f64], out: &mut SignalSet) -> Result<()> {
        match self {
            Operator::Exact {
                grid,
                detectors,
                medium,
                kernel,
            } => {
                *out = forward_from_grid(&grid.with_intensities(values.to_vec())?, detectors, out.time(), medium, kernel)?;
                Ok(())
            }
            Operator::Tabulated(p) => p.forward_into(values, out),
        }
    }

    fn adjoint(&self, residual: &SignalSet, out: &mut [f64]) -> Result<()> {
        match self {
            Operator::Exact {
                grid,
                detectors,
                medium,
                kernel,
            } => {
                // All voxels, zero or not, need a gradient.
                let all = crate::radiate::SourceCloud::new(
                    (0..grid.len()).map(|k| grid.voxel_position(k)).collect(),
                    vec![1.0; grid.len()],
                )?;
                let g = grad_amplitudes(&all, detectors, residual.time(), medium, kernel, residual)?;
                out.copy_from_slice(&g);
                Ok(())
            }
            Operator::Tabulated(p) => p.adjoint_into(residual, out),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reconstructs the volume seen by all `arrays` (with known poses) from
/// their `signals`.
pub fn reconstruct(
    arrays: &[SensorArray],
    signals: &[SignalSet],
    config: &ReconConfig,
    medium: &MediumConfig,
    kernel: &KernelConfig,
) -> Result<ReconResult> {
    config.validate()?;
    kernel.validate()?;
    if arrays.is_empty() || arrays.len() != signals.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} arrays and {} signal sets",
            arrays.len(),
            signals.len()
        )));
    }
    for (i, (a, s)) in arrays.iter().zip(signals).enumerate() {
        if a.len() != s.n_detectors() {
            return Err(Error::ShapeMismatch(format!(
                "view {i}: {} elements but {} signal rows",
                a.len(),
                s.n_detectors()
            )));
        }
    }
    let measured = SignalSet::concat(&signals.iter().collect::<Vec<_>>())?;
    let detectors: Vec<Vec3> = arrays.iter().flat_map(|a| a.world_positions().iter().copied()).collect();
    let grid = config.grid()?;
    let time = *measured.time();

    let op = match config.operator {
        OperatorMode::Exact => Operator::Exact {
            grid: grid.clone(),
            detectors,
            medium: *medium,
            kernel: *kernel,
        },
        OperatorMode::Tabulated => {
            Operator::Tabulated(TabulatedProjector::new(&grid, &detectors, &time, medium, kernel, config.oversample)?)
        }
    };

    let n = grid.len();
    let s2 = measured.squared_norm();
    let scale = if s2 > 0.0 { 1.0 / s2 } else { 1.0 };

    // Least-squares scaled backprojection: the starting point for
    // `Backprojection` and the yardstick for the automatic λ.
    let mut backprojection = vec![0.0; n];
    let mut sim = SignalSet::zeros(measured.n_detectors(), time, *medium);
    if s2 > 0.0 && (config.init_mode == InitMode::Backprojection || config.tgv.lambda.is_none()) {
        op.adjoint(&measured, &mut backprojection)?;
        op.forward(&backprojection, &mut sim)?;
        let denom = sim.squared_norm();
        let c = if denom > 0.0 { dot(sim.data(), measured.data()) / denom } else { 0.0 };
        backprojection.iter_mut().for_each(|v| *v = (*v * c).max(0.0));
    }

    let lambda = match config.tgv.lambda {
        Some(l) => l,
        None => {
            let bp = grid.with_intensities(backprojection.clone())?;
            let reg = tgv_loss(&bp, &vec![0.0; 3 * n], &config.tgv)?.value;
            op.forward(&backprojection, &mut sim)?;
            let data: f64 = sim
                .data()
                .iter()
                .zip(measured.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                * scale;
            let ratio = if reg > 0.0 { data.max(scale * s2) / reg } else { LAMBDA_RANGE.1 };
            (LAMBDA_RATIO * ratio).clamp(LAMBDA_RANGE.0, LAMBDA_RANGE.1)
        }
    };

    let mut params = vec![0.0; 4 * n];
    if config.init_mode == InitMode::Backprojection {
        params[..n].copy_from_slice(&backprojection);
    }
    let mut adam = Adam::new(4 * n);
    let mut grads = vec![0.0; 4 * n];
    let mut adj = vec![0.0; n];
    let mut volume = grid.clone();
    let mut loss_trace = Vec::with_capacity(config.optim.max_iters + 1);
    let mut previous = f64::NAN;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..=config.optim.max_iters {
        volume.intensities_mut().copy_from_slice(&params[..n]);
        op.forward(&params[..n], &mut sim)?;
        let mut data = 0.0;
        for (r, m) in sim.data_mut().iter_mut().zip(measured.data()) {
            let d = *r - m;
            data += d * d;
            *r = 2.0 * scale * d;
        }
        data *= scale;
        let loss = if lambda > 0.0 {
            let reg = tgv_loss(&volume, &params[n..], &config.tgv)?;
            for (g, r) in grads[..n].iter_mut().zip(&reg.grad_volume) {
                *g = lambda * r;
            }
            for (g, r) in grads[n..].iter_mut().zip(&reg.grad_aux) {
                *g = lambda * r;
            }
            data + lambda * reg.value
        } else {
            grads.iter_mut().for_each(|g| *g = 0.0);
            data
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        loss_trace.push(loss);
        iterations = it;
        log::debug!("reconstruction iteration {it}: loss {loss:.6e} (data {data:.6e})");
        if it > 0 && config.optim.converged(previous, loss) {
            converged = true;
            break;
        }
        if loss == 0.0 || it == config.optim.max_iters {
            converged = loss == 0.0;
            break;
        }
        previous = loss;
        op.adjoint(&sim, &mut adj)?;
        for (g, a) in grads[..n].iter_mut().zip(&adj) {
            *g += a;
        }
        let optim = OptimConfig {
            learning_rate: config.optim.learning_rate * config.schedule.factor(it, config.optim.max_iters),
            ..config.optim
        };
        adam.step(&mut params, &grads, &optim);
        params[..n].iter_mut().for_each(|p| *p = p.max(0.0));
    }

    volume.intensities_mut().copy_from_slice(&params[..n]);
    Ok(ReconResult {
        volume,
        loss_trace,
        lambda,
        iterations,
        converged,
    })
}
