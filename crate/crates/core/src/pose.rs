//! Rigid poses parameterised by ZYX intrinsic Euler angles, and the global
//! pose fine-tuning against a frozen reference.
//!
//! `R(θ) = Rz(θ0) · Ry(θ1) · Rx(θ2)`. A pose maps template coordinates to
//! world coordinates: `x = R(θ) p + t`.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localize::Reference;
use crate::losses::{nc_loss, Adam, OptimConfig};
use crate::radiate::forward::{position_gradient, trace_with, Pulse};
use crate::radiate::{KernelConfig, MediumConfig, SignalSet};
use crate::rigid::ArrayTemplate;
use crate::Vec3;

pub const EULER_CONVENTION: &str = "ZYX-intrinsic";

/// Middle angles within this distance (rad) of ±π/2 are reported as gimbal lock.
pub const GIMBAL_TOLERANCE: f64 = 1e-3;

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Skew generators: `d/da R_axis(a) = G_axis · R_axis(a)`.
const GEN_X: [f64; 9] = [0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0];
const GEN_Y: [f64; 9] = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0];
const GEN_Z: [f64; 9] = [0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];

fn generator(g: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::from_row_slice(g)
}

/// Rotation matrix and its partial derivatives with respect to the three angles.
pub fn euler_to_matrix(euler: &[f64; 3]) -> (Matrix3<f64>, [Matrix3<f64>; 3]) {
    let (rz, ry, rx) = (rot_z(euler[0]), rot_y(euler[1]), rot_x(euler[2]));
    let r = rz * ry * rx;
    let d0 = generator(&GEN_Z) * r;
    let d1 = rz * generator(&GEN_Y) * ry * rx;
    let d2 = r * generator(&GEN_X);
    (r, [d0, d1, d2])
}

/// Euler angles of a rotation matrix, each wrapped to `(−π, π]`.
///
/// In gimbal lock only the sum or difference of the outer angles is defined;
/// the returned split puts all of it in the first angle.
pub fn matrix_to_euler(r: &Matrix3<f64>) -> [f64; 3] {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    let (roll, pitch, yaw) = rot.euler_angles();
    [wrap_angle(yaw), wrap_angle(pitch), wrap_angle(roll)]
}

/// True when the middle angle sits within `tolerance` of ±π/2.
pub fn near_gimbal_lock(euler: &[f64; 3], tolerance: f64) -> bool {
    (euler[1].abs() - PI / 2.0).abs() < tolerance
}

/// Angle (rad) of the relative rotation `aᵀ b`.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    // atan2 keeps precision for small angles, where acos of the trace does not.
    let axis = Vec3::new(rel[(2, 1)] - rel[(1, 2)], rel[(0, 2)] - rel[(2, 0)], rel[(1, 0)] - rel[(0, 1)]);
    (0.5 * axis.norm()).atan2(0.5 * (rel.trace() - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Radians, ZYX intrinsic.
    pub euler: [f64; 3],
    /// Millimetres.
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            euler: [0.0; 3],
            translation: Vec3::zeros(),
        }
    }

    pub fn new(euler: [f64; 3], translation: Vec3) -> Self {
        Self {
            euler: euler.map(wrap_angle),
            translation,
        }
    }

    pub fn from_rotation(rotation: &Matrix3<f64>, translation: Vec3) -> Self {
        Self::new(matrix_to_euler(rotation), translation)
    }

    /// Rotation of `angle` radians about `axis` followed by `translation`.
    pub fn from_axis_angle(axis: &Vec3, angle: f64, translation: Vec3) -> Result<Self> {
        let unit = nalgebra::Unit::try_new(*axis, 1e-12)
            .ok_or_else(|| Error::InvalidParameter("rotation axis has zero length".into()))?;
        let r = nalgebra::Rotation3::from_axis_angle(&unit, angle);
        Ok(Self::from_rotation(r.matrix(), translation))
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        euler_to_matrix(&self.euler).0
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.translation
    }

    pub fn apply_all(&self, points: &[Vec3]) -> Vec<Vec3> {
        let r = self.rotation();
        points.iter().map(|p| r * p + self.translation).collect()
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        let r = self.rotation();
        Pose::from_rotation(&(r * other.rotation()), r * other.translation + self.translation)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation().transpose();
        Pose::from_rotation(&rt, -(rt * self.translation))
    }

    pub fn near_gimbal_lock(&self) -> bool {
        near_gimbal_lock(&self.euler, GIMBAL_TOLERANCE)
    }

    /// Rotation error in degrees against `truth`.
    pub fn rotation_error_deg(&self, truth: &Pose) -> f64 {
        rotation_angle_between(&self.rotation(), &truth.rotation()).to_degrees()
    }

    /// Translation error in millimetres against `truth`.
    pub fn translation_error(&self, truth: &Pose) -> f64 {
        (self.translation - truth.translation).norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub optim: OptimConfig,
    /// Kernel width used for the loss; `None` keeps the acquisition kernel.
    pub sigma: Option<f64>,
    /// Consecutive non-improving iterations tolerated before giving up.
    pub patience: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            optim: OptimConfig {
                learning_rate: 1e-2,
                max_iters: 1000,
                convergence_tol: 1e-9,
                ..OptimConfig::default()
            },
            sigma: None,
            patience: 50,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        if let Some(s) = self.sigma {
            if !(s > 0.0) {
                return Err(Error::InvalidParameter(format!("loss sigma must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GlobalLoss {
    pub value: f64,
    pub grad_euler: [f64; 3],
    pub grad_translation: Vec3,
    /// Masked sensors left out because a trace was flat.
    pub dropped: Vec<usize>,
}

fn check_inputs(template: &ArrayTemplate, measured: &SignalSet, mask: &[usize]) -> Result<()> {
    if measured.n_detectors() != template.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} signal rows for {} template points",
            measured.n_detectors(),
            template.len()
        )));
    }
    if mask.is_empty() {
        return Err(Error::InvalidParameter("inlier mask is empty".into()));
    }
    if let Some(&bad) = mask.iter().find(|&&i| i >= template.len()) {
        return Err(Error::InvalidParameter(format!("mask index {bad} out of range")));
    }
    Ok(())
}

/// Sum of NC losses over the masked sensors placed by `pose`, with gradients
/// with respect to the Euler angles and the translation.
pub fn global_loss(
    pose: &Pose,
    template: &ArrayTemplate,
    reference: &Reference,
    measured: &SignalSet,
    mask: &[usize],
    medium: &MediumConfig,
    kernel: &KernelConfig,
) -> Result<GlobalLoss> {
    check_inputs(template, measured, mask)?;
    kernel.validate()?;
    let pulse = Pulse::new(measured.time(), medium, kernel);
    evaluate(pose, template, reference, measured, mask, &pulse)
}

fn evaluate(
    pose: &Pose,
    template: &ArrayTemplate,
    reference: &Reference,
    measured: &SignalSet,
    mask: &[usize],
    pulse: &Pulse,
) -> Result<GlobalLoss> {
    let (r, dr) = euler_to_matrix(&pose.euler);
    let sources = reference.sources();
    let terms: Vec<Result<Option<(f64, Vec3, [f64; 3])>>> = mask
        .par_iter()
        .map(|&i| {
            let p = template.positions()[i];
            let x = r * p + pose.translation;
            let mut trace = vec![0.0; measured.n_samples()];
            trace_with(pulse, sources, &x, &mut trace)?;
            let (loss, cot) = match nc_loss(&trace, measured.row(i)) {
                Ok(v) => v,
                Err(Error::VarianceDegenerate { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let gx = position_gradient(pulse, sources, &x, &cot)?;
            let ge = [0, 1, 2].map(|a| gx.dot(&(dr[a] * p)));
            Ok(Some((loss, gx, ge)))
        })
        .collect();

    let mut value = 0.0;
    let mut grad_euler = [0.0; 3];
    let mut grad_translation = Vec3::zeros();
    let mut dropped = Vec::new();
    for (&i, term) in mask.iter().zip(terms) {
        match term? {
            Some((l, gx, ge)) => {
                value += l;
                grad_translation += gx;
                for a in 0..3 {
                    grad_euler[a] += ge[a];
                }
            }
            None => {
                log::warn!("sensor {i}: flat simulated or measured trace, left out of the pose loss");
                dropped.push(i);
            }
        }
    }
    if dropped.len() == mask.len() {
        return Err(Error::AllSensorsDegenerate);
    }
    Ok(GlobalLoss {
        value,
        grad_euler,
        grad_translation,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseTraceEntry {
    pub iteration: usize,
    pub loss: f64,
    pub euler: [f64; 3],
    pub translation: Vec3,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefineResult {
    pub pose: Pose,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    /// Set when the loss stopped improving for `patience` iterations.
    pub stalled: bool,
    pub gimbal_lock: bool,
    pub trace: Vec<PoseTraceEntry>,
    /// Every sensor placed by the returned pose, outliers included.
    pub positions: Vec<Vec3>,
}

/// Adam on `(θ, t)` starting from `initial`; returns the best pose seen.
///
/// Angle steps use `learning_rate / radius` with `radius` the largest template
/// norm, so both parameter groups move sensors by comparable distances.
pub fn refine_pose(
    initial: &Pose,
    template: &ArrayTemplate,
    reference: &Reference,
    measured: &SignalSet,
    mask: &[usize],
    config: &RefineConfig,
    medium: &MediumConfig,
    kernel: &KernelConfig,
) -> Result<RefineResult> {
    config.validate()?;
    check_inputs(template, measured, mask)?;
    let kernel = match config.sigma {
        Some(s) => kernel.with_sigma(s),
        None => *kernel,
    };
    kernel.validate()?;
    let pulse = Pulse::new(measured.time(), medium, &kernel);
    let radius = template.radius().max(1e-9);
    let lr_t = config.optim.learning_rate;
    let lrs = [lr_t / radius, lr_t / radius, lr_t / radius, lr_t, lr_t, lr_t];

    let mut params = [
        initial.euler[0],
        initial.euler[1],
        initial.euler[2],
        initial.translation.x,
        initial.translation.y,
        initial.translation.z,
    ];
    let to_pose = |p: &[f64; 6]| Pose::new([p[0], p[1], p[2]], Vec3::new(p[3], p[4], p[5]));

    let mut adam = Adam::new(6);
    let mut trace = Vec::new();
    let mut best = (f64::INFINITY, *initial);
    let mut initial_loss = f64::NAN;
    let mut previous = f64::NAN;
    let mut stall = 0;
    let mut stalled = false;
    let mut iterations = 0;
    for it in 0..=config.optim.max_iters {
        let pose = to_pose(&params);
        let g = evaluate(&pose, template, reference, measured, mask, &pulse)?;
        if !g.value.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        iterations = it;
        trace.push(PoseTraceEntry {
            iteration: it,
            loss: g.value,
            euler: pose.euler,
            translation: pose.translation,
        });
        if it == 0 {
            initial_loss = g.value;
        }
        if g.value < best.0 {
            best = (g.value, pose);
            stall = 0;
        } else {
            stall += 1;
            if stall >= config.patience {
                log::warn!("pose loss has not improved for {stall} iterations; keeping the best pose");
                stalled = true;
                break;
            }
        }
        if it > 0 && config.optim.converged(previous, g.value) {
            break;
        }
        if it == config.optim.max_iters {
            break;
        }
        previous = g.value;
        let grads = [
            g.grad_euler[0],
            g.grad_euler[1],
            g.grad_euler[2],
            g.grad_translation.x,
            g.grad_translation.y,
            g.grad_translation.z,
        ];
        adam.step_scaled(&mut params, &grads, &config.optim, &lrs);
    }

    let pose = best.1;
    let gimbal_lock = pose.near_gimbal_lock();
    if gimbal_lock {
        log::warn!("refined pose is near gimbal lock (middle angle {:.6} rad)", pose.euler[1]);
    }
    Ok(RefineResult {
        pose,
        initial_loss,
        final_loss: best.0,
        iterations,
        stalled,
        gimbal_lock,
        trace,
        positions: pose.apply_all(template.positions()),
    })
}
