//! Rigid fitting of the array template to per-sensor position estimates:
//! Kabsch alignment inside a RANSAC loop that screens samples by pairwise
//! edge lengths before solving.

use nalgebra::{Matrix3, SVD};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localize::SensorEstimate;
use crate::Vec3;

/// Relative singular-value floor below which a point set counts as collinear.
const COLLINEAR_RTOL: f64 = 1e-9;

/// Element positions in the array's own frame (mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayTemplate {
    positions: Vec<Vec3>,
}

impl ArrayTemplate {
    pub fn new(positions: Vec<Vec3>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidParameter("array template has no elements".into()));
        }
        if positions.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidParameter("array template has non-finite coordinates".into()));
        }
        Ok(Self { positions })
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Largest distance of an element from the frame origin.
    pub fn radius(&self) -> f64 {
        self.positions.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    /// At least three elements, not all on one line.
    pub fn is_observable(&self) -> bool {
        self.len() >= 3 && !collinear(&self.positions)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let positions = indices
            .iter()
            .map(|&i| {
                self.positions
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::InvalidParameter(format!("element index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(positions)
    }
}

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().sum::<Vec3>() / points.len() as f64
}

fn collinear(points: &[Vec3]) -> bool {
    let c = centroid(points);
    let cov: Matrix3<f64> = points.iter().map(|p| (p - c) * (p - c).transpose()).sum();
    let mut sv = cov.symmetric_eigenvalues().map(f64::abs);
    sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    !(sv[0] > 0.0) || sv[1] <= COLLINEAR_RTOL * sv[0]
}

/// Least-squares rigid transform with `world ≈ R · template + t`.
pub fn kabsch(template: &[Vec3], world: &[Vec3]) -> Result<(Matrix3<f64>, Vec3)> {
    if template.len() != world.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} template points, {} world points",
            template.len(),
            world.len()
        )));
    }
    if template.len() < 3 {
        return Err(Error::DegenerateSample(format!("{} points cannot fix a rotation", template.len())));
    }
    if collinear(template) {
        return Err(Error::DegenerateSample("template points are collinear".into()));
    }
    let ct = centroid(template);
    let cw = centroid(world);
    let h: Matrix3<f64> = template.iter().zip(world).map(|(p, w)| (w - cw) * (p - ct).transpose()).sum();
    let svd = SVD::new(h, true, true);
    let (u, v_t) = (svd.u.expect("U requested"), svd.v_t.expect("Vᵀ requested"));
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = u * fix * v_t;
    Ok((r, cw - r * ct))
}

/// True when every pairwise distance agrees between the two samples within `tolerance`.
pub fn edge_consistency_check(sample_template: &[Vec3], sample_world: &[Vec3], tolerance: f64) -> bool {
    debug_assert_eq!(sample_template.len(), sample_world.len());
    let n = sample_template.len().min(sample_world.len());
    for i in 0..n {
        for j in i + 1..n {
            let dp = (sample_template[i] - sample_template[j]).norm();
            let dw = (sample_world[i] - sample_world[j]).norm();
            if !((dw - dp).abs() <= tolerance) {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub n_iterations: usize,
    pub sample_size: usize,
    /// mm
    pub inlier_threshold: f64,
    /// mm
    pub edge_tolerance: f64,
    /// `None` uses `max(6, ⌈N/4⌉)`.
    #[serde(default)]
    pub min_inliers: Option<usize>,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            n_iterations: 2000,
            sample_size: 4,
            inlier_threshold: 0.3,
            edge_tolerance: 0.6,
            min_inliers: None,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_size < 3 || self.n_iterations == 0 || !(self.inlier_threshold > 0.0) || !(self.edge_tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid RANSAC settings {self:?}")));
        }
        Ok(())
    }

    pub fn required_inliers(&self, n: usize) -> usize {
        self.min_inliers.unwrap_or_else(|| 6.max(n.div_ceil(4)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidFitResult {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    /// Sorted template indices.
    pub inliers: Vec<usize>,
    pub rms_inlier_residual: f64,
    /// Distance of every estimate from its transformed template point
    /// (infinite for non-finite estimates), indexed like the template.
    pub residuals: Vec<f64>,
    /// Samples rejected by the edge check without solving.
    pub rejected_samples: usize,
}

struct Candidate {
    inliers: usize,
    rms: f64,
    iteration: usize,
    rotation: Matrix3<f64>,
    translation: Vec3,
}

fn residuals(template: &ArrayTemplate, world: &[Option<Vec3>], r: &Matrix3<f64>, t: &Vec3) -> Vec<f64> {
    template
        .positions()
        .iter()
        .zip(world)
        .map(|(p, w)| match w {
            Some(w) => (r * p + t - w).norm(),
            None => f64::INFINITY,
        })
        .collect()
}

fn score(res: &[f64], threshold: f64) -> (Vec<usize>, f64) {
    let inliers: Vec<usize> = (0..res.len()).filter(|&i| res[i] <= threshold).collect();
    let rms = if inliers.is_empty() {
        f64::INFINITY
    } else {
        (inliers.iter().map(|&i| res[i] * res[i]).sum::<f64>() / inliers.len() as f64).sqrt()
    };
    (inliers, rms)
}

/// Index-bound RANSAC: estimate `i` is matched with template point `i`.
///
/// Only converged estimates are sampled; every estimate with finite
/// coordinates is classified against the final transform.
pub fn ransac_fit(template: &ArrayTemplate, estimates: &[SensorEstimate], config: &RansacConfig) -> Result<RigidFitResult> {
    config.validate()?;
    let n = template.len();
    let mut world: Vec<Option<Vec3>> = vec![None; n];
    let mut usable = Vec::new();
    for e in estimates {
        if e.index >= n {
            return Err(Error::InvalidParameter(format!("estimate index {} outside the template", e.index)));
        }
        if e.position.iter().all(|v| v.is_finite()) {
            world[e.index] = Some(e.position);
            if e.converged {
                usable.push(e.index);
            }
        }
    }
    usable.sort_unstable();
    usable.dedup();
    let required = config.required_inliers(n);
    if usable.len() < config.sample_size.max(3) {
        return Err(Error::FitFailed {
            inliers: usable.len(),
            required,
            best_rms: f64::INFINITY,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let samples: Vec<Vec<usize>> = (0..config.n_iterations)
        .map(|_| sample(&mut rng, usable.len(), config.sample_size).into_iter().map(|k| usable[k]).collect())
        .collect();

    let outcomes: Vec<Option<Candidate>> = samples
        .par_iter()
        .enumerate()
        .map(|(iteration, idx)| {
            let tp: Vec<Vec3> = idx.iter().map(|&i| template.positions()[i]).collect();
            let wp: Vec<Vec3> = idx.iter().map(|&i| world[i].expect("usable estimates are finite")).collect();
            if !edge_consistency_check(&tp, &wp, config.edge_tolerance) {
                return None;
            }
            let (r, t) = kabsch(&tp, &wp).ok()?;
            let (inl, rms) = score(&residuals(template, &world, &r, &t), config.inlier_threshold);
            Some(Candidate {
                inliers: inl.len(),
                rms,
                iteration,
                rotation: r,
                translation: t,
            })
        })
        .collect();
    let rejected_samples = outcomes.iter().filter(|o| o.is_none()).count();

    let best = outcomes.into_iter().flatten().min_by(|a, b| {
        b.inliers
            .cmp(&a.inliers)
            .then(a.rms.total_cmp(&b.rms))
            .then(a.iteration.cmp(&b.iteration))
    });
    let Some(best) = best else {
        return Err(Error::FitFailed {
            inliers: 0,
            required,
            best_rms: f64::INFINITY,
        });
    };

    let (mut r, mut t) = (best.rotation, best.translation);
    let mut res = residuals(template, &world, &r, &t);
    let (mut inliers, mut rms) = score(&res, config.inlier_threshold);
    // Refit on the consensus set until it stops changing.
    for _ in 0..20 {
        if inliers.len() < 3 {
            break;
        }
        let tp: Vec<Vec3> = inliers.iter().map(|&i| template.positions()[i]).collect();
        let wp: Vec<Vec3> = inliers.iter().map(|&i| world[i].expect("inliers are finite")).collect();
        let Ok((r2, t2)) = kabsch(&tp, &wp) else {
            break;
        };
        let res2 = residuals(template, &world, &r2, &t2);
        let (inl2, rms2) = score(&res2, config.inlier_threshold);
        if inl2.len() < 3 {
            break;
        }
        let stable = inl2 == inliers;
        (r, t, res, inliers, rms) = (r2, t2, res2, inl2, rms2);
        if stable {
            break;
        }
    }

    if inliers.len() < required {
        return Err(Error::FitFailed {
            inliers: inliers.len(),
            required,
            best_rms: rms,
        });
    }
    Ok(RigidFitResult {
        rotation: r,
        translation: t,
        inliers,
        rms_inlier_residual: rms,
        residuals: res,
        rejected_samples,
    })
}
