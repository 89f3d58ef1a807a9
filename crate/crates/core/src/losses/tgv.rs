//! Huber-smoothed second-order total generalized variation.
//!
//! ```text
//! TGV(P, w) = α1 Σ_v H(∇P − w) + α0 Σ_v H(ℰ(w))
//! ```
//!
//! `∇` uses forward differences in voxel units; a component whose forward
//! neighbour lies outside the lattice is left out of both terms rather than
//! set to zero, so affine volumes with a matching constant `w` score exactly
//! zero. `ℰ(w)` is the symmetrised Jacobian of `w`, measured in the Frobenius
//! norm. `H` is the Huber function with knee `huber_eps`.
//!
//! The auxiliary field is stored component-major: `w[c·N + v]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radiate::VolumeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TgvConfig {
    /// Weight of the regulariser against the data term. `None` selects it
    /// from the data at reconstruction time.
    #[serde(default)]
    pub lambda: Option<f64>,
    pub alpha1: f64,
    pub alpha0: f64,
    pub huber_eps: f64,
}

impl Default for TgvConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            alpha1: 1.0,
            alpha0: 2.0,
            huber_eps: 1e-6,
        }
    }
}

impl TgvConfig {
    pub fn validate(&self) -> Result<()> {
        let lambda_ok = self.lambda.is_none_or(|l| l >= 0.0 && l.is_finite());
        if !lambda_ok || !(self.alpha1 >= 0.0) || !(self.alpha0 >= 0.0) || !(self.huber_eps > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid TGV settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TgvValue {
    pub value: f64,
    pub grad_volume: Vec<f64>,
    pub grad_aux: Vec<f64>,
}

#[inline]
fn huber(x: f64, eps: f64) -> f64 {
    if x <= eps {
        x * x / (2.0 * eps)
    } else {
        x - 0.5 * eps
    }
}

pub fn tgv_loss(volume: &VolumeGrid, aux: &[f64], config: &TgvConfig) -> Result<TgvValue> {
    config.validate()?;
    let n = volume.len();
    if aux.len() != 3 * n {
        return Err(Error::ShapeMismatch(format!(
            "aux field needs {} values (3 x {n}), got {}",
            3 * n,
            aux.len()
        )));
    }
    let dims = volume.dims();
    let stride = [1, dims[0], dims[0] * dims[1]];
    let p = volume.intensities();
    let w = [&aux[..n], &aux[n..2 * n], &aux[2 * n..]];
    let eps = config.huber_eps;
    let (a1, a0) = (config.alpha1, config.alpha0);

    let mut value = 0.0;
    let mut gp = vec![0.0; n];
    let mut gw = vec![0.0; 3 * n];

    for kz in 0..dims[2] {
        for ky in 0..dims[1] {
            for kx in 0..dims[0] {
                let idx = kx + dims[0] * (ky + dims[1] * kz);
                let inside = [kx + 1 < dims[0], ky + 1 < dims[1], kz + 1 < dims[2]];

                // First order: ∇P − w.
                let mut z = [0.0; 3];
                for a in 0..3 {
                    if inside[a] {
                        z[a] = p[idx + stride[a]] - p[idx] - w[a][idx];
                    }
                }
                let norm = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt();
                value += a1 * huber(norm, eps);
                let s = a1 / norm.max(eps);
                for a in 0..3 {
                    if inside[a] {
                        let psi = s * z[a];
                        gp[idx + stride[a]] += psi;
                        gp[idx] -= psi;
                        gw[a * n + idx] -= psi;
                    }
                }

                // Second order: symmetrised Jacobian of w.
                let mut jac = [[0.0; 3]; 3];
                for (a, wa) in w.iter().enumerate() {
                    for b in 0..3 {
                        if inside[b] {
                            jac[a][b] = wa[idx + stride[b]] - wa[idx];
                        }
                    }
                }
                let mut sym = [[0.0; 3]; 3];
                let mut fro2 = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        sym[a][b] = 0.5 * (jac[a][b] + jac[b][a]);
                        fro2 += sym[a][b] * sym[a][b];
                    }
                }
                let fro = fro2.sqrt();
                value += a0 * huber(fro, eps);
                let s = a0 / fro.max(eps);
                // ∂‖ℰ‖/∂J_ab = ℰ_ab/‖ℰ‖ because ℰ is the symmetric part of J.
                for a in 0..3 {
                    for b in 0..3 {
                        if inside[b] {
                            let q = s * sym[a][b];
                            gw[a * n + idx + stride[b]] += q;
                            gw[a * n + idx] -= q;
                        }
                    }
                }
            }
        }
    }

    Ok(TgvValue {
        value,
        grad_volume: gp,
        grad_aux: gw,
    })
}
