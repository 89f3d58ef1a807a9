//! Negative Pearson correlation between a simulated and a measured trace.

use crate::error::{Error, Result};

/// Variances below this (squared signal units) make the correlation undefined.
pub const EPS_VAR: f64 = 1e-12;

/// `−Cov(sim, meas) / (σ_sim σ_meas)` with population (1/N) moments, and its
/// gradient with respect to `simulated`.
pub fn nc_loss(simulated: &[f64], measured: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = simulated.len();
    if n != measured.len() {
        return Err(Error::ShapeMismatch(format!(
            "simulated has {n} samples, measured has {}",
            measured.len()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParameter("correlation needs at least two samples".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mean_s = simulated.iter().sum::<f64>() * inv_n;
    let mean_m = measured.iter().sum::<f64>() * inv_n;
    let (mut cov, mut var_s, mut var_m) = (0.0, 0.0, 0.0);
    for (s, m) in simulated.iter().zip(measured) {
        let ds = s - mean_s;
        let dm = m - mean_m;
        cov += ds * dm;
        var_s += ds * ds;
        var_m += dm * dm;
    }
    cov *= inv_n;
    var_s *= inv_n;
    var_m *= inv_n;
    for var in [var_s, var_m] {
        if !(var >= EPS_VAR) {
            return Err(Error::VarianceDegenerate { variance: var });
        }
    }
    let denom = (var_s * var_m).sqrt();
    let loss = (-cov / denom).clamp(-1.0, 1.0);
    // ∂L/∂s_i = −dm_i / (N σ_s σ_m) + cov · ds_i / (N σ_s³ σ_m)
    let a = inv_n / denom;
    let b = cov * inv_n / (var_s * denom);
    let grad = simulated
        .iter()
        .zip(measured)
        .map(|(s, m)| -(m - mean_m) * a + (s - mean_s) * b)
        .collect();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.37).sin() + 0.2 * (i as f64 * 1.3).cos()).collect()
    }

    #[test]
    fn perfect_and_anti_correlation() {
        let m = wave(50);
        assert!((nc_loss(&m, &m).unwrap().0 + 1.0).abs() < 1e-12);
        let neg: Vec<f64> = m.iter().map(|v| -v).collect();
        assert!((nc_loss(&neg, &m).unwrap().0 - 1.0).abs() < 1e-12);
        let affine: Vec<f64> = m.iter().map(|v| 3.0 * v + 7.0).collect();
        assert!((nc_loss(&affine, &m).unwrap().0 + 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_series_is_degenerate() {
        let m = wave(20);
        assert!(matches!(nc_loss(&[2.0; 20], &m), Err(Error::VarianceDegenerate { .. })));
        assert!(matches!(nc_loss(&m, &[0.0; 20]), Err(Error::VarianceDegenerate { .. })));
        assert!(nc_loss(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let s: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, g) = nc_loss(&s, &m).unwrap();
            let h = 1e-6;
            for i in 0..30 {
                let mut sp = s.clone();
                let mut sm = s.clone();
                sp[i] += h;
                sm[i] -= h;
                let fd = (nc_loss(&sp, &m).unwrap().0 - nc_loss(&sm, &m).unwrap().0) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-3), "i={i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_minimum() {
        let m = wave(64);
        let s: Vec<f64> = m.iter().map(|v| 0.25 * v).collect();
        let (_, g) = nc_loss(&s, &m).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-8, "{norm}");
    }

    proptest! {
        #[test]
        fn bounded_and_affine_invariant(
            s in prop::collection::vec(-10.0f64..10.0, 8),
            m in prop::collection::vec(-10.0f64..10.0, 8),
            scale in 0.01f64..100.0,
            shift in -50.0f64..50.0,
        ) {
            if let Ok((l, _)) = nc_loss(&s, &m) {
                prop_assert!((-1.0..=1.0).contains(&l));
                let t: Vec<f64> = s.iter().map(|v| scale * v + shift).collect();
                if let Ok((l2, _)) = nc_loss(&t, &m) {
                    prop_assert!((l - l2).abs() < 1e-9);
                }
            }
        }
    }
}
