//! Objectives and the first-order optimiser shared by every stage.

pub mod adam;
pub mod nc;
pub mod tgv;

use crate::error::{Error, Result};
use crate::radiate::SignalSet;

pub use adam::{Adam, OptimConfig};
pub use nc::{nc_loss, EPS_VAR};
pub use tgv::{tgv_loss, TgvConfig, TgvValue};

/// Squared ℓ2 residual `‖simulated − measured‖²` and its gradient with
/// respect to `simulated` (`2·residual`).
pub fn mse_loss(simulated: &SignalSet, measured: &SignalSet) -> Result<(f64, SignalSet)> {
    if !simulated.same_shape(measured) {
        return Err(Error::ShapeMismatch(format!(
            "simulated is {} x {}, measured is {} x {}",
            simulated.n_detectors(),
            simulated.n_samples(),
            measured.n_detectors(),
            measured.n_samples()
        )));
    }
    let mut cot = simulated.clone();
    let mut loss = 0.0;
    for (c, m) in cot.data_mut().iter_mut().zip(measured.data()) {
        let r = *c - m;
        loss += r * r;
        *c = 2.0 * r;
    }
    Ok((loss, cot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radiate::{MediumConfig, TimeGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(values: Vec<f64>, rows: usize) -> SignalSet {
        let n = values.len() / rows;
        SignalSet::from_rows(values, rows, TimeGrid::new(0.0, 1.0, n).unwrap(), MediumConfig::default()).unwrap()
    }

    #[test]
    fn identical_inputs_have_zero_loss() {
        let a = set(vec![1.0, -2.0, 3.0, 0.5], 2);
        let (loss, cot) = mse_loss(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        assert!(cot.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_residual() {
        let a = set(vec![1.0; 12], 3);
        let b = set(vec![0.0; 12], 3);
        let (loss, cot) = mse_loss(&a, &b).unwrap();
        assert_eq!(loss, 12.0);
        assert!(cot.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn random_pair_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let va: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vb: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut expected = 0.0;
        for i in 0..40 {
            expected += (va[i] - vb[i]) * (va[i] - vb[i]);
        }
        let (loss, _) = mse_loss(&set(va, 4), &set(vb, 4)).unwrap();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        assert!(mse_loss(&set(vec![0.0; 4], 2), &set(vec![0.0; 4], 1)).is_err());
    }
}
