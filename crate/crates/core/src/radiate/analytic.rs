//! Closed-form pressure of spherically symmetric initial distributions.
//!
//! For a radial initial pressure `p0(ρ)` and instantaneous heating, the field
//! at distance `r` from the centre is
//!
//! ```text
//! p(r, t) = [ (r + v t)·p0(r + v t) + (r − v t)·p0(|r − v t|) ] / 2r
//! ```
//!
//! The first bracket term is the converging (incoming) wave, the second the
//! diverging one. [`far_field_pressure`] keeps only the second term.

use serde::{Deserialize, Serialize};

use super::MediumConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SphericalSourceKind {
    /// `p0 · U(a0 − ρ)`
    Uniform { radius: f64 },
    /// `p0 · exp(−ρ² / 2σ²)`
    Gaussian { sigma: f64 },
    /// `p0 · exp(−ρ / a)`
    Exponential { scale: f64 },
    /// `p0 / (ρ² + a²)^ν`, ν > 1/2
    PowerLaw { scale: f64, exponent: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalSourceSpec {
    /// Amplitude (`p0`, `p_c` or `A` depending on the profile).
    pub amplitude: f64,
    #[serde(flatten)]
    pub kind: SphericalSourceKind,
}

impl SphericalSourceSpec {
    pub fn uniform(amplitude: f64, radius: f64) -> Result<Self> {
        Self::new(amplitude, SphericalSourceKind::Uniform { radius })
    }

    pub fn gaussian(amplitude: f64, sigma: f64) -> Result<Self> {
        Self::new(amplitude, SphericalSourceKind::Gaussian { sigma })
    }

    pub fn exponential(amplitude: f64, scale: f64) -> Result<Self> {
        Self::new(amplitude, SphericalSourceKind::Exponential { scale })
    }

    pub fn power_law(amplitude: f64, scale: f64, exponent: f64) -> Result<Self> {
        Self::new(amplitude, SphericalSourceKind::PowerLaw { scale, exponent })
    }

    pub fn new(amplitude: f64, kind: SphericalSourceKind) -> Result<Self> {
        let spec = Self { amplitude, kind };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            SphericalSourceKind::Uniform { radius } => radius > 0.0,
            SphericalSourceKind::Gaussian { sigma } => sigma > 0.0,
            SphericalSourceKind::Exponential { scale } => scale > 0.0,
            SphericalSourceKind::PowerLaw { scale, exponent } => scale > 0.0 && exponent > 0.5,
        };
        if !ok || !self.amplitude.is_finite() {
            return Err(Error::InvalidParameter(format!("invalid spherical source {self:?}")));
        }
        Ok(())
    }

    /// Initial pressure at radius `rho >= 0`.
    pub fn initial_pressure(&self, rho: f64) -> f64 {
        let a = self.amplitude;
        match self.kind {
            SphericalSourceKind::Uniform { radius } => {
                if rho <= radius {
                    a
                } else {
                    0.0
                }
            }
            SphericalSourceKind::Gaussian { sigma } => a * (-rho * rho / (2.0 * sigma * sigma)).exp(),
            SphericalSourceKind::Exponential { scale } => a * (-rho / scale).exp(),
            SphericalSourceKind::PowerLaw { scale, exponent } => a / (rho * rho + scale * scale).powf(exponent),
        }
    }
}

fn check(r: f64, t: f64, medium: &MediumConfig) -> Result<()> {
    medium.validate()?;
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("observation radius must be positive, got {r}")));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("time must be non-negative, got {t}")));
    }
    Ok(())
}

/// Full solution (incoming plus outgoing term).
pub fn analytic_pressure(spec: &SphericalSourceSpec, r: f64, t: f64, medium: &MediumConfig) -> Result<f64> {
    check(r, t, medium)?;
    spec.validate()?;
    let vt = medium.speed_of_sound * t;
    let plus = r + vt;
    let minus = r - vt;
    Ok((plus * spec.initial_pressure(plus) + minus * spec.initial_pressure(minus.abs())) / (2.0 * r))
}

/// Outgoing term only.
pub fn far_field_pressure(spec: &SphericalSourceSpec, r: f64, t: f64, medium: &MediumConfig) -> Result<f64> {
    check(r, t, medium)?;
    spec.validate()?;
    let minus = r - medium.speed_of_sound * t;
    Ok(minus * spec.initial_pressure(minus.abs()) / (2.0 * r))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adaptive Simpson on [a, b].
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let fa = f(a);
        let fb = f(b);
        let m = 0.5 * (a + b);
        let fm = f(m);
        rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
    }

    /// p = 1/(2 v r) d/dt ∫_{|r - vt|}^{r + vt} ρ p0(ρ) dρ, with the time
    /// derivative taken by central differences.
    fn shell_quadrature(spec: &SphericalSourceSpec, r: f64, t: f64, v: f64) -> f64 {
        let integral = |t: f64| {
            let f = |rho: f64| rho * spec.initial_pressure(rho);
            simpson(&f, (r - v * t).abs(), r + v * t, 1e-14)
        };
        let h = 1e-4;
        (integral(t + h) - integral(t - h)) / (2.0 * h) / (2.0 * v * r)
    }

    #[test]
    fn uniform_sphere_vanishes_outside_support() {
        let medium = MediumConfig::default();
        let spec = SphericalSourceSpec::uniform(2.0, 1.0).unwrap();
        let r: f64 = 10.0;
        for t in [0.0, 3.0, 5.9, 7.4, 9.0] {
            let vt = 1.5 * t;
            if (vt - r).abs() > 1.0 {
                assert_eq!(analytic_pressure(&spec, r, t, &medium).unwrap(), 0.0, "t = {t}");
            }
        }
        assert_eq!(analytic_pressure(&spec, r, r / 1.5, &medium).unwrap(), 0.0);
        let inside = analytic_pressure(&spec, r, 6.5, &medium).unwrap();
        assert!((inside - 2.0 / 20.0 * (10.0 - 9.75)).abs() < 1e-15);
    }

    #[test]
    fn gaussian_matches_shell_quadrature() {
        let medium = MediumConfig::default();
        let spec = SphericalSourceSpec::gaussian(1.3, 0.4).unwrap();
        for &(r, dvt) in &[(8.0, -0.3), (8.0, 0.25), (12.0, 0.6), (20.0, -0.7), (15.0, 0.1)] {
            let t = (r + dvt) / 1.5;
            let exact = analytic_pressure(&spec, r, t, &medium).unwrap();
            let quad = shell_quadrature(&spec, r, t, 1.5);
            assert!((exact - quad).abs() <= 1e-3 * exact.abs(), "r={r} t={t}: {exact} vs {quad}");
        }
    }

    #[test]
    fn exponential_and_power_law_match_shell_quadrature() {
        let medium = MediumConfig::default();
        let specs = [
            SphericalSourceSpec::exponential(1.0, 0.5).unwrap(),
            SphericalSourceSpec::power_law(2.0, 0.7, 1.5).unwrap(),
        ];
        for spec in &specs {
            for &(r, dvt) in &[(6.0, -0.5), (9.0, 0.4)] {
                let t = (r + dvt) / 1.5;
                let exact = analytic_pressure(spec, r, t, &medium).unwrap();
                let quad = shell_quadrature(spec, r, t, 1.5);
                assert!((exact - quad).abs() <= 1e-3 * exact.abs(), "{spec:?}: {exact} vs {quad}");
            }
        }
    }

    #[test]
    fn far_field_tracks_full_solution_and_scales_linearly() {
        let medium = MediumConfig::default();
        let sigma = 0.2;
        let spec = SphericalSourceSpec::gaussian(1.0, sigma).unwrap();
        let scaled = SphericalSourceSpec::gaussian(3.5, sigma).unwrap();
        let r = 100.0 * sigma;
        for i in -20..=20 {
            let t = (r + i as f64 * 0.05) / 1.5;
            let full = analytic_pressure(&spec, r, t, &medium).unwrap();
            let far = far_field_pressure(&spec, r, t, &medium).unwrap();
            assert!((full - far).abs() <= 1e-8 * full.abs().max(1e-300));
            let s = far_field_pressure(&scaled, r, t, &medium).unwrap();
            assert!((s - 3.5 * far).abs() <= 1e-14 * s.abs().max(1e-300));
        }
        assert_eq!(far_field_pressure(&spec, r, r / 1.5, &medium).unwrap(), 0.0);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let medium = MediumConfig::default();
        let spec = SphericalSourceSpec::gaussian(1.0, 0.2).unwrap();
        assert!(analytic_pressure(&spec, 0.0, 1.0, &medium).is_err());
        assert!(far_field_pressure(&spec, -1.0, 1.0, &medium).is_err());
        assert!(SphericalSourceSpec::power_law(1.0, 1.0, 0.5).is_err());
        assert!(SphericalSourceSpec::uniform(1.0, 0.0).is_err());
    }
}
