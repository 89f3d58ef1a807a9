//! Tracker-free multi-view photoacoustic imaging: a differentiable
//! far-field radiation model and the pose-recovery pipeline built on it.
//!
//! The pipeline runs in five stages:
//!
//! 1. reconstruct a reference volume from the view with known pose
//!    ([`recon`]);
//! 2. localise every sensor of the unknown view against that reference
//!    ([`localize`]);
//! 3. fit the rigid array template to the localised sensors, rejecting
//!    outliers ([`rigid`]);
//! 4. refine the rigid pose by gradient descent on the inlier signals
//!    ([`pose`]);
//! 5. reconstruct jointly from all views ([`recon`]).
//!
//! [`phantom`] generates synthetic scenes and acquisitions, [`metrics`] and
//! [`io`] cover evaluation and file formats, and [`pipeline`] strings the
//! stages together.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Physics entry points take medium, kernel and time grid explicitly.
#![allow(clippy::too_many_arguments)]

pub mod config;
pub mod error;
pub mod io;
pub mod localize;
pub mod losses;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod pose;
pub mod radiate;
pub mod recon;
pub mod rigid;

pub use error::{Error, Result};

/// World coordinates in millimetres.
pub type Vec3 = nalgebra::Vector3<f64>;
