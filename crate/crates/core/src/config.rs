//! Declarative run configuration (TOML).
//!
//! Every section has defaults reproducing the standard desk scene, so an
//! empty file is a valid configuration. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localize::{AnnealSchedule, LocalizeConfig, SearchBox};
use crate::losses::{OptimConfig, TgvConfig};
use crate::phantom::{make_spherical_cap_array, SceneSpec};
use crate::pose::{Pose, RefineConfig};
use crate::radiate::{KernelConfig, MediumConfig, TimeGrid, VolumeGrid};
use crate::recon::{InitMode, LrSchedule, OperatorMode, ReconConfig};
use crate::rigid::{ArrayTemplate, RansacConfig};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub dims: [usize; 3],
    pub center: [f64; 3],
    /// mm
    pub pitch: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            dims: [64; 3],
            center: [0.0; 3],
            pitch: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionSection {
    pub n_samples: usize,
    /// µs
    pub t0: f64,
    /// µs; defaults to `pitch / (2 v_s)`.
    pub dt: Option<f64>,
    /// mm/µs
    pub speed_of_sound: f64,
    /// Pulse width in mm; defaults to the grid pitch.
    pub sigma: Option<f64>,
    pub cutoff_radii: f64,
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        Self {
            n_samples: 512,
            t0: 0.0,
            dt: None,
            speed_of_sound: 1.5,
            sigma: None,
            cutoff_radii: KernelConfig::DEFAULT_CUTOFF,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArraySection {
    pub n_elements: usize,
    /// mm
    pub radius: f64,
    pub cap_half_angle_deg: f64,
    pub seed: u64,
    /// When set, the template is split into this many interleaved subsets
    /// and view `i` records with subset `i` only.
    pub split: Option<usize>,
}

impl Default for ArraySection {
    fn default() -> Self {
        Self {
            n_elements: 33,
            radius: 30.0,
            cap_half_angle_deg: 60.0,
            seed: 42,
            split: None,
        }
    }
}

/// A rigid motion given as a rotation about an axis followed by a translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSpec {
    pub axis: [f64; 3],
    pub angle_deg: f64,
    /// mm
    pub translation: [f64; 3],
}

impl MotionSpec {
    pub fn pose(&self) -> Result<Pose> {
        Pose::from_axis_angle(&Vec3::from(self.axis), self.angle_deg.to_radians(), Vec3::from(self.translation))
    }
}

fn default_views() -> Vec<MotionSpec> {
    vec![MotionSpec {
        axis: [1.0, 1.0, 0.0],
        angle_deg: 15.0,
        translation: [3.0, -4.0, 0.0],
    }]
}

fn default_coarse_error() -> MotionSpec {
    MotionSpec {
        axis: [0.3, -1.0, 0.5],
        angle_deg: 2.0,
        translation: [0.6, 0.0, -0.8],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconSection {
    pub learning_rate: f64,
    pub iterations: usize,
    pub convergence_tol: f64,
    /// `None` picks λ from the data.
    pub lambda: Option<f64>,
    pub alpha1: f64,
    pub alpha0: f64,
    pub init: InitMode,
    pub operator: OperatorMode,
    pub oversample: usize,
    pub schedule: LrSchedule,
}

impl Default for ReconSection {
    fn default() -> Self {
        let r = ReconConfig::default();
        Self {
            learning_rate: r.optim.learning_rate,
            iterations: r.optim.max_iters,
            convergence_tol: r.optim.convergence_tol,
            lambda: r.tgv.lambda,
            alpha1: r.tgv.alpha1,
            alpha0: r.tgv.alpha0,
            init: r.init_mode,
            operator: r.operator,
            oversample: r.oversample,
            schedule: r.schedule,
        }
    }
}

/// Overrides for the stage-1 reference solve. Localisation compares traces
/// of this volume against measured ones, so it wants a tight data fit more
/// than a clean image: more iterations and a weaker regulariser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSection {
    pub iterations: usize,
    pub lambda: Option<f64>,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        Self {
            iterations: 3000,
            lambda: Some(1e-6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeSection {
    /// Explicit search box; defaults to the true sensor positions' bounding
    /// box grown by `search_margin`.
    pub search_min: Option<[f64; 3]>,
    pub search_max: Option<[f64; 3]>,
    pub search_margin: f64,
    pub grid_step: f64,
    pub top_k: usize,
    /// Widest annealing σ in mm; defaults to four grid pitches.
    pub sigma_max: Option<f64>,
    pub n_stages: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub reference_threshold: f64,
    pub bins_per_sigma: f64,
}

impl Default for LocalizeSection {
    fn default() -> Self {
        let l = LocalizeConfig::with_bounds(SearchBox::new(Vec3::zeros(), Vec3::repeat(1.0)).unwrap(), 0.2, 0.2);
        Self {
            search_min: None,
            search_max: None,
            search_margin: 0.5,
            grid_step: l.grid_step,
            top_k: l.top_k,
            sigma_max: None,
            n_stages: l.anneal.n_stages,
            learning_rate: l.optim.learning_rate,
            iterations: l.optim.max_iters,
            reference_threshold: l.reference_threshold,
            bins_per_sigma: l.bins_per_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigidSection {
    pub n_iterations: usize,
    pub sample_size: usize,
    pub inlier_threshold: f64,
    pub edge_tolerance: f64,
    pub min_inliers: Option<usize>,
}

impl Default for RigidSection {
    fn default() -> Self {
        let r = RansacConfig::default();
        Self {
            n_iterations: r.n_iterations,
            sample_size: r.sample_size,
            inlier_threshold: r.inlier_threshold,
            edge_tolerance: r.edge_tolerance,
            min_inliers: r.min_inliers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSection {
    pub learning_rate: f64,
    pub iterations: usize,
    pub sigma: Option<f64>,
    pub patience: usize,
    pub convergence_tol: f64,
}

impl Default for RefineSection {
    fn default() -> Self {
        let r = RefineConfig::default();
        Self {
            learning_rate: r.optim.learning_rate,
            iterations: r.optim.max_iters,
            sigma: r.sigma,
            patience: r.patience,
            convergence_tol: r.optim.convergence_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Also run the comparison reconstructions (ground-truth and coarse
    /// poses) needed for the metric table.
    pub comparisons: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("pasfm-out"),
            comparisons: true,
        }
    }
}

/// Complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds the measurement noise and the RANSAC sampling. The scene has
    /// its own seed so that overriding this one keeps the phantom.
    pub seed: u64,
    pub grid: GridSection,
    pub acquisition: AcquisitionSection,
    pub array: ArraySection,
    pub scene: SceneSpec,
    /// Poses of the views after the first, which sits at the identity.
    #[serde(default = "default_views")]
    pub views: Vec<MotionSpec>,
    /// Pose error injected for the coarse comparison reconstruction,
    /// applied on top of each true view pose.
    #[serde(default = "default_coarse_error")]
    pub coarse_error: MotionSpec,
    pub recon: ReconSection,
    pub reference: ReferenceSection,
    pub localize: LocalizeSection,
    pub rigid: RigidSection,
    pub refine: RefineSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            grid: GridSection::default(),
            acquisition: AcquisitionSection::default(),
            array: ArraySection::default(),
            scene: SceneSpec::default(),
            views: default_views(),
            coarse_error: default_coarse_error(),
            recon: ReconSection::default(),
            reference: ReferenceSection::default(),
            localize: LocalizeSection::default(),
            rigid: RigidSection::default(),
            refine: RefineSection::default(),
            output: OutputSection::default(),
        }
    }
}

fn check(ok: bool, key: &str, reason: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(key, reason()))
    }
}

fn positive(value: f64, key: &str) -> Result<()> {
    check(value > 0.0 && value.is_finite(), key, || format!("must be positive and finite, got {value}"))
}

fn finite3(value: &[f64; 3], key: &str) -> Result<()> {
    check(value.iter().all(|v| v.is_finite()), key, || format!("must be finite, got {value:?}"))
}

impl RunConfig {
    /// Parses and validates a TOML file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { path: key, reason } => Error::config(format!("{}: {key}", path.display()), reason),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let reason = e.message().to_string();
            let location = e
                .span()
                .map(|s| {
                    let line = text[..s.start].matches('\n').count() + 1;
                    format!("line {line}")
                })
                .unwrap_or_else(|| "document".into());
            Error::config(location, reason)
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Checks every value, naming the offending key.
    pub fn validate(&self) -> Result<()> {
        check(self.grid.dims.iter().all(|&d| d > 0), "grid.dims", || "every dimension must be at least 1".into())?;
        positive(self.grid.pitch, "grid.pitch")?;
        finite3(&self.grid.center, "grid.center")?;

        let a = &self.acquisition;
        check(a.n_samples > 0, "acquisition.n_samples", || "must be at least 1".into())?;
        check(a.t0.is_finite(), "acquisition.t0", || "must be finite".into())?;
        if let Some(dt) = a.dt {
            positive(dt, "acquisition.dt")?;
        }
        positive(a.speed_of_sound, "acquisition.speed_of_sound")?;
        if let Some(s) = a.sigma {
            positive(s, "acquisition.sigma")?;
        }
        check(a.cutoff_radii >= 4.0, "acquisition.cutoff_radii", || {
            format!("must be at least 4, got {}", a.cutoff_radii)
        })?;

        let arr = &self.array;
        check(arr.n_elements >= 3, "array.n_elements", || "need at least 3 elements".into())?;
        positive(arr.radius, "array.radius")?;
        check(arr.cap_half_angle_deg > 0.0 && arr.cap_half_angle_deg <= 180.0, "array.cap_half_angle_deg", || {
            format!("must lie in (0, 180], got {}", arr.cap_half_angle_deg)
        })?;
        if let Some(k) = arr.split {
            check(k >= 2 && k <= arr.n_elements, "array.split", || format!("cannot split {} elements into {k}", arr.n_elements))?;
            check(self.views.len() + 1 == k, "views", || {
                format!("split into {k} subsets needs {} extra views, found {}", k - 1, self.views.len())
            })?;
        }

        let s = &self.scene;
        positive(s.cube_size, "scene.cube_size")?;
        positive(s.tube_radius, "scene.tube_radius")?;
        check(s.point_amplitude >= 0.0, "scene.point_amplitude", || "must be non-negative".into())?;
        check(s.tube_amplitude >= 0.0, "scene.tube_amplitude", || "must be non-negative".into())?;
        if let Some(snr) = s.noise_snr_db {
            check(snr.is_finite(), "scene.noise_snr_db", || "must be finite".into())?;
        }
        let extent = self.grid.pitch * (self.grid.dims.iter().min().copied().unwrap_or(0) as f64 - 1.0);
        check(s.cube_size <= extent, "scene.cube_size", || {
            format!("cube of {} mm does not fit the {extent:.3} mm grid", s.cube_size)
        })?;

        for (i, v) in self.views.iter().enumerate() {
            let key = format!("views[{i}]");
            finite3(&v.translation, &key)?;
            check(v.angle_deg.is_finite(), &key, || "angle must be finite".into())?;
            v.pose().map_err(|e| Error::config(&key, e.to_string()))?;
        }
        finite3(&self.coarse_error.translation, "coarse_error.translation")?;
        self.coarse_error
            .pose()
            .map_err(|e| Error::config("coarse_error", e.to_string()))?;

        let r = &self.recon;
        positive(r.learning_rate, "recon.learning_rate")?;
        check(r.iterations > 0, "recon.iterations", || "must be at least 1".into())?;
        check(r.convergence_tol >= 0.0, "recon.convergence_tol", || "must be non-negative".into())?;
        if let Some(l) = r.lambda {
            check(l >= 0.0 && l.is_finite(), "recon.lambda", || format!("must be non-negative, got {l}"))?;
        }
        check(r.alpha1 >= 0.0, "recon.alpha1", || "must be non-negative".into())?;
        check(r.alpha0 >= 0.0, "recon.alpha0", || "must be non-negative".into())?;
        check(r.oversample > 0, "recon.oversample", || "must be at least 1".into())?;
        check(self.reference.iterations > 0, "reference.iterations", || "must be at least 1".into())?;
        if let Some(l) = self.reference.lambda {
            check(l >= 0.0 && l.is_finite(), "reference.lambda", || format!("must be non-negative, got {l}"))?;
        }

        let l = &self.localize;
        match (l.search_min, l.search_max) {
            (Some(lo), Some(hi)) => {
                check((0..3).all(|k| hi[k] > lo[k]), "localize.search_max", || {
                    "must exceed search_min on every axis".into()
                })?;
            }
            (None, None) => {}
            _ => return Err(Error::config("localize.search_min", "search_min and search_max go together")),
        }
        check(l.search_margin >= 0.0, "localize.search_margin", || "must be non-negative".into())?;
        positive(l.grid_step, "localize.grid_step")?;
        check(l.top_k > 0, "localize.top_k", || "must be at least 1".into())?;
        if let Some(s) = l.sigma_max {
            positive(s, "localize.sigma_max")?;
            check(s >= self.sigma(), "localize.sigma_max", || "must not be below the acquisition sigma".into())?;
        }
        check(l.n_stages > 0, "localize.n_stages", || "must be at least 1".into())?;
        positive(l.learning_rate, "localize.learning_rate")?;
        check(l.iterations > 0, "localize.iterations", || "must be at least 1".into())?;
        check((0.0..1.0).contains(&l.reference_threshold), "localize.reference_threshold", || {
            "must lie in [0, 1)".into()
        })?;
        check(l.bins_per_sigma >= 1.0, "localize.bins_per_sigma", || "must be at least 1".into())?;

        let g = &self.rigid;
        check(g.n_iterations > 0, "rigid.n_iterations", || "must be at least 1".into())?;
        check(g.sample_size >= 3, "rigid.sample_size", || "must be at least 3".into())?;
        positive(g.inlier_threshold, "rigid.inlier_threshold")?;
        positive(g.edge_tolerance, "rigid.edge_tolerance")?;

        let f = &self.refine;
        positive(f.learning_rate, "refine.learning_rate")?;
        check(f.iterations > 0, "refine.iterations", || "must be at least 1".into())?;
        if let Some(s) = f.sigma {
            positive(s, "refine.sigma")?;
        }
        Ok(())
    }

    pub fn medium(&self) -> MediumConfig {
        MediumConfig {
            speed_of_sound: self.acquisition.speed_of_sound,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.acquisition.sigma.unwrap_or(self.grid.pitch)
    }

    pub fn kernel(&self) -> Result<KernelConfig> {
        KernelConfig::with_cutoff(self.sigma(), self.acquisition.cutoff_radii)
    }

    pub fn time(&self) -> Result<TimeGrid> {
        let dt = self
            .acquisition
            .dt
            .unwrap_or(self.grid.pitch / (2.0 * self.acquisition.speed_of_sound));
        TimeGrid::new(self.acquisition.t0, dt, self.acquisition.n_samples)
    }

    pub fn grid(&self) -> Result<VolumeGrid> {
        VolumeGrid::centered(self.grid.dims, Vec3::from(self.grid.center), self.grid.pitch)
    }


    pub fn template(&self) -> Result<ArrayTemplate> {
        make_spherical_cap_array(
            self.array.n_elements,
            self.array.radius,
            self.array.cap_half_angle_deg,
            self.array.seed,
        )
    }

    /// True poses of every view, starting with the identity.
    pub fn view_poses(&self) -> Result<Vec<Pose>> {
        std::iter::once(Ok(Pose::identity()))
            .chain(self.views.iter().map(MotionSpec::pose))
            .collect()
    }

    /// `truth` perturbed by the configured coarse error: the error rotation
    /// is applied after the true rotation and its translation added.
    pub fn coarse_pose(&self, truth: &Pose) -> Result<Pose> {
        let e = self.coarse_error.pose()?;
        Ok(Pose::from_rotation(&(e.rotation() * truth.rotation()), truth.translation + e.translation))
    }

    pub fn recon_config(&self) -> ReconConfig {
        let r = &self.recon;
        ReconConfig {
            grid_dims: self.grid.dims,
            center: Vec3::from(self.grid.center),
            pitch: self.grid.pitch,
            tgv: TgvConfig {
                lambda: r.lambda,
                alpha1: r.alpha1,
                alpha0: r.alpha0,
                ..TgvConfig::default()
            },
            optim: OptimConfig {
                learning_rate: r.learning_rate,
                max_iters: r.iterations,
                convergence_tol: r.convergence_tol,
                ..OptimConfig::default()
            },
            init_mode: r.init,
            operator: r.operator,
            oversample: r.oversample,
            schedule: r.schedule,
        }
    }

    /// Localisation settings; `true_positions` only feeds the default search
    /// box.
    /// `recon_config` with the `[reference]` overrides, for stage 1.
    pub fn reference_config(&self) -> ReconConfig {
        let mut c = self.recon_config();
        c.optim.max_iters = self.reference.iterations;
        c.tgv.lambda = self.reference.lambda;
        c
    }

    pub fn localize_config(&self, true_positions: &[Vec3]) -> Result<LocalizeConfig> {
        let l = &self.localize;
        let bounds = match (l.search_min, l.search_max) {
            (Some(lo), Some(hi)) => SearchBox::new(Vec3::from(lo), Vec3::from(hi))?,
            _ => SearchBox::around(true_positions, l.search_margin)?,
        };
        let mut c = LocalizeConfig::with_bounds(bounds, self.grid.pitch, self.sigma());
        c.grid_step = l.grid_step;
        c.top_k = l.top_k;
        c.anneal = AnnealSchedule {
            sigma_max: l.sigma_max.unwrap_or(c.anneal.sigma_max).max(self.sigma()),
            sigma_min: self.sigma(),
            n_stages: l.n_stages,
        };
        c.optim.learning_rate = l.learning_rate;
        c.optim.max_iters = l.iterations;
        c.reference_threshold = l.reference_threshold;
        c.bins_per_sigma = l.bins_per_sigma;
        Ok(c)
    }

    pub fn ransac_config(&self) -> RansacConfig {
        let g = &self.rigid;
        RansacConfig {
            n_iterations: g.n_iterations,
            sample_size: g.sample_size,
            inlier_threshold: g.inlier_threshold,
            edge_tolerance: g.edge_tolerance,
            min_inliers: g.min_inliers,
            seed: self.seed,
        }
    }

    pub fn refine_config(&self) -> RefineConfig {
        let f = &self.refine;
        RefineConfig {
            optim: OptimConfig {
                learning_rate: f.learning_rate,
                max_iters: f.iterations,
                convergence_tol: f.convergence_tol,
                ..OptimConfig::default()
            },
            sigma: f.sigma,
            patience: f.patience,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_desk_scene() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.grid.dims, [64; 3]);
        assert!((c.time().unwrap().dt - 0.2 / 3.0).abs() < 1e-15);
        assert_eq!(c.view_poses().unwrap().len(), 2);
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_key() {
        let err = RunConfig::from_toml("[grid]\npitch = -1.0\n").unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "grid.pitch"), "{err}");
        let err = RunConfig::from_toml("[recon]\nlearning_rat = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rat"), "{err}");
        let err = RunConfig::from_toml("[array]\nsplit = 3\n").unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "views"), "{err}");
    }

    #[test]
    fn coarse_pose_is_off_by_the_injected_error() {
        let c = RunConfig::default();
        let truth = c.view_poses().unwrap()[1];
        let coarse = c.coarse_pose(&truth).unwrap();
        assert!((coarse.rotation_error_deg(&truth) - 2.0).abs() < 1e-9);
        assert!((coarse.translation_error(&truth) - 1.0).abs() < 1e-12);
    }
}
