//! Synthetic scenes, array geometries and data generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::radiate::{forward, KernelConfig, MediumConfig, SignalSet, SourceCloud, TimeGrid, VolumeGrid};
use crate::rigid::ArrayTemplate;
use crate::Vec3;

/// `n` elements on a sphere of `radius` about the origin, restricted to the
/// cap within `cap_half_angle_deg` of the +z axis.
///
/// Heights are spaced uniformly from the apex to the rim (equal-area bands)
/// and azimuths follow the golden angle. `seed` only rotates the pattern
/// about the axis.
pub fn make_spherical_cap_array(n: usize, radius: f64, cap_half_angle_deg: f64, seed: u64) -> Result<ArrayTemplate> {
    if n == 0 {
        return Err(Error::InvalidParameter("array needs at least one element".into()));
    }
    if !(radius > 0.0) || !(cap_half_angle_deg > 0.0 && cap_half_angle_deg <= 180.0) {
        return Err(Error::InvalidParameter(format!(
            "cap radius {radius} mm / half-angle {cap_half_angle_deg} deg out of range"
        )));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let offset = ChaCha8Rng::seed_from_u64(seed).random_range(0.0..std::f64::consts::TAU);
    let drop = 1.0 - cap_half_angle_deg.to_radians().cos();
    let positions = (0..n)
        .map(|i| {
            let h = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            let cos_a = 1.0 - h * drop;
            let sin_a = (1.0 - cos_a * cos_a).max(0.0).sqrt();
            let phi = offset + golden * i as f64;
            radius * Vec3::new(sin_a * phi.cos(), sin_a * phi.sin(), cos_a)
        })
        .collect();
    ArrayTemplate::new(positions)
}

/// A template placed in the world by a pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorArray {
    template: ArrayTemplate,
    pose: Pose,
    world_positions: Vec<Vec3>,
}

impl SensorArray {
    pub fn new(template: ArrayTemplate, pose: Pose) -> Self {
        let world_positions = pose.apply_all(template.positions());
        Self {
            template,
            pose,
            world_positions,
        }
    }

    pub fn template(&self) -> &ArrayTemplate {
        &self.template
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn world_positions(&self) -> &[Vec3] {
        &self.world_positions
    }

    pub fn len(&self) -> usize {
        self.world_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.world_positions.is_empty()
    }

    /// The elements listed in `indices`, keeping the pose.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self::new(self.template.subset(indices)?, self.pose))
    }
}

pub fn make_multi_pose(template: &ArrayTemplate, poses: &[Pose]) -> Vec<SensorArray> {
    poses.iter().map(|p| SensorArray::new(template.clone(), *p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Round-robin by element index.
    Interleaved,
}

/// Partitions `0..n_elements` into `n_subsets` index sets.
pub fn split_array(n_elements: usize, mode: SplitMode, n_subsets: usize) -> Result<Vec<Vec<usize>>> {
    if n_subsets == 0 || n_subsets > n_elements {
        return Err(Error::InvalidParameter(format!(
            "cannot split {n_elements} elements into {n_subsets} subsets"
        )));
    }
    match mode {
        SplitMode::Interleaved => Ok((0..n_subsets)
            .map(|s| (s..n_elements).step_by(n_subsets).collect())
            .collect()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeSpec {
    pub start: Vec3,
    pub end: Vec3,
    pub radius: f64,
    pub amplitude: f64,
}

impl TubeSpec {
    fn distance(&self, p: &Vec3) -> f64 {
        let axis = self.end - self.start;
        let len2 = axis.norm_squared();
        let s = if len2 > 0.0 {
            ((p - self.start).dot(&axis) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (p - (self.start + s * axis)).norm()
    }
}

/// Random point sources and tube segments inside a cube centred on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub n_points: usize,
    pub point_amplitude: f64,
    /// Edge length (mm) of the cube holding all structures.
    pub cube_size: f64,
    pub n_tubes: usize,
    pub tube_radius: f64,
    pub tube_amplitude: f64,
    pub noise_snr_db: Option<f64>,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_points: 20,
            point_amplitude: 1.0,
            cube_size: 10.0,
            n_tubes: 3,
            tube_radius: 0.3,
            tube_amplitude: 0.6,
            noise_snr_db: None,
            seed: 42,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cube_size > 0.0) || !(self.tube_radius > 0.0) || !(self.point_amplitude >= 0.0) || !(self.tube_amplitude >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid scene {self:?}")));
        }
        if self.noise_snr_db.is_some_and(|s| !s.is_finite()) {
            return Err(Error::InvalidParameter("noise SNR must be finite".into()));
        }
        Ok(())
    }

    /// Rasterises the scene onto a grid shaped like `grid`. Point sources are
    /// snapped to voxel centres; tubes fill every voxel whose centre lies
    /// within the radius. Overlaps keep the larger amplitude.
    pub fn generate(&self, grid: &VolumeGrid) -> Result<Scene> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let center = grid.center();
        let half = 0.5 * self.cube_size;
        let mut volume = VolumeGrid::zeros(grid.dims(), grid.origin(), grid.pitch())?;

        let mut points = Vec::with_capacity(self.n_points);
        for _ in 0..self.n_points {
            let p = center + Vec3::from_fn(|_, _| rng.random_range(-half..half));
            let idx = volume
                .nearest_index(&p)
                .ok_or_else(|| Error::InvalidParameter("scene cube extends beyond the grid".into()))?;
            let v = &mut volume.intensities_mut()[idx];
            *v = v.max(self.point_amplitude);
            points.push(volume.voxel_position(idx));
        }

        let inner = (half - self.tube_radius).max(0.0);
        let tubes: Vec<TubeSpec> = (0..self.n_tubes)
            .map(|_| TubeSpec {
                start: center + Vec3::from_fn(|_, _| rng.random_range(-inner..=inner)),
                end: center + Vec3::from_fn(|_, _| rng.random_range(-inner..=inner)),
                radius: self.tube_radius,
                amplitude: self.tube_amplitude,
            })
            .collect();
        for k in 0..volume.len() {
            let x = volume.voxel_position(k);
            for tube in &tubes {
                if tube.distance(&x) <= tube.radius {
                    let v = &mut volume.intensities_mut()[k];
                    *v = v.max(tube.amplitude);
                }
            }
        }
        let sources = volume.sources_above(0.0);
        Ok(Scene {
            spec: *self,
            ground_truth: volume,
            sources,
            points,
            tubes,
        })
    }
}

/// A generated scene with its ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub ground_truth: VolumeGrid,
    /// Nonzero voxels of `ground_truth`.
    pub sources: SourceCloud,
    pub points: Vec<Vec3>,
    pub tubes: Vec<TubeSpec>,
}

/// Signals recorded by `array`, with seeded white Gaussian noise when the
/// scene asks for it. `stream` separates the noise of different acquisitions
/// of the same scene.
pub fn acquire(
    scene: &Scene,
    array: &SensorArray,
    time: &TimeGrid,
    medium: &MediumConfig,
    kernel: &KernelConfig,
    stream: u64,
) -> Result<SignalSet> {
    let mut signals = forward(&scene.sources, array.world_positions(), time, medium, kernel)?;
    if let Some(snr) = scene.spec.noise_snr_db {
        add_noise(&mut signals, snr, scene.spec.seed, stream)?;
    }
    Ok(signals)
}

/// Adds white Gaussian noise with RMS `10^(−snr/20)` times the signal RMS.
pub fn add_noise(signals: &mut SignalSet, snr_db: f64, seed: u64, stream: u64) -> Result<()> {
    let n = signals.data().len().max(1);
    let rms = (signals.squared_norm() / n as f64).sqrt();
    let std = rms * 10f64.powf(-snr_db / 20.0);
    if std == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    for v in signals.data_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_element_at_apex() {
        let t = make_spherical_cap_array(1, 30.0, 60.0, 7).unwrap();
        assert_eq!(t.positions(), &[Vec3::new(0.0, 0.0, 30.0)]);
    }

    #[test]
    fn cap_points_on_sphere() {
        let t = make_spherical_cap_array(33, 60.0, 60.0, 1).unwrap();
        let min_z = 60.0 * 60f64.to_radians().cos();
        for (i, p) in t.positions().iter().enumerate() {
            assert!((p.norm() - 60.0).abs() < 1e-9);
            assert!(p.z >= min_z - 1e-9);
            for q in &t.positions()[i + 1..] {
                assert!((p - q).norm() > 0.0);
            }
        }
        assert_eq!(t, make_spherical_cap_array(33, 60.0, 60.0, 1).unwrap());
        assert!(make_spherical_cap_array(0, 60.0, 60.0, 1).is_err());
    }

    #[test]
    fn interleaved_split() {
        assert_eq!(split_array(6, SplitMode::Interleaved, 2).unwrap(), vec![vec![0, 2, 4], vec![1, 3, 5]]);
        let halves = split_array(1024, SplitMode::Interleaved, 2).unwrap();
        assert!(halves.iter().all(|h| h.len() == 512));
        assert!(split_array(3, SplitMode::Interleaved, 0).is_err());
    }

    #[test]
    fn identity_pose_keeps_template() {
        let t = make_spherical_cap_array(5, 30.0, 45.0, 0).unwrap();
        let arrays = make_multi_pose(&t, &[Pose::identity()]);
        assert_eq!(arrays[0].world_positions(), t.positions());
    }

    #[test]
    fn scene_is_reproducible() {
        let grid = VolumeGrid::centered([24, 24, 24], Vec3::zeros(), 0.25).unwrap();
        let spec = SceneSpec {
            cube_size: 4.0,
            n_points: 5,
            ..SceneSpec::default()
        };
        let a = spec.generate(&grid).unwrap();
        let b = spec.generate(&grid).unwrap();
        assert_eq!(a.ground_truth.intensities(), b.ground_truth.intensities());
        assert!(a.sources.len() > 5);
        for p in &a.points {
            let idx = a.ground_truth.nearest_index(p).unwrap();
            assert_eq!(a.ground_truth.intensities()[idx], spec.point_amplitude);
        }
    }
}
