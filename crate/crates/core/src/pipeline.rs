//! End-to-end run: simulation, the five stages and the comparison metrics.
//!
//! View 0 sits at the identity pose and provides the reference volume. Every
//! further view is localised against that reference, fitted rigidly, refined,
//! and finally all views are reconstructed jointly with the recovered poses.
//!
//! Image metrics use two references. The primary one is the joint
//! reconstruction with the true poses, so the numbers isolate the effect of
//! pose errors from the limits of the solver itself. The phantom is the
//! secondary reference.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{self, SampleType};
use crate::localize::{localize_all, Reference, SensorEstimate};
use crate::metrics::{localization_errors, map_projection, psnr, ssim, Axis, LocalizationErrors, MapImage};
use crate::phantom::{add_noise, split_array, Scene, SensorArray, SplitMode};
use crate::pose::{refine_pose, Pose, PoseTraceEntry};
use crate::radiate::{forward, KernelConfig, MediumConfig, SignalSet, TimeGrid, VolumeGrid};
use crate::recon::{reconstruct, ReconConfig, ReconResult};
use crate::rigid::{ransac_fit, RigidFitResult};
use crate::Vec3;

/// One recorded view with its ground truth.
#[derive(Debug, Clone)]
pub struct View {
    /// Indices into the full template of the elements this view uses.
    pub elements: Vec<usize>,
    pub true_pose: Pose,
    pub array: SensorArray,
    pub signals: SignalSet,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub scene: Scene,
    pub views: Vec<View>,
    pub time: TimeGrid,
    pub medium: MediumConfig,
    pub kernel: KernelConfig,
}

/// Generates the phantom and the signals of every view. Noise streams are
/// keyed by the run seed and the view index.
pub fn simulate(config: &RunConfig) -> Result<Dataset> {
    let grid = config.grid()?;
    let scene = config.scene.generate(&grid)?;
    let time = config.time()?;
    let medium = config.medium();
    let kernel = config.kernel()?;
    let template = config.template()?;
    let poses = config.view_poses()?;
    let subsets = match config.array.split {
        Some(k) => split_array(template.len(), SplitMode::Interleaved, k)?,
        None => vec![(0..template.len()).collect(); poses.len()],
    };
    let views = poses
        .into_iter()
        .zip(subsets)
        .enumerate()
        .map(|(v, (pose, elements))| {
            let array = SensorArray::new(template.subset(&elements)?, pose);
            let mut signals = forward(&scene.sources, array.world_positions(), &time, &medium, &kernel)?;
            if let Some(snr) = config.scene.noise_snr_db {
                add_noise(&mut signals, snr, config.seed, v as u64)?;
            }
            Ok(View {
                elements,
                true_pose: pose,
                array,
                signals,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        scene,
        views,
        time,
        medium,
        kernel,
    })
}

fn stage<T>(name: &'static str, timings: &mut BTreeMap<String, f64>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    log::info!("stage {name}: start");
    let start = Instant::now();
    let out = f().map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    });
    let secs = start.elapsed().as_secs_f64();
    *timings.entry(name.to_string()).or_insert(0.0) += secs;
    log::info!("stage {name}: {:.2} s", secs);
    out
}

/// Joint reconstruction of the given views placed at `poses`.
pub fn joint_reconstruction(config: &RunConfig, data: &Dataset, views: &[usize], poses: &[Pose]) -> Result<ReconResult> {
    solve(&config.recon_config(), data, views, poses)
}

/// Stage 1: the first view alone at the identity, with the reference settings.
pub fn reference_reconstruction(config: &RunConfig, data: &Dataset) -> Result<ReconResult> {
    solve(&config.reference_config(), data, &[0], &[Pose::identity()])
}

fn solve(recon: &ReconConfig, data: &Dataset, views: &[usize], poses: &[Pose]) -> Result<ReconResult> {
    let arrays: Vec<SensorArray> = views
        .iter()
        .zip(poses)
        .map(|(&v, p)| SensorArray::new(data.views[v].array.template().clone(), *p))
        .collect();
    let signals: Vec<SignalSet> = views.iter().map(|&v| data.views[v].signals.clone()).collect();
    reconstruct(&arrays, &signals, recon, &data.medium, &data.kernel)
}

/// Stage 2 for one view: every element localised against `reference`. The
/// search box is built around the first view's known element positions.
pub fn localize_view(config: &RunConfig, data: &Dataset, reference: &Reference, view: usize) -> Result<Vec<SensorEstimate>> {
    let lc = config.localize_config(data.views[0].array.world_positions())?;
    localize_all(
        reference,
        &data.views[view].signals,
        &lc,
        &data.medium,
        config.acquisition.cutoff_radii,
    )
}

/// Pose-recovery errors of one estimate against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub rotation_deg: f64,
    pub translation_mm: f64,
}

impl PoseError {
    pub fn between(estimate: &Pose, truth: &Pose) -> Self {
        Self {
            rotation_deg: estimate.rotation_error_deg(truth),
            translation_mm: estimate.translation_error(truth),
        }
    }
}

/// Stages 2 to 4 for one view.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewReport {
    pub view: usize,
    pub n_elements: usize,
    pub true_pose: Pose,
    pub localization: LocalizationErrors,
    /// Fraction of elements localised within 0.2 mm of the truth.
    pub localized_within_0_2mm: f64,
    /// Fraction of elements whose best loss never rose from one annealing
    /// stage to the next.
    pub anneal_monotone: f64,
    pub n_converged: usize,
    pub inliers: Vec<usize>,
    pub rigid_rms_mm: f64,
    pub coarse_pose: Pose,
    pub coarse_error: PoseError,
    pub refined_pose: Pose,
    pub refined_error: PoseError,
    pub refine_iterations: usize,
    pub refine_initial_loss: f64,
    pub refine_final_loss: f64,
    pub refine_trace: Vec<PoseTraceEntry>,
    /// Largest distance from the truth of the elements RANSAC rejected,
    /// after placing them with the refined pose (0 when there are none).
    pub outlier_max_error_mm: f64,
}

fn fraction(estimates: &[SensorEstimate], pred: impl Fn(&SensorEstimate) -> bool) -> f64 {
    estimates.iter().filter(|e| pred(e)).count() as f64 / estimates.len().max(1) as f64
}

/// Stages 2 to 4 for `view`, writing nothing.
pub fn recover_pose(
    config: &RunConfig,
    data: &Dataset,
    reference: &Reference,
    view: usize,
    timings: &mut BTreeMap<String, f64>,
) -> Result<(Vec<SensorEstimate>, RigidFitResult, ViewReport)> {
    let v = &data.views[view];
    let template = v.array.template();
    let estimates = stage("localize", timings, || localize_view(config, data, reference, view))?;
    let positions: Vec<Vec3> = estimates.iter().map(|e| e.position).collect();
    let localization = localization_errors(&positions, v.array.world_positions())?;
    log::info!(
        "view {view}: localisation error max {:.4} / mean {:.4} mm, {} of {} converged",
        localization.max,
        localization.mean,
        estimates.iter().filter(|e| e.converged).count(),
        estimates.len()
    );

    let fit = stage("rigidfit", timings, || ransac_fit(template, &estimates, &config.ransac_config()))?;
    let coarse_pose = Pose::from_rotation(&fit.rotation, fit.translation);
    let coarse_error = PoseError::between(&coarse_pose, &v.true_pose);
    log::info!(
        "view {view}: rigid fit {} inliers, error {:.4} deg / {:.4} mm",
        fit.inliers.len(),
        coarse_error.rotation_deg,
        coarse_error.translation_mm
    );

    let refined = stage("refine", timings, || {
        refine_pose(
            &coarse_pose,
            template,
            reference,
            &v.signals,
            &fit.inliers,
            &config.refine_config(),
            &data.medium,
            &data.kernel,
        )
    })?;
    let refined_error = PoseError::between(&refined.pose, &v.true_pose);
    log::info!(
        "view {view}: refined error {:.5} deg / {:.5} mm",
        refined_error.rotation_deg,
        refined_error.translation_mm
    );
    let truth = v.array.world_positions();
    let outlier_max_error_mm = (0..template.len())
        .filter(|i| fit.inliers.binary_search(i).is_err())
        .map(|i| (refined.positions[i] - truth[i]).norm())
        .fold(0.0, f64::max);

    let report = ViewReport {
        view,
        n_elements: template.len(),
        true_pose: v.true_pose,
        localization,
        localized_within_0_2mm: fraction(&estimates, |e| (e.position - truth[e.index]).norm() <= 0.2),
        anneal_monotone: fraction(&estimates, SensorEstimate::anneals_monotonically),
        n_converged: estimates.iter().filter(|e| e.converged).count(),
        inliers: fit.inliers.clone(),
        rigid_rms_mm: fit.rms_inlier_residual,
        coarse_pose,
        coarse_error,
        refined_pose: refined.pose,
        refined_error,
        refine_iterations: refined.iterations,
        refine_initial_loss: refined.initial_loss,
        refine_final_loss: refined.final_loss,
        refine_trace: refined.trace,
        outlier_max_error_mm,
    };
    Ok((estimates, fit, report))
}

/// PSNR (peak = reference maximum) and SSIM (dynamic range = reference
/// maximum) of two XY maximum amplitude projections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub psnr: f64,
    pub ssim: f64,
}

pub fn score_maps(test: &MapImage, reference: &MapImage) -> Result<ImageScore> {
    let peak = reference.max_value();
    if !(peak > 0.0) {
        return Err(Error::InvalidParameter("reference image has no positive pixel".into()));
    }
    Ok(ImageScore {
        psnr: psnr(&test.pixels, &reference.pixels, peak)?,
        ssim: ssim(&test.pixels, &reference.pixels, test.width, test.height, peak)?,
    })
}

/// Everything a run measured, keyed for machine consumption.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config: RunConfig,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub views: Vec<ViewReport>,
    /// Scores against the true-pose joint reconstruction (`psnr_single`,
    /// `psnr_coarse`, `psnr_fine`, ...) and against the phantom
    /// (`..._phantom`). Absent when comparisons are disabled.
    pub metrics: BTreeMap<String, f64>,
    pub lambda: f64,
    pub loss_traces: BTreeMap<String, Vec<f64>>,
}

/// Reconstructions produced by [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct RunVolumes {
    pub reference: VolumeGrid,
    pub fine: VolumeGrid,
    pub truth_poses: Option<VolumeGrid>,
    pub coarse: Option<VolumeGrid>,
    /// Every view alone at its true pose, with the shared recon settings.
    /// Empty when comparisons are off.
    pub single_views: Vec<VolumeGrid>,
}

fn save_volume(out: Option<&Path>, name: &str, volume: &VolumeGrid) -> Result<()> {
    if let Some(dir) = out {
        io::write_volume(&dir.join(format!("{name}.vol")), volume, SampleType::Float32Le)?;
        io::write_pgm16(&dir.join(format!("{name}_map.pgm")), &map_projection(volume, Axis::Z))?;
    }
    Ok(())
}

/// Runs stages 1 to 5 on `data` and scores the result. With `out` set, each
/// artifact is written as soon as it exists, so a failing stage leaves the
/// earlier ones on disk.
pub fn run_pipeline(config: &RunConfig, data: &Dataset, out: Option<&Path>) -> Result<(RunReport, RunVolumes)> {
    if data.views.len() < 2 {
        return Err(Error::InvalidParameter("the pipeline needs at least two views".into()));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let mut timings = BTreeMap::new();
    let mut loss_traces = BTreeMap::new();

    let stage1 = stage("reconstruct", &mut timings, || reference_reconstruction(config, data))?;
    loss_traces.insert("reference".to_string(), stage1.loss_trace.clone());
    save_volume(out, "reference", &stage1.volume)?;
    let reference = Reference::from_volume(&stage1.volume, config.localize.reference_threshold);
    log::info!("reference: {} voxels above threshold", reference.len());

    let mut views = Vec::new();
    let mut fine_poses = vec![Pose::identity()];
    for v in 1..data.views.len() {
        let (estimates, _, report) = recover_pose(config, data, &reference, v, &mut timings)?;
        if let Some(dir) = out {
            io::write_estimates_csv(&dir.join(format!("view{v}_estimates.csv")), &estimates)?;
            io::write_pose(&dir.join(format!("view{v}_coarse.pose")), &report.coarse_pose)?;
            io::write_pose(&dir.join(format!("view{v}_refined.pose")), &report.refined_pose)?;
        }
        fine_poses.push(report.refined_pose);
        views.push(report);
    }

    let all: Vec<usize> = (0..data.views.len()).collect();
    let fine = stage("joint", &mut timings, || joint_reconstruction(config, data, &all, &fine_poses))?;
    loss_traces.insert("fine".to_string(), fine.loss_trace.clone());
    save_volume(out, "fine", &fine.volume)?;

    let mut metrics = BTreeMap::new();
    let mut volumes = RunVolumes {
        reference: stage1.volume.clone(),
        fine: fine.volume.clone(),
        truth_poses: None,
        coarse: None,
        single_views: Vec::new(),
    };
    if config.output.comparisons {
        let true_poses: Vec<Pose> = data.views.iter().map(|v| v.true_pose).collect();
        let coarse_poses = true_poses
            .iter()
            .enumerate()
            .map(|(i, p)| if i == 0 { Ok(*p) } else { config.coarse_pose(p) })
            .collect::<Result<Vec<_>>>()?;
        let truth = stage("comparisons", &mut timings, || joint_reconstruction(config, data, &all, &true_poses))?;
        let coarse = stage("comparisons", &mut timings, || joint_reconstruction(config, data, &all, &coarse_poses))?;
        loss_traces.insert("true_poses".to_string(), truth.loss_trace.clone());
        loss_traces.insert("coarse".to_string(), coarse.loss_trace.clone());
        for v in 0..data.views.len() {
            let single = stage("comparisons", &mut timings, || {
                joint_reconstruction(config, data, &[v], &[data.views[v].true_pose])
            })?;
            volumes.single_views.push(single.volume);
        }

        let ref_recon = map_projection(&truth.volume, Axis::Z);
        let ref_phantom = map_projection(&data.scene.ground_truth, Axis::Z);
        let mut put = |name: &str, volume: &VolumeGrid| -> Result<()> {
            let map = map_projection(volume, Axis::Z);
            let a = score_maps(&map, &ref_recon)?;
            let b = score_maps(&map, &ref_phantom)?;
            // The true-pose image scored against itself has infinite PSNR,
            // which JSON cannot carry; the key is left out.
            if a.psnr.is_finite() {
                metrics.insert(format!("psnr_{name}"), a.psnr);
            }
            metrics.insert(format!("ssim_{name}"), a.ssim);
            metrics.insert(format!("psnr_{name}_phantom"), b.psnr);
            metrics.insert(format!("ssim_{name}_phantom"), b.ssim);
            Ok(())
        };
        put("single", &volumes.single_views[0])?;
        put("coarse", &coarse.volume)?;
        put("fine", &fine.volume)?;
        put("gt", &truth.volume)?;
        for (v, vol) in volumes.single_views.iter().enumerate() {
            put(&format!("view{v}"), vol)?;
        }
        save_volume(out, "true_poses", &truth.volume)?;
        save_volume(out, "coarse", &coarse.volume)?;
        volumes.truth_poses = Some(truth.volume);
        volumes.coarse = Some(coarse.volume);
    }
    for r in &views {
        let v = r.view;
        metrics.insert(format!("view{v}_coarse_rotation_deg"), r.coarse_error.rotation_deg);
        metrics.insert(format!("view{v}_coarse_translation_mm"), r.coarse_error.translation_mm);
        metrics.insert(format!("view{v}_fine_rotation_deg"), r.refined_error.rotation_deg);
        metrics.insert(format!("view{v}_fine_translation_mm"), r.refined_error.translation_mm);
        metrics.insert(format!("view{v}_localization_max_mm"), r.localization.max);
        metrics.insert(format!("view{v}_localization_min_mm"), r.localization.min);
        metrics.insert(format!("view{v}_localization_mean_mm"), r.localization.mean);
        metrics.insert(format!("view{v}_localized_within_0_2mm"), r.localized_within_0_2mm);
        metrics.insert(format!("view{v}_anneal_monotone"), r.anneal_monotone);
        metrics.insert(format!("view{v}_inliers"), r.inliers.len() as f64);
        metrics.insert(format!("view{v}_outlier_max_error_mm"), r.outlier_max_error_mm);
    }

    let report = RunReport {
        seed: config.seed,
        config: config.clone(),
        timings,
        views,
        metrics,
        lambda: fine.lambda,
        loss_traces,
    };
    if let Some(dir) = out {
        io::write_json(&dir.join("report.json"), &report)?;
    }
    Ok((report, volumes))
}

/// Writes the signals and true poses of every view into `dir`.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    io::write_volume(&dir.join("phantom.vol"), &data.scene.ground_truth, SampleType::Float32Le)?;
    for (v, view) in data.views.iter().enumerate() {
        io::write_signals(&dir.join(format!("view{v}.sig")), &view.signals, SampleType::Float64Le)?;
        io::write_pose(&dir.join(format!("view{v}_true.pose")), &view.true_pose)?;
    }
    Ok(())
}
