use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pasfm::config::RunConfig;
use pasfm::io::{self, SampleType};
use pasfm::localize::Reference;
use pasfm::metrics::{map_projection, Axis};
use pasfm::pipeline::{self, Dataset, PoseError};
use pasfm::pose::{refine_pose, Pose};
use pasfm::rigid::ransac_fit;
use pasfm::Error;

/// Tracker-free multi-view photoacoustic reconstruction.
#[derive(Parser)]
#[command(name = "pasfm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides the noise and sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: `output.dir` from the config).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Every stage end to end, with comparison reconstructions and metrics.
    Run(Common),
    /// Phantom and per-view signals.
    Simulate(Common),
    /// Stage 1: reference volume from view 0.
    Reconstruct(Common),
    /// Stage 2: per-sensor positions of every further view.
    Localize(Common),
    /// Stage 3: robust rigid fit of the localised sensors.
    Rigidfit(Common),
    /// Stage 4: pose refinement against the reference volume.
    Refine(Common),
    /// Stage 5: joint reconstruction with the refined poses.
    Joint(Common),
    /// PSNR / SSIM of the XY maximum amplitude projection of two volumes.
    Metrics {
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
}

enum Failure {
    Config(Error),
    Stage(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Config(e),
            other => Failure::Stage(other),
        }
    }
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf), Failure> {
    let mut config = RunConfig::load(&common.config).map_err(Failure::Config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| config.output.dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| Failure::Stage(e.into()))?;
    Ok((config, out))
}

/// Simulated data are regenerated from the config; they are cheap and
/// deterministic, and the written signal files are for inspection.
fn dataset(config: &RunConfig) -> Result<Dataset, Failure> {
    pipeline::simulate(config).map_err(|e| stage_error("simulate", e))
}

fn stage_error(stage: &'static str, e: Error) -> Failure {
    match e {
        Error::Stage { .. } => Failure::Stage(e),
        other => Failure::Stage(Error::Stage {
            stage,
            source: Box::new(other),
        }),
    }
}

fn read_reference(out: &Path, config: &RunConfig) -> Result<Reference, Failure> {
    let volume = io::read_volume(&out.join("reference.vol")).map_err(|e| stage_error("reconstruct", e))?;
    Ok(Reference::from_volume(&volume, config.localize.reference_threshold))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(common) => {
            let (config, out) = load(&common)?;
            let data = dataset(&config)?;
            pipeline::write_dataset(&out, &data)?;
            let (report, _) = pipeline::run_pipeline(&config, &data, Some(&out))?;
            for (k, v) in &report.metrics {
                println!("{k} = {v:.6}");
            }
        }
        Command::Simulate(common) => {
            let (config, out) = load(&common)?;
            let data = dataset(&config)?;
            pipeline::write_dataset(&out, &data)?;
            println!("wrote {} views to {}", data.views.len(), out.display());
        }
        Command::Reconstruct(common) => {
            let (config, out) = load(&common)?;
            let data = dataset(&config)?;
            let r = pipeline::reference_reconstruction(&config, &data)
                .map_err(|e| stage_error("reconstruct", e))?;
            io::write_volume(&out.join("reference.vol"), &r.volume, SampleType::Float32Le)?;
            io::write_pgm16(&out.join("reference_map.pgm"), &map_projection(&r.volume, Axis::Z))?;
            io::write_json(&out.join("reference_loss.json"), &r.loss_trace)?;
            println!("reference: {} iterations, final loss {:.6e}", r.iterations, r.loss_trace.last().copied().unwrap_or(f64::NAN));
        }
        Command::Localize(common) => {
            let (config, out) = load(&common)?;
            let data = dataset(&config)?;
            let reference = read_reference(&out, &config)?;
            for v in 1..data.views.len() {
                let est = pipeline::localize_view(&config, &data, &reference, v).map_err(|e| stage_error("localize", e))?;
                io::write_estimates_csv(&out.join(format!("view{v}_estimates.csv")), &est)?;
                let converged = est.iter().filter(|e| e.converged).count();
                println!("view {v}: {converged} of {} sensors converged", est.len());
            }
        }
        Command::Rigidfit(common) => {
            let (config, out) = load(&common)?;
            let data = dataset(&config)?;
            for v in 1..data.views.len() {
                let est = io::read_estimates_csv(&out.join(format!("view{v}_estimates.csv")))
                    .map_err(|e| stage_error("localize", e))?;
                let fit = ransac_fit(data.views[v].array.template(), &est, &config.ransac_config())
                    .map_err(|e| stage_error("rigidfit", e))?;
                let pose = Pose::from_rotation(&fit.rotation, fit.translation);
                io::write_pose(&out.join(format!("view{v}_coarse.pose")), &pose)?;
                io::write_json(&out.join(format!("view{v}_rigid.json")), &fit)?;
                let err = PoseError::between(&pose, &data.views[v].true_pose);
                println!(
                    "view {v}: {} inliers, error {:.5} deg / {:.5} mm",
                    fit.inliers.len(),
                    err.rotation_deg,
                    err.translation_mm
                );
            }
        }
        Command::Refine(common) => {
            let (config, out) = load(&common)?;
            let data = dataset(&config)?;
            let reference = read_reference(&out, &config)?;
            for v in 1..data.views.len() {
                let coarse = io::read_pose(&out.join(format!("view{v}_coarse.pose"))).map_err(|e| stage_error("rigidfit", e))?;
                let fit: pasfm::rigid::RigidFitResult =
                    io::read_json(&out.join(format!("view{v}_rigid.json"))).map_err(|e| stage_error("rigidfit", e))?;
                let view = &data.views[v];
                let r = refine_pose(
                    &coarse,
                    view.array.template(),
                    &reference,
                    &view.signals,
                    &fit.inliers,
                    &config.refine_config(),
                    &data.medium,
                    &data.kernel,
                )
                .map_err(|e| stage_error("refine", e))?;
                io::write_pose(&out.join(format!("view{v}_refined.pose")), &r.pose)?;
                io::write_json(&out.join(format!("view{v}_refine_trace.json")), &r.trace)?;
                let err = PoseError::between(&r.pose, &view.true_pose);
                println!("view {v}: error {:.5} deg / {:.5} mm", err.rotation_deg, err.translation_mm);
            }
        }
        Command::Joint(common) => {
            let (config, out) = load(&common)?;
            let data = dataset(&config)?;
            let mut poses = vec![Pose::identity()];
            for v in 1..data.views.len() {
                poses.push(io::read_pose(&out.join(format!("view{v}_refined.pose"))).map_err(|e| stage_error("refine", e))?);
            }
            let all: Vec<usize> = (0..data.views.len()).collect();
            let r = pipeline::joint_reconstruction(&config, &data, &all, &poses).map_err(|e| stage_error("joint", e))?;
            io::write_volume(&out.join("fine.vol"), &r.volume, SampleType::Float32Le)?;
            io::write_pgm16(&out.join("fine_map.pgm"), &map_projection(&r.volume, Axis::Z))?;
            println!("joint: {} iterations, final loss {:.6e}", r.iterations, r.loss_trace.last().copied().unwrap_or(f64::NAN));
        }
        Command::Metrics { test, reference } => {
            let a = io::read_volume(&test).map_err(|e| stage_error("metrics", e))?;
            let b = io::read_volume(&reference).map_err(|e| stage_error("metrics", e))?;
            let s = pipeline::score_maps(&map_projection(&a, Axis::Z), &map_projection(&b, Axis::Z))
                .map_err(|e| stage_error("metrics", e))?;
            println!("psnr = {:.6}\nssim = {:.6}", s.psnr, s.ssim);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = std::env::var("PASFM_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not set the thread count: {e}");
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
