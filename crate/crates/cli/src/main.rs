use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use avatar_synth::assets::{load_asset, procedural_test_asset_with_degree, Skeleton};
use avatar_synth::camera::{sample_camera, Lens, OrbitSpec};
use avatar_synth::dataset::{read_coco, summarize_dataset, DatasetManifest};
use avatar_synth::demo::{swing_motion, write_demo_inputs, DemoOptions};
use avatar_synth::evaluation::{
    ap_table, fid, ground_truth_from_coco, kid, kid_default, predictions_from_json, EmbeddingSet, MetricsConfig,
    MetricsReport, DEFAULT_REF_SIZE,
};
use avatar_synth::kinematics::{forward_kinematics, lbs_deform};
use avatar_synth::pipeline::{run_pipeline, RunConfig};
use avatar_synth::render::{render_with, RenderSettings};

const EXIT_PARTIAL: u8 = 1;
const EXIT_INVALID: u8 = 2;

#[derive(Parser)]
#[command(
    name = "avatar-synth",
    version,
    about = "Synthetic pose datasets from Gaussian-splat avatars"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset from a TOML run config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config worker count (0 = all CPUs).
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides the config output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compute metrics.
    #[command(subcommand)]
    Evaluate(EvalCommand),
    /// Print the per sport and split table of a manifest.
    Summarize {
        #[arg(long)]
        manifest: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Load and validate a `.gsa` asset.
    ValidateAsset { path: PathBuf },
    /// Write sample avatars, motions, backgrounds and a config.
    Demo {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        clips: usize,
        #[arg(long, default_value_t = 6000)]
        gaussians: usize,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 256)]
        size: u32,
    },
    /// Measure single-frame throughput on a procedural avatar.
    Bench {
        #[arg(long, default_value_t = 20_000)]
        gaussians: usize,
        #[arg(long, default_value_t = 256)]
        size: u32,
        #[arg(long, default_value_t = 30)]
        frames: usize,
    },
}

#[derive(Args)]
struct ReportArgs {
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Keypoint AP against COCO-style ground truth.
    Ap {
        #[arg(long)]
        gt: PathBuf,
        /// COCO document or COCO results list.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "5,10,15")]
        thresholds: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_REF_SIZE)]
        ref_size: f64,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Fréchet distance between two `.emb` files.
    Fid {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Kernel distance between two `.emb` files.
    Kid {
        a: PathBuf,
        b: PathBuf,
        /// Block size; defaults to 100 or the smaller set size.
        #[arg(long)]
        block: Option<usize>,
        #[command(flatten)]
        report: ReportArgs,
    },
}

/// Error paired with the exit code it maps to.
struct Failure(u8, anyhow::Error);

trait Invalid<T> {
    fn invalid(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Invalid<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure(EXIT_INVALID, e.into()))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}

fn run(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Generate {
            config,
            seed,
            workers,
            output,
        } => generate(&config, seed, workers, output),
        Command::Evaluate(cmd) => evaluate(cmd).invalid().map(|_| 0),
        Command::Summarize { manifest, json } => {
            let m = DatasetManifest::load(&manifest).invalid()?;
            let table = summarize_dataset(&m);
            if json {
                println!("{}", serde_json::to_string_pretty(&table).expect("table serializes"));
            } else {
                print!("{table}");
            }
            Ok(0)
        }
        Command::ValidateAsset { path } => {
            let asset = load_asset(&path).invalid()?;
            println!(
                "{}: ok ({} gaussians, {} joints, SH degree {})",
                path.display(),
                asset.len(),
                asset.num_joints(),
                asset.sh_degree
            );
            Ok(0)
        }
        Command::Demo {
            dir,
            clips,
            gaussians,
            frames,
            size,
        } => {
            let opts = DemoOptions {
                clips,
                gaussians_per_subject: gaussians,
                frames_per_motion: frames,
                width: size,
                height: size,
                ..DemoOptions::default()
            };
            let path = write_demo_inputs(&dir, &opts).invalid()?;
            println!("{}", path.display());
            Ok(0)
        }
        Command::Bench {
            gaussians,
            size,
            frames,
        } => bench(gaussians, size, frames)
            .map_err(|e| Failure(EXIT_PARTIAL, e))
            .map(|_| 0),
    }
}

fn generate(path: &Path, seed: Option<u64>, workers: Option<usize>, output: Option<PathBuf>) -> Result<u8, Failure> {
    let mut config = RunConfig::load(path).invalid()?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(workers) = workers {
        config.workers = workers;
    }
    if let Some(output) = output {
        config.output_dir = output;
    }
    let outcome = run_pipeline(&config).map_err(|e| {
        let code = match e {
            avatar_synth::pipeline::PipelineError::Config(_) => EXIT_INVALID,
            _ => EXIT_PARTIAL,
        };
        Failure(code, e.into())
    })?;
    print!("{}", outcome.summary);
    eprintln!(
        "{} clips, {} frames in {:.1} s ({:.1} fps, {} workers) -> {}",
        outcome.manifest.totals.clips,
        outcome.manifest.totals.frames,
        outcome.log.total_seconds,
        outcome.log.frames_per_second,
        outcome.log.workers,
        config.output_dir.display()
    );
    if outcome.failed() {
        for f in &outcome.manifest.failed_clips {
            eprintln!("failed: {}: {}", f.clip_id, f.error);
        }
        return Ok(EXIT_PARTIAL);
    }
    Ok(0)
}

fn emit_report(report: &MetricsReport, args: &ReportArgs) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    println!("{text}");
    if let Some(path) = &args.output {
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn evaluate(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Ap {
            gt,
            pred,
            thresholds,
            ref_size,
            report,
        } => {
            let gt = ground_truth_from_coco(&read_coco(&gt)?)?;
            let text = std::fs::read_to_string(&pred).with_context(|| format!("reading {}", pred.display()))?;
            let value: serde_json::Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", pred.display()))?;
            let pred = predictions_from_json(value)?;
            let ap = ap_table(&pred, &gt, &thresholds, ref_size)?;
            emit_report(
                &MetricsReport {
                    ap,
                    config: Some(MetricsConfig {
                        thresholds,
                        ref_size,
                        kid_block: None,
                    }),
                    ..Default::default()
                },
                &report,
            )
        }
        EvalCommand::Fid { a, b, report } => {
            let value = fid(&EmbeddingSet::load(a)?, &EmbeddingSet::load(b)?)?;
            emit_report(
                &MetricsReport {
                    fid: Some(value),
                    ..Default::default()
                },
                &report,
            )
        }
        EvalCommand::Kid { a, b, block, report } => {
            let (a, b) = (EmbeddingSet::load(a)?, EmbeddingSet::load(b)?);
            let est = match block {
                Some(block) => kid(&a, &b, block)?,
                None => kid_default(&a, &b)?,
            };
            emit_report(
                &MetricsReport {
                    config: Some(MetricsConfig {
                        thresholds: vec![],
                        ref_size: DEFAULT_REF_SIZE,
                        kid_block: Some(est.block_size),
                    }),
                    kid: Some(est),
                    ..Default::default()
                },
                &report,
            )
        }
    }
}

fn bench(gaussians: usize, size: u32, frames: usize) -> Result<()> {
    let skeleton = Skeleton::humanoid();
    let asset = procedural_test_asset_with_degree(gaussians, &skeleton, 1, 1)?;
    let motion = swing_motion(frames.max(1), 0);
    let lens = Lens {
        width: size,
        height: size,
        vertical_fov_deg: 45.0,
    };
    let camera = sample_camera(&OrbitSpec::default(), &lens, 0)?;
    let settings = RenderSettings::default();
    let start = Instant::now();
    for frame in &motion.frames {
        let transforms = forward_kinematics(&skeleton, &frame.pose)?;
        let deformed = lbs_deform(&asset, &transforms)?;
        render_with(&deformed, &camera, &settings)?;
    }
    let secs = start.elapsed().as_secs_f64();
    println!(
        "{} frames, {gaussians} gaussians, {size}x{size}: {:.2} ms/frame, {:.1} fps ({} threads)",
        motion.frames.len(),
        1e3 * secs / motion.frames.len() as f64,
        motion.frames.len() as f64 / secs,
        rayon::current_num_threads()
    );
    Ok(())
}
