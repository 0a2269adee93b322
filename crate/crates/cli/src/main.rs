//! `p2pb`: synthesize paired data, train a bridge denoiser, denoise clouds
//! and score them.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use p2pb::infer::{denoise_cloud, PatchConfig};
use p2pb::io::{load_checkpoint, read_cloud, read_mesh, save_checkpoint, write_cloud, CheckpointHeader, TrainingMeta};
use p2pb::metrics::{evaluate, EvalOptions};
use p2pb::rng::derive_seed;
use p2pb::synth::{build_pairs, load_dataset, make_primitive, save_dataset, AssignmentOptions, NoiseSpec, PairSpec, Primitive};
use p2pb::train::{train_with, write_log_csv, TrainConfig};

#[derive(Parser)]
#[command(name = "p2pb", version, about = "Point cloud denoising with a diffusion bridge")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write noisy/clean pairs sampled from an analytic shape.
    Synth(SynthArgs),
    /// Fit a denoiser on a synth-style dataset directory.
    Train(TrainArgs),
    /// Denoise a point cloud with a trained checkpoint.
    Denoise(DenoiseArgs),
    /// Score a prediction against ground truth.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Sphere,
    Torus,
    Box,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    shape: Shape,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    points: u64,
    /// Noise std as a fraction of the clean bounding-box diagonal.
    #[arg(long)]
    noise: f64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Sphere ring count / torus grid size.
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    /// Sphere radius, torus major radius, or cube side.
    #[arg(long, default_value_t = 1.0)]
    size: f64,
    /// Torus tube radius.
    #[arg(long, default_value_t = 0.3)]
    minor: f64,
    /// Largest pair solved by the exact assignment.
    #[arg(long, default_value_t = p2pb::assignment::DEFAULT_EXACT_CAP)]
    exact_cap: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON training configuration; unknown keys are rejected.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    steps: Option<u64>,
    /// CSV log path (default: the checkpoint path with a `.csv` extension).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Randomly permute each clean cloud, discarding its alignment.
    #[arg(long)]
    unaligned: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Ode,
    Sde,
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON with any of: radius, max_points, steps, mode, seed.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reverse steps (default: the checkpoint schedule's step count).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    steps: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    max_points: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DenoiseFile {
    radius: Option<f64>,
    max_points: Option<usize>,
    steps: Option<usize>,
    mode: Option<Mode>,
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long)]
    no_normalize: bool,
    #[arg(long, default_value_t = p2pb::metrics::DEFAULT_REPORT_SCALE)]
    scale: f64,
    #[arg(long)]
    json: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<p2pb::Error> for Failure {
    fn from(e: p2pb::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn configure_threads() -> CmdResult {
    let Ok(v) = std::env::var("P2PB_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| usage(format!("P2PB_THREADS must be an integer, got '{v}'")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("cannot configure {n} worker threads: {e}")))?;
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    if !(a.noise.is_finite() && a.noise >= 0.0) {
        return Err(usage(format!("--noise must be a non-negative number, got {}", a.noise)));
    }
    let kind = match a.shape {
        Shape::Sphere => Primitive::Sphere { radius: a.size },
        Shape::Torus => Primitive::Torus { major: a.size, minor: a.minor },
        Shape::Box => Primitive::Box { size: a.size },
    };
    let mesh = make_primitive(kind, a.resolution).map_err(|e| usage(e.to_string()))?;
    let specs: Vec<PairSpec> = (0..a.count)
        .map(|i| PairSpec {
            id: format!("pair_{i:04}"),
            mesh: mesh.clone(),
            noise: NoiseSpec { percent: a.noise, seed: derive_seed(a.seed, &[3, i]) },
        })
        .collect();
    let opts = AssignmentOptions { exact_cap: a.exact_cap, ..AssignmentOptions::default() };
    let pairs = build_pairs(&specs, a.points as usize, a.seed, opts)?;
    let source = json!({
        "shape": kind,
        "resolution": a.resolution,
        "points": a.points,
        "noise": a.noise,
        "count": a.count,
        "seed": a.seed,
        "assignment": opts,
    });
    let manifest = save_dataset(&a.out, &pairs, source)?;
    println!("wrote {} pairs of {} points to {}", manifest.pairs.len(), a.points, a.out.display());
    Ok(())
}

fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let mut doc = read_json(&a.config)?;
    let obj = doc.as_object_mut().ok_or_else(|| usage(format!("{}: expected a JSON object", a.config.display())))?;
    if let Some(s) = a.seed {
        obj.insert("seed".into(), json!(s));
    }
    if let Some(s) = a.steps {
        obj.insert("steps".into(), json!(s));
    }
    let cfg: TrainConfig = serde_json::from_value(doc).map_err(|e| usage(format!("{}: {e}", a.config.display())))?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let mut dataset = load_dataset(&a.data)?;
    if a.unaligned {
        dataset = dataset
            .iter()
            .enumerate()
            .map(|(i, p)| p.shuffled(derive_seed(cfg.seed, &[0x5f, i as u64])))
            .collect::<p2pb::Result<_>>()?;
    }
    let schedule = cfg.schedule;
    let header_for = |step: usize, loss: f64| {
        let meta = TrainingMeta { steps: step, seed: cfg.seed, final_loss: loss, patch_scale: cfg.patch_scale };
        CheckpointHeader::new(cfg.denoiser, schedule, meta)
    };
    let out = a.out.clone();
    let (_, log) = train_with(&dataset, &cfg, |snap| {
        let path = if snap.is_final { out.clone() } else { intermediate_path(&out, snap.step) };
        save_checkpoint(snap.params, &header_for(snap.step, snap.loss)?, &path)
    })
    .map_err(|e| match e {
        p2pb::Error::NonFiniteLoss(step) => {
            Failure::Runtime(format!("training diverged: non-finite loss or gradient at step {step}; try a smaller lr"))
        }
        e => e.into(),
    })?;
    let log_path = a.log.unwrap_or_else(|| a.out.with_extension("csv"));
    write_log_csv(&log, &log_path)?;
    let last = log.last().map_or(f64::NAN, |r| r.loss);
    println!("trained {} steps on {} pairs; final loss {last:.6e}", log.len(), dataset.len());
    Ok(())
}

fn intermediate_path(out: &Path, step: usize) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    out.with_file_name(format!("{stem}.step{step}.ckpt"))
}

fn cmd_denoise(a: DenoiseArgs) -> CmdResult {
    let file: DenoiseFile = match &a.config {
        Some(p) => serde_json::from_value(read_json(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => DenoiseFile::default(),
    };
    let radius = a.radius.or(file.radius).ok_or_else(|| usage("--radius is required (flag or config)"))?;
    let mode = a.mode.or(file.mode).unwrap_or(Mode::Ode);
    let seed = a.seed.or(file.seed).unwrap_or(0);

    let (params, header) = load_checkpoint(&a.model)?;
    let cloud = read_cloud(&a.input)?;
    let steps = a.steps.map(|s| s as usize).or(file.steps).unwrap_or(header.schedule.steps);
    let patch = PatchConfig {
        radius,
        max_points: a.max_points.or(file.max_points).unwrap_or(1024),
        scale: 1.0 / header.training.patch_scale,
        seed,
    };
    patch.validate().map_err(|e| usage(e.to_string()))?;
    if steps == 0 {
        return Err(usage("steps must be at least 1"));
    }
    let clock = Instant::now();
    let out = denoise_cloud(&params, &header.schedule, &cloud, &patch, steps, mode == Mode::Sde, seed)?;
    write_cloud(&out.cloud, &a.out)?;
    let mode_name = if mode == Mode::Sde { "sde" } else { "ode" };
    println!(
        "denoised {} points: {} patches, {steps} steps ({mode_name}), {:.1} ms",
        out.cloud.len(),
        out.patches,
        clock.elapsed().as_secs_f64() * 1e3
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let pred = read_cloud(&a.pred)?;
    let gt = read_cloud(&a.gt)?;
    let mesh = a.mesh.as_deref().map(read_mesh).transpose()?;
    let opts = EvalOptions { normalize: !a.no_normalize, report_scale: a.scale };
    if !(opts.report_scale.is_finite() && opts.report_scale > 0.0) {
        return Err(usage(format!("--scale must be positive, got {}", a.scale)));
    }
    let report = evaluate(&pred, &gt, mesh.as_ref(), opts)?;
    print!("{}", report.to_table());
    if let Some(path) = a.json {
        let mut text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Denoise(a) => cmd_denoise(a),
        Command::Eval(a) => cmd_eval(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
