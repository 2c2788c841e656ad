//! Command-line front end: synthetic data generation, training, evaluation,
//! inference, gradient checking, and checkpoint inspection.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use poselift::data::{
    load_checkpoint, make_input_windows, make_windows, normalize_2d, save_checkpoint,
    synth_generate, PoseSequenceFile, PoseWindow, SynthSpec,
};
use poselift::evaluation::{evaluate, EvalOptions, Protocol};
use poselift::network::{AblationVariant, LiftingModel, ModelConfig};
use poselift::training::{fit, grad_check, GradCheckConfig, TrainConfig};
use poselift::Error;

#[derive(Parser)]
#[command(
    name = "poselift",
    version,
    about = "2D-to-3D human pose lifting: adaptive graph convolutions over a skeleton,\n\
             strided temporal shrinking, per-joint estimation heads"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic pose-sequence files by forward-kinematics random walk
    Synth {
        /// Output directory for the .pseq files
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        sequences: usize,
        /// Frames per sequence
        #[arg(long, default_value_t = 81)]
        frames: usize,
        /// Skeleton preset: h36m17 or humaneva15
        #[arg(long, default_value = "h36m17")]
        skeleton: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Standard deviation of 2D observation noise (data units)
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
    /// Train a model on a directory of pose-sequence files
    Train {
        /// JSON run configuration; command-line flags override file values
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of .pseq training files
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path
        #[arg(long)]
        out: PathBuf,
        /// Drop the learned-adjacency and attention terms
        #[arg(long)]
        no_adaptive: bool,
        /// Replace temporal strides with average pooling before the head
        #[arg(long)]
        no_strided: bool,
        /// Replace the per-joint heads with one fully connected map
        #[arg(long)]
        fc_head: bool,
        /// Swap left/right joints of the input 2D poses (structure ablation)
        #[arg(long)]
        swap_limbs: bool,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        recon_depth: Option<usize>,
        #[arg(long)]
        temporal_kernel: Option<usize>,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        lambda_mix: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Epoch at which stage 2 (center loss only) starts
        #[arg(long)]
        stage_boundary: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Disable horizontal-flip augmentation
        #[arg(long)]
        no_flip_augment: bool,
        /// Fraction of sequences held out for validation
        #[arg(long, default_value_t = 0.2)]
        val_fraction: f64,
    },
    /// Evaluate a checkpoint against ground-truth 3D poses
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// p1 (mpjpe), p2 (p-mpjpe) or pck (pck/auc)
        #[arg(long, default_value = "p1")]
        protocol: String,
        /// Report output path (text; a .json twin is written alongside)
        #[arg(long)]
        report: Option<PathBuf>,
        /// Swap left/right joints of the input 2D poses
        #[arg(long)]
        swap_limbs: bool,
        /// Disable flip-averaged inference
        #[arg(long)]
        no_flip: bool,
    },
    /// Predict 3D poses for a 2D pose-sequence file
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        /// Input .pseq (2D poses; 3D not required)
        #[arg(long)]
        input: PathBuf,
        /// Output .pseq with predicted 3D poses
        #[arg(long)]
        output: PathBuf,
        /// Disable flip-averaged inference
        #[arg(long)]
        no_flip: bool,
    },
    /// Check every analytic gradient against central finite differences
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// full, no-adaptive, no-strided or fc-head
        #[arg(long, default_value = "full")]
        variant: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Print a checkpoint's configuration, parameter count and schedule
    Info {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

/// JSON run configuration mirrored by the train subcommand.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigFile {
    #[serde(default)]
    model: Option<ModelConfig>,
    #[serde(default)]
    train: Option<TrainConfig>,
    #[serde(default)]
    swap_limbs: bool,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Usage(_) | Error::Config(_) | Error::UnsupportedKernel(_) => 1,
        Error::Validation { .. } | Error::Shape { .. } | Error::Parse { .. } | Error::Io(_) => 2,
        Error::Degenerate(_) | Error::NonFinite { .. } => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run(cli: Cli) -> poselift::Result<u8> {
    match cli.command {
        Command::Synth {
            out,
            sequences,
            frames,
            skeleton,
            seed,
            noise,
        } => cmd_synth(&out, sequences, frames, &skeleton, seed, noise),
        Command::Train {
            config,
            data,
            out,
            no_adaptive,
            no_strided,
            fc_head,
            swap_limbs,
            frames,
            channels,
            recon_depth,
            temporal_kernel,
            dropout,
            lambda_mix,
            epochs,
            batch_size,
            learning_rate,
            stage_boundary,
            seed,
            no_flip_augment,
            val_fraction,
        } => {
            let file = match &config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)?;
                    serde_json::from_str::<RunConfigFile>(&text).map_err(|e| {
                        Error::parse(format!("{}:{}:{}", path.display(), e.line(), e.column()), e.to_string())
                    })?
                }
                None => RunConfigFile::default(),
            };
            let mut model_cfg = file.model.unwrap_or_default();
            if let Some(v) = frames {
                model_cfg.frames = v;
            }
            if let Some(v) = channels {
                model_cfg.channels = v;
            }
            if let Some(v) = recon_depth {
                model_cfg.recon_depth = v;
            }
            if let Some(v) = temporal_kernel {
                model_cfg.temporal_kernel = v;
            }
            if let Some(v) = dropout {
                model_cfg.dropout = v;
            }
            if let Some(v) = lambda_mix {
                model_cfg.lambda_mix = v;
            }
            model_cfg.no_adaptive |= no_adaptive;
            model_cfg.no_strided |= no_strided;
            model_cfg.fc_head |= fc_head;
            let mut train_cfg = file.train.unwrap_or_default();
            if let Some(v) = epochs {
                train_cfg.epochs = v;
            }
            if let Some(v) = batch_size {
                train_cfg.batch_size = v;
            }
            if let Some(v) = learning_rate {
                train_cfg.learning_rate = v;
            }
            if let Some(v) = stage_boundary {
                train_cfg.stage_boundary_epoch = Some(v);
            }
            if let Some(v) = seed {
                train_cfg.seed = v;
            }
            if no_flip_augment {
                train_cfg.flip_augment = false;
            }
            cmd_train(
                &data,
                &out,
                model_cfg,
                train_cfg,
                file.swap_limbs || swap_limbs,
                val_fraction,
            )
        }
        Command::Eval {
            ckpt,
            data,
            protocol,
            report,
            swap_limbs,
            no_flip,
        } => cmd_eval(&ckpt, &data, &protocol, report.as_deref(), swap_limbs, no_flip),
        Command::Infer {
            ckpt,
            input,
            output,
            no_flip,
        } => cmd_infer(&ckpt, &input, &output, no_flip),
        Command::Gradcheck {
            tol,
            eps,
            variant,
            seed,
        } => cmd_gradcheck(tol, eps, &variant, seed),
        Command::Info { ckpt } => cmd_info(&ckpt),
    }
}

fn cmd_synth(
    out: &Path,
    sequences: usize,
    frames: usize,
    skeleton: &str,
    seed: u64,
    noise: f64,
) -> poselift::Result<u8> {
    let spec = SynthSpec {
        sequences,
        frames,
        skeleton: skeleton.to_string(),
        seed,
        noise,
    };
    let files = synth_generate(&spec)?;
    std::fs::create_dir_all(out)?;
    for file in &files {
        let path = out.join(format!("{}_{}.pseq", file.subject, file.action));
        file.save(&path)?;
        println!("wrote {} ({} frames)", path.display(), file.frames());
    }
    Ok(0)
}

/// Load every .pseq in a directory, sorted by file name for determinism.
fn load_dir(data: &Path) -> poselift::Result<Vec<PoseSequenceFile>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(data)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "pseq"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!(
            "no .pseq files found in {}",
            data.display()
        )));
    }
    paths.iter().map(|p| PoseSequenceFile::load(p)).collect()
}

/// Pixel-space files are normalized into the unit-ish box first.
fn prepared_2d(file: &PoseSequenceFile) -> ndarray::Array3<f64> {
    match file.image_size {
        Some(size) => normalize_2d(&file.pose2d, size),
        None => file.pose2d.clone(),
    }
}

fn swap_input_limbs(windows: &mut [PoseWindow], perm: &[usize]) {
    for w in windows.iter_mut() {
        let (t, n, _) = w.input2d.dim();
        let original = w.input2d.clone();
        for ti in 0..t {
            for j in 0..n {
                w.input2d[[ti, perm[j], 0]] = original[[ti, j, 0]];
                w.input2d[[ti, perm[j], 1]] = original[[ti, j, 1]];
            }
        }
    }
}

fn windows_from_files(
    files: &[PoseSequenceFile],
    frames: usize,
    swap_limbs: bool,
) -> poselift::Result<Vec<PoseWindow>> {
    let mut windows = Vec::new();
    for file in files {
        let mut prepared = file.clone();
        prepared.pose2d = prepared_2d(file);
        let mut file_windows = make_windows(&prepared, frames)?;
        if swap_limbs {
            let perm = file.skeleton.flip_permutation();
            swap_input_limbs(&mut file_windows, &perm);
        }
        windows.extend(file_windows);
    }
    Ok(windows)
}

fn cmd_train(
    data: &Path,
    out: &Path,
    mut model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    swap_limbs: bool,
    val_fraction: f64,
) -> poselift::Result<u8> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Usage(format!(
            "val_fraction must lie in [0,1), got {val_fraction}"
        )));
    }
    let files = load_dir(data)?;
    let graph = files[0].skeleton.clone();
    for f in &files[1..] {
        if f.skeleton != graph {
            return Err(Error::Config(format!(
                "mixed skeletons in {}: {} vs {}",
                data.display(),
                f.subject,
                files[0].subject
            )));
        }
    }
    model_cfg.joints = graph.joint_count();
    // Hold out whole sequences when possible, trailing windows otherwise.
    let (train_windows, val_windows) = if files.len() >= 2 && val_fraction > 0.0 {
        let val_files = ((files.len() as f64 * val_fraction).round() as usize)
            .clamp(1, files.len() - 1);
        let split = files.len() - val_files;
        (
            windows_from_files(&files[..split], model_cfg.frames, swap_limbs)?,
            windows_from_files(&files[split..], model_cfg.frames, swap_limbs)?,
        )
    } else {
        let all = windows_from_files(&files, model_cfg.frames, swap_limbs)?;
        let val_count = (all.len() as f64 * val_fraction).round() as usize;
        let split = all.len().saturating_sub(val_count.max(usize::from(val_fraction > 0.0)));
        let (t, v) = all.split_at(split.max(1).min(all.len()));
        (t.to_vec(), v.to_vec())
    };
    println!(
        "training on {} windows, validating on {} ({} sequences, {} joints)",
        train_windows.len(),
        val_windows.len(),
        files.len(),
        graph.joint_count()
    );
    let model = LiftingModel::build(model_cfg, graph, train_cfg.seed)?;
    let count = model.param_count();
    println!(
        "model: {} parameters (reconstruction {}, strided {}, head {})",
        count.total, count.reconstruction, count.strided, count.head
    );
    let result = fit(model, &train_windows, &val_windows, &train_cfg)?;
    save_checkpoint(&result.model, out)?;
    let history_path = {
        let mut name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "train".into());
        name.push_str(".history.csv");
        out.with_file_name(name)
    };
    std::fs::write(&history_path, result.history.to_csv())?;
    if let Some(last) = result.history.entries.last() {
        println!(
            "final epoch {}: objective {:.4}, val mpjpe {}",
            last.epoch,
            last.objective,
            last.val_mpjpe
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "n/a".into())
        );
    }
    if let Some(best) = result.best_epoch {
        println!("kept best-validation model from epoch {best}");
    }
    println!("wrote {} and {}", out.display(), history_path.display());
    Ok(0)
}

fn cmd_eval(
    ckpt: &Path,
    data: &Path,
    protocol: &str,
    report: Option<&Path>,
    swap_limbs: bool,
    no_flip: bool,
) -> poselift::Result<u8> {
    let protocol: Protocol = protocol.parse()?;
    let model = load_checkpoint(ckpt)?;
    let files = load_dir(data)?;
    for f in &files {
        if f.pose3d.is_none() {
            return Err(Error::Usage(format!(
                "ground truth required: {} has no 3D poses",
                f.subject
            )));
        }
    }
    let windows = windows_from_files(&files, model.config().frames, swap_limbs)?;
    let opts = EvalOptions {
        flip: !no_flip,
        ..EvalOptions::default()
    };
    let result = evaluate(&model, &windows, protocol, &opts)?;
    let text = result.render_text();
    print!("{text}");
    if let Some(path) = report {
        std::fs::write(path, &text)?;
        let json_path = {
            let mut name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
            name.push_str(".json");
            path.with_file_name(name)
        };
        let json = serde_json::to_string_pretty(&result)
            .map_err(|e| Error::parse(json_path.display().to_string(), e.to_string()))?;
        std::fs::write(&json_path, json)?;
        println!("wrote {} and {}", path.display(), json_path.display());
    }
    Ok(0)
}

fn cmd_infer(ckpt: &Path, input: &Path, output: &Path, no_flip: bool) -> poselift::Result<u8> {
    let model = load_checkpoint(ckpt)?;
    let file = PoseSequenceFile::load(input)?;
    if file.skeleton.joint_count() != model.config().joints {
        return Err(Error::Config(format!(
            "checkpoint expects {} joints but {} has {}",
            model.config().joints,
            input.display(),
            file.skeleton.joint_count()
        )));
    }
    let pose2d = prepared_2d(&file);
    let windows = make_input_windows(&pose2d, model.config().frames)?;
    let perm = file.skeleton.flip_permutation();
    let total = windows.len();
    let n = file.skeleton.joint_count();
    let mut pose3d = ndarray::Array3::zeros((total, n, 3));
    for (start, chunk) in windows.chunks(64).enumerate().map(|(i, c)| (i * 64, c)) {
        let batch = poselift::data::input_batch(chunk);
        let preds = if no_flip {
            model.infer(&batch)?
        } else {
            model.infer_with_flip(&batch, &perm)?
        };
        for (bi, _) in chunk.iter().enumerate() {
            for j in 0..n {
                for d in 0..3 {
                    pose3d[[start + bi, j, d]] = preds[[bi, j, d]];
                }
            }
        }
    }
    let out_file = PoseSequenceFile {
        pose3d: Some(pose3d),
        ..file
    };
    out_file.save(output)?;
    println!("wrote {} ({} frames of predicted 3D)", output.display(), total);
    Ok(0)
}

fn cmd_gradcheck(tol: f64, eps: f64, variant: &str, seed: u64) -> poselift::Result<u8> {
    let variant: AblationVariant = variant.parse()?;
    let cfg = GradCheckConfig {
        variant,
        tolerance: tol,
        epsilon: eps,
        seed,
        ..GradCheckConfig::default()
    };
    let report = grad_check(&cfg)?;
    print!("{}", report.render());
    Ok(if report.passed() { 0 } else { 3 })
}

fn cmd_info(ckpt: &Path) -> poselift::Result<u8> {
    let model = load_checkpoint(ckpt)?;
    let config = model.config();
    let pretty = serde_json::to_string_pretty(config)
        .map_err(|e| Error::parse("config", e.to_string()))?;
    println!("config: {pretty}");
    println!("skeleton: {} joints, root {}", model.graph().joint_count(), model.graph().root());
    let count = model.param_count();
    println!(
        "parameters: {} total (reconstruction {}, strided {}, head {})",
        count.total, count.reconstruction, count.strided, count.head
    );
    let schedule = config
        .temporal_schedule()?
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    println!("temporal schedule: {schedule}");
    println!("creation seed: {}", model.seed());
    Ok(0)
}
