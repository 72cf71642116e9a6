use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lvp_core::data::{generate_dataset, read_manifest, DatasetConfig, Split, SpriteWorldConfig};
use lvp_core::dynamics::Sampler;
use lvp_core::harness::checkpoint::load_codec;
use lvp_core::harness::config::{read_toml, CodecTrainConfig, DynamicsTrainConfig};
use lvp_core::harness::eval::{clip_codebook_stats, evaluate, write_report, EvalModels, EVAL_REPORT};
use lvp_core::harness::predict::{predict, PredictOptions};
use lvp_core::harness::train_codec::train_codec;
use lvp_core::harness::train_dynamics::train_dynamics;
use lvp_core::{Error, Result};
use serde_json::json;

/// Latent video prediction: sprite datasets, codec and dynamics training,
/// rollouts and evaluation.
#[derive(Parser)]
#[command(name = "lvp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sprite dataset.
    GenData(GenData),
    /// Train the vector-quantized codec.
    TrainCodec(TrainCodec),
    /// Train the dynamics transformer against a frozen codec.
    TrainDynamics(TrainDynamics),
    /// Roll out future frames for one or more clips.
    Predict(Predict),
    /// Score a prediction directory against ground truth.
    Eval(Eval),
    /// Codebook usage of a codec over a dataset split.
    Stats(Stats),
}

#[derive(Args)]
struct GenData {
    /// Dataset TOML (`seed`, `n_train`, `n_test`, `[world]`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
}

#[derive(Args)]
struct TrainCodec {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    phase1_steps: Option<usize>,
    #[arg(long)]
    phase2_steps: Option<usize>,
}

#[derive(Args)]
struct TrainDynamics {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Codec checkpoint; overrides the config file.
    #[arg(long)]
    codec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Transformer depth.
    #[arg(long)]
    layers: Option<usize>,
    /// Largest translation-augmentation shift in pixels; 0 disables it.
    #[arg(long)]
    aug_m: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct Predict {
    #[arg(long)]
    dynamics: PathBuf,
    #[arg(long)]
    codec: PathBuf,
    /// Clip file to condition on; may be repeated.
    #[arg(long = "clip")]
    clips: Vec<PathBuf>,
    /// Dataset directory whose clips to condition on, instead of `--clip`.
    #[arg(long, conflicts_with = "clips")]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Use only the first `limit` clips of the split.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    future_steps: usize,
    /// Top-k truncation; the codebook size means unrestricted sampling.
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Eval {
    /// Directory written by `predict`.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth clip file, matched to predictions by file stem; defaults
    /// to the clips recorded at prediction time.
    #[arg(long = "truth")]
    truth: Vec<PathBuf>,
    /// Codec checkpoint for codebook statistics of the ground truth.
    #[arg(long)]
    codec: Option<PathBuf>,
    /// Dynamics checkpoint for nats per token of the ground truth.
    #[arg(long, requires = "codec")]
    dynamics: Option<PathBuf>,
    /// Report path; defaults to `eval.json` inside the prediction directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Stats {
    #[arg(long)]
    codec: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    /// Write the statistics here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::config(format!("{} has no usable file name", path.display())))
}

fn split_clips(root: &Path, split: SplitArg, limit: Option<usize>) -> Result<Vec<PathBuf>> {
    let want = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let mut paths: Vec<PathBuf> = read_manifest(root)?
        .into_iter()
        .filter(|r| r.split == want)
        .map(|r| root.join(r.file))
        .collect();
    if let Some(n) = limit {
        paths.truncate(n);
    }
    if paths.is_empty() {
        return Err(Error::config(format!("{} has no clips in the requested split", root.display())));
    }
    Ok(paths)
}

fn print(value: &serde_json::Value) {
    println!("{value}");
}

fn write_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    match out {
        Some(p) => fs::write(p, text + "\n").map_err(|e| Error::io(p, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let mut cfg = match &a.config {
                Some(p) => read_toml(p)?,
                None => DatasetConfig {
                    seed: 0,
                    n_train: 512,
                    n_test: 32,
                    world: SpriteWorldConfig::default(),
                },
            };
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            cfg.n_train = a.n_train.unwrap_or(cfg.n_train);
            cfg.n_test = a.n_test.unwrap_or(cfg.n_test);
            let records = generate_dataset(&cfg, &a.out)?;
            print(&json!({ "clips": records.len(), "out": a.out }));
        }
        Command::TrainCodec(a) => {
            let mut cfg: CodecTrainConfig = match &a.config {
                Some(p) => read_toml(p)?,
                None => CodecTrainConfig::default(),
            };
            if let Some(d) = a.data {
                cfg.data = d;
            }
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            cfg.schedule.phase1_steps = a.phase1_steps.unwrap_or(cfg.schedule.phase1_steps);
            cfg.schedule.phase2_steps = a.phase2_steps.unwrap_or(cfg.schedule.phase2_steps);
            let run = train_codec(&cfg, &a.out)?;
            print(&json!({
                "checkpoint": run.checkpoint,
                "hash": run.hash,
                "phase1_psnr": run.phase1_psnr,
                "final_psnr": run.final_psnr,
            }));
        }
        Command::TrainDynamics(a) => {
            let mut cfg: DynamicsTrainConfig = match &a.config {
                Some(p) => read_toml(p)?,
                None => DynamicsTrainConfig::default(),
            };
            if let Some(c) = a.codec {
                cfg.codec = c;
            }
            if let Some(d) = a.data {
                cfg.data = d;
            }
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            cfg.model.layers = a.layers.unwrap_or(cfg.model.layers);
            cfg.augment.m = a.aug_m.unwrap_or(cfg.augment.m);
            cfg.schedule.steps = a.steps.unwrap_or(cfg.schedule.steps);
            let run = train_dynamics(&cfg, &a.out)?;
            print(&json!({
                "checkpoint": run.checkpoint,
                "hash": run.hash,
                "codec_hash": run.codec_hash,
                "steps": run.steps,
                "final_loss": run.final_loss,
            }));
        }
        Command::Predict(a) => {
            let paths = match &a.data {
                Some(root) => split_clips(root, a.split, a.limit)?,
                None => a.clips.clone(),
            };
            let named = paths
                .into_iter()
                .map(|p| Ok((stem(&p)?, p)))
                .collect::<Result<Vec<_>>>()?;
            let opts = PredictOptions {
                future_steps: a.future_steps,
                sampler: Sampler {
                    k: a.k,
                    temperature: a.temperature,
                },
                seed: a.seed,
                samples: a.samples,
            };
            let manifest = predict(&a.codec, &a.dynamics, &named, &opts, &a.out)?;
            print(&json!({ "clips": manifest.clips.len(), "samples": manifest.samples, "out": a.out }));
        }
        Command::Eval(a) => {
            let truth = a
                .truth
                .iter()
                .map(|p| Ok((stem(p)?, p.clone())))
                .collect::<Result<Vec<_>>>()?;
            let models = EvalModels {
                codec: a.codec,
                dynamics: a.dynamics,
            };
            let report = evaluate(&a.pred, &truth, &models)?;
            let out = a.out.unwrap_or_else(|| a.pred.join(EVAL_REPORT));
            write_report(&report, &out)?;
            print(&json!({
                "psnr": report.psnr,
                "mae": report.mae,
                "first_frame_mae": report.first_frame_mae,
                "report": out,
            }));
        }
        Command::Stats(a) => {
            let (codec, hash) = load_codec(&a.codec)?;
            let clips = split_clips(&a.data, a.split, None)?
                .iter()
                .map(|p| lvp_core::data::VideoClip::read(p))
                .collect::<Result<Vec<_>>>()?;
            let stats = clip_codebook_stats(&codec, &clips)?;
            write_json(
                &json!({
                    "perplexity": stats.perplexity,
                    "usage": stats.usage,
                    "clips": clips.len(),
                    "codec_hash": hash,
                }),
                a.out.as_deref(),
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
