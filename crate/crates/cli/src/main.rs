use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dractrl::commands::{run_command, Command, CommandArgs};
use dractrl::config::RunConfig;
use dractrl::Result;
use serde_json::Value;

#[derive(Parser)]
#[command(
    name = "dractrl",
    version,
    about = "Toy video diffusion transformer adapted to controllable image generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a task dataset as PPM pairs plus a manifest.
    Datagen,
    /// Train the base model on procedural videos.
    Pretrain,
    /// LoRA fine-tune a base checkpoint on one task.
    Finetune,
    /// Generate one image from a condition image and a prompt.
    Infer,
    /// Score held-out samples and write the metrics CSV.
    Eval,
    /// Sweep transition kinds, frame counts and modes.
    Ablate,
    /// Write the mixup frames of one pair as PPM files.
    ExportTransition,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    task: Option<String>,
    /// dra, two_frame_t2v or two_frame_i2v.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// fade or slide.
    #[arg(long, global = true)]
    transition: Option<String>,
    /// Transition frames, a multiple of 4.
    #[arg(long, global = true)]
    frames: Option<usize>,
    /// Sampling steps.
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    omega: Option<f64>,
    #[arg(long, global = true)]
    delta: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Condition image (PPM).
    #[arg(long, global = true)]
    condition: Option<PathBuf>,
    /// Target image (PPM), for export-transition.
    #[arg(long, global = true)]
    target: Option<PathBuf>,
    #[arg(long, global = true)]
    prompt: Option<String>,
    #[arg(long, global = true)]
    condition_prompt: Option<String>,
    /// Output image of `infer`.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

fn build_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let overrides: [(&str, Option<Value>); 8] = [
        ("seed", c.seed.map(Value::from)),
        ("data.task", c.task.clone().map(Value::from)),
        ("model.mode", c.mode.clone().map(Value::from)),
        ("data.transition", c.transition.clone().map(Value::from)),
        ("sample.steps", c.steps.map(Value::from)),
        ("model.omega", c.omega.map(Value::from)),
        ("model.delta", c.delta.map(Value::from)),
        (
            "out",
            c.out.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned())),
        ),
    ];
    for (key, v) in overrides {
        if let Some(v) = v {
            cfg.set(key, &v)?;
        }
    }
    if let Some(f) = c.frames {
        cfg.set_transition_frames(f)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli.common)?;
    let c = cli.common;
    let args = CommandArgs {
        checkpoint: c.checkpoint,
        condition: c.condition,
        target: c.target,
        prompt: c.prompt,
        condition_prompt: c.condition_prompt,
        output: c.output,
    };
    let cmd = match cli.command {
        Cmd::Datagen => Command::Datagen,
        Cmd::Pretrain => Command::Pretrain,
        Cmd::Finetune => Command::Finetune,
        Cmd::Infer => Command::Infer,
        Cmd::Eval => Command::Eval,
        Cmd::Ablate => Command::Ablate,
        Cmd::ExportTransition => Command::ExportTransition,
    };
    let out = run_command(cmd, &cfg, &args)?;
    for a in &out.artifacts {
        log::info!("wrote {}", a.display());
    }
    println!("{}", out.summary.trim_end());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
