//! Pipeline commands behind the command-line tool.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::codec::{LatentCodec, LatentVideo};
use crate::config::RunConfig;
use crate::dit::{Dit, Mode, Vocab};
use crate::error::{Error, Result};
use crate::flow::{generate_image, SampleSettings, TrainExample, TrainSettings, Trainable, Trainer};
use crate::image::Image;
use crate::metrics::{
    aggregate, aggregate_csv, controllability_report, EvalRecord, HttpEvaluator, MockEvaluator, VlEvaluator,
};
use crate::mixup::{build_sequence, MixupSchedule, TransitionKind};
use crate::numerics::{stream_id, AdamWConfig, Rng};
use crate::tasks::{build_training_pair, export_dataset, TaskDataset, TaskKind, TaskSpec, VideoDataset};

/// First dataset index of the held-out split.
pub const HELD_OUT_OFFSET: usize = 1 << 40;

const PRETRAIN_STREAM: u16 = 0x9E01;
const FINETUNE_STREAM: u16 = 0x9E02;
const SAMPLE_STREAM: u16 = 0x9E03;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Datagen,
    Pretrain,
    Finetune,
    Infer,
    Eval,
    Ablate,
    ExportTransition,
}

/// Inputs beyond the run configuration.
#[derive(Clone, Debug, Default)]
pub struct CommandArgs {
    pub checkpoint: Option<PathBuf>,
    pub condition: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub prompt: Option<String>,
    pub condition_prompt: Option<String>,
    /// Output file for `infer`.
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Default)]
pub struct CommandOutput {
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

/// Appends one `step loss lr secs` record per logging interval.
pub struct ProgressLog {
    file: Option<File>,
    interval: usize,
    start: Instant,
    window: Vec<f64>,
}

impl ProgressLog {
    pub fn open(path: &Path, interval: usize) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Some(file),
            interval: interval.max(1),
            start: Instant::now(),
            window: Vec::new(),
        })
    }

    /// A log that records nothing.
    pub fn disabled() -> Self {
        Self {
            file: None,
            interval: usize::MAX,
            start: Instant::now(),
            window: Vec::new(),
        }
    }

    /// Records the loss of 1-based `step`; writes the interval mean when
    /// `step` is a multiple of the interval.
    pub fn record(&mut self, step: usize, loss: f64, lr: f64) -> Result<()> {
        let Some(f) = &mut self.file else { return Ok(()) };
        self.window.push(loss);
        if !step.is_multiple_of(self.interval) {
            return Ok(());
        }
        let mean = self.window.iter().sum::<f64>() / self.window.len() as f64;
        self.window.clear();
        let line = format!(
            "step={step} loss={mean:.6} lr={lr:e} secs={:.3}\n",
            self.start.elapsed().as_secs_f64()
        );
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

pub fn worker_count() -> usize {
    std::env::var("DRACTRL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// `f(0..n)` on up to `threads` workers, results in index order.
fn parallel_map<R: Send>(n: usize, threads: usize, f: impl Fn(usize) -> Result<R> + Sync) -> Result<Vec<R>> {
    if threads <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(threads);
    let f = &f;
    let parts: Vec<Result<Vec<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|lo| s.spawn(move || (lo..(lo + chunk).min(n)).map(f).collect::<Result<Vec<R>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn codec_for(model: &Dit<f32>) -> Result<LatentCodec> {
    LatentCodec::new(model.config.channels, model.config.spatial_factor)
}

fn tokenize(vocab: &Vocab, text: &str, max: usize) -> Result<Vec<usize>> {
    let ids = vocab.tokenize(text);
    if ids.len() > max {
        return Err(Error::Length { len: ids.len(), max });
    }
    Ok(ids)
}

/// Shared optimization loop. Returns the per-step loss trace.
pub fn train_loop(
    trainer: &mut Trainer,
    steps: usize,
    batch_size: usize,
    stream: u64,
    seed: u64,
    mut example: impl FnMut(usize) -> Result<TrainExample>,
    log: &mut ProgressLog,
) -> Result<Vec<f64>> {
    let mut rng = Rng::new(seed, stream);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = (0..batch_size)
            .map(|b| example(step * batch_size + b))
            .collect::<Result<Vec<_>>>()?;
        let loss = trainer.train_step(&batch, &mut rng)?;
        losses.push(loss);
        log.record(step + 1, loss, trainer.optimizer.config.lr)?;
    }
    Ok(losses)
}

/// Trains the base model from scratch on procedural clips.
pub fn pretrain(cfg: &RunConfig, log: &mut ProgressLog) -> Result<(Dit<f32>, Vec<f64>)> {
    let mut mc = cfg.model.clone();
    mc.mode = Mode::Dra;
    let model = Dit::<f32>::new(mc.clone(), cfg.seed)?;
    let codec = codec_for(&model)?;
    let vocab = Vocab::standard();
    let videos = VideoDataset {
        seed: cfg.seed,
        frames: 4 * (mc.k + 1) + 1,
        resolution: mc.image_size,
    };
    let mut trainer = Trainer::new(
        model,
        TrainSettings {
            trainable: Trainable::Base,
            delta: cfg.train.pretrain_delta,
            uniform_weights: true,
            adam: AdamWConfig {
                lr: cfg.train.lr,
                weight_decay: cfg.train.weight_decay,
                ..Default::default()
            },
        },
    );
    let losses = train_loop(
        &mut trainer,
        cfg.train.pretrain_steps,
        cfg.train.batch_size,
        stream_id(PRETRAIN_STREAM, 0),
        cfg.seed,
        |i| {
            let clip = videos.get(i)?;
            Ok(TrainExample {
                clean: codec.encode_video(&clip.frames.frames)?,
                prompt: tokenize(&vocab, &clip.prompt, mc.max_prompt_len)?,
                condition_prompt: None,
            })
        },
        log,
    )?;
    Ok((trainer.model, losses))
}

/// Applies run-level settings to a loaded model without touching weights
/// other than freshly initialized adapters when the rank changes.
pub fn adapt_model(mut model: Dit<f32>, cfg: &RunConfig) -> Result<Dit<f32>> {
    let m = &cfg.model;
    let c = &mut model.config;
    c.k = m.k;
    c.mode = m.mode;
    c.delta = m.delta;
    c.omega = m.omega;
    c.gamma = m.gamma;
    c.lora_scales = m.lora_scales;
    if c.lora_rank != m.lora_rank {
        c.lora_rank = m.lora_rank;
        let stale: Vec<String> = model
            .params
            .iter()
            .filter(|(n, _)| crate::dit::is_lora_param(n))
            .map(|(n, _)| n.to_string())
            .collect();
        if !stale.is_empty() {
            let mut kept = crate::numerics::ParamStore::new();
            for (n, t) in model.params.iter().filter(|(n, _)| !crate::dit::is_lora_param(n)) {
                kept.insert(n, t.clone());
            }
            model.params = kept;
        }
        model.reset_lora(cfg.seed)?;
    }
    model.config.validate()?;
    Ok(model)
}

/// Clean latents for one task sample under the configured mode.
pub fn task_example(
    ds: &TaskDataset,
    index: usize,
    cfg: &RunConfig,
    codec: &LatentCodec,
    vocab: &Vocab,
) -> Result<TrainExample> {
    let s = ds.get(index)?;
    let clean = match cfg.model.mode {
        Mode::Dra => {
            let schedule = MixupSchedule::new(cfg.model.k, cfg.model.gamma)?;
            codec.encode_transition(&build_training_pair(&s, cfg.data.transition, &schedule)?, &schedule)?
        }
        Mode::TwoFrameT2v | Mode::TwoFrameI2v => codec.encode_pair(&s.condition, &s.target)?,
    };
    let max = cfg.model.max_prompt_len;
    Ok(TrainExample {
        clean,
        prompt: tokenize(vocab, &s.prompt, max)?,
        condition_prompt: s
            .condition_prompt
            .as_deref()
            .map(|p| tokenize(vocab, p, max))
            .transpose()?,
    })
}

pub fn task_dataset(cfg: &RunConfig) -> TaskDataset {
    TaskDataset::new(TaskSpec::new(cfg.data.task), cfg.seed, cfg.model.image_size, usize::MAX)
}

/// LoRA fine-tuning of `base` on the configured task.
pub fn finetune(cfg: &RunConfig, base: Dit<f32>, log: &mut ProgressLog) -> Result<(Dit<f32>, Vec<f64>)> {
    let model = adapt_model(base, cfg)?;
    let codec = codec_for(&model)?;
    let vocab = Vocab::standard();
    let ds = task_dataset(cfg);
    let mut trainer = Trainer::new(
        model,
        TrainSettings {
            trainable: Trainable::Lora,
            delta: cfg.model.delta,
            uniform_weights: false,
            adam: AdamWConfig {
                lr: cfg.train.lora_lr,
                weight_decay: cfg.train.weight_decay,
                ..Default::default()
            },
        },
    );
    let losses = train_loop(
        &mut trainer,
        cfg.train.finetune_steps,
        cfg.train.batch_size,
        stream_id(FINETUNE_STREAM, 0),
        cfg.seed,
        |i| task_example(&ds, i, cfg, &codec, &vocab),
        log,
    )?;
    Ok((trainer.model, losses))
}

pub fn sample_settings(cfg: &RunConfig) -> SampleSettings {
    SampleSettings {
        steps: cfg.sample_steps,
        omega: cfg.model.omega,
        delta: cfg.model.delta,
        use_lora: true,
        normalize_condition: false,
    }
}

fn vl_evaluator(cfg: &RunConfig) -> Option<Box<dyn VlEvaluator + Sync>> {
    match cfg.eval.vl.as_str() {
        "none" | "" => None,
        "mock" => Some(Box::new(MockEvaluator)),
        url => Some(Box::new(HttpEvaluator::new(
            url,
            Duration::from_millis(cfg.eval.vl_timeout_ms),
        ))),
    }
}

/// Generates and scores `data.eval_count` held-out samples.
pub fn evaluate(cfg: &RunConfig, model: &Dit<f32>) -> Result<Vec<EvalRecord>> {
    evaluate_with_threads(cfg, model, worker_count())
}

/// [`evaluate`] on an explicit worker count. Results do not depend on it.
pub fn evaluate_with_threads(cfg: &RunConfig, model: &Dit<f32>, threads: usize) -> Result<Vec<EvalRecord>> {
    let codec = codec_for(model)?;
    let vocab = Vocab::standard();
    let ds = task_dataset(cfg);
    let settings = sample_settings(cfg);
    let vl = vl_evaluator(cfg);
    parallel_map(cfg.data.eval_count, threads, |i| {
        let s = ds.get(HELD_OUT_OFFSET + i)?;
        let mut rng = Rng::new(cfg.seed, stream_id(SAMPLE_STREAM, i as u64));
        let generated = generate_image(
            model,
            &codec,
            &vocab,
            &s.condition,
            &s.prompt,
            s.condition_prompt.as_deref(),
            &settings,
            &mut rng,
        )?;
        let mut report = controllability_report(&ds.spec, &generated, &s)?;
        if let Some(vl) = &vl {
            report.vl_score = Some(vl.score(&s.prompt, &s.condition, &generated)?);
        }
        Ok(EvalRecord {
            index: i,
            prompt: s.prompt,
            report,
        })
    })
}

fn write_eval(dir: &Path, records: &[EvalRecord]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut jsonl = String::new();
    for r in records {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    let rec = dir.join("records.jsonl");
    let csv = dir.join("metrics.csv");
    std::fs::write(&rec, jsonl)?;
    std::fs::write(&csv, aggregate_csv(&aggregate(records)))?;
    Ok(vec![rec, csv])
}

fn require_checkpoint(args: &CommandArgs, what: &str) -> Result<Dit<f32>> {
    let path = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Usage(format!("{what} needs --checkpoint")))?;
    if !path.exists() {
        return Err(Error::Usage(format!("checkpoint {} does not exist", path.display())));
    }
    load_checkpoint(path)
}

/// One ablation cell.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct AblationRow {
    pub transition: TransitionKind,
    pub frames: usize,
    pub mode: Mode,
    pub controllability: f64,
    pub ssim: f64,
    pub mse: f64,
    pub final_loss: f64,
}

pub const ABLATION_FRAMES: [usize; 3] = [4, 8, 12];

/// Sweeps transition × frame count × mode from one base model.
pub fn ablate(cfg: &RunConfig, base: &Dit<f32>, out: &Path) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    // Two-frame runs do not depend on the transition or frame count.
    let mut two_frame_cache: Vec<(Mode, AblationRow)> = Vec::new();
    for transition in [TransitionKind::Fade, TransitionKind::Slide] {
        for frames in ABLATION_FRAMES {
            for mode in Mode::ALL {
                let cached = two_frame_cache.iter().find(|(m, _)| *m == mode).map(|(_, r)| r.clone());
                let (controllability, ssim, mse, final_loss) = match &cached {
                    Some(r) => (r.controllability, r.ssim, r.mse, r.final_loss),
                    None => {
                        let mut c = cfg.clone();
                        c.set_transition_frames(frames)?;
                        c.model.mode = mode;
                        c.data.transition = transition;
                        let tag = format!("{transition}_{frames}_{mode}");
                        let mut log = ProgressLog::open(&out.join(format!("{tag}.log")), c.train.log_interval)?;
                        let (model, losses) = finetune(&c, base.clone(), &mut log)?;
                        let records = evaluate(&c, &model)?;
                        let agg = aggregate(&records);
                        let a = agg
                            .first()
                            .ok_or_else(|| Error::Usage("data.eval_count must be >= 1".into()))?;
                        let tail = losses.len().min(c.train.log_interval.max(1));
                        let final_loss = if tail == 0 {
                            f64::NAN
                        } else {
                            losses[losses.len() - tail..].iter().sum::<f64>() / tail as f64
                        };
                        (a.mean_controllability, a.mean_ssim, a.mean_mse, final_loss)
                    }
                };
                let row = AblationRow {
                    transition,
                    frames,
                    mode,
                    controllability,
                    ssim,
                    mse,
                    final_loss,
                };
                if mode != Mode::Dra && cached.is_none() {
                    two_frame_cache.push((mode, row.clone()));
                }
                log::info!("ablate {transition} {frames} {mode}: {controllability:.6}");
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("transition,frames,mode,controllability,ssim,mse,final_loss\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.transition, r.frames, r.mode, r.controllability, r.ssim, r.mse, r.final_loss
        );
    }
    s
}

/// Markdown table: one block per transition, frame counts as rows.
pub fn ablation_markdown(rows: &[AblationRow], task: TaskKind) -> String {
    let mut s = format!("# Ablation on `{task}`\n\n");
    for transition in [TransitionKind::Fade, TransitionKind::Slide] {
        let _ = writeln!(s, "## {transition}\n");
        s.push_str("| frames | mode | controllability | SSIM | MSE | final loss |\n");
        s.push_str("|---|---|---|---|---|---|\n");
        for r in rows.iter().filter(|r| r.transition == transition) {
            let _ = writeln!(
                s,
                "| {} | {} | {:.6} | {:.4} | {:.6} | {:.6} |",
                r.frames, r.mode, r.controllability, r.ssim, r.mse, r.final_loss
            );
        }
        s.push('\n');
    }
    s
}

fn load_or_sample_pair(cfg: &RunConfig, args: &CommandArgs) -> Result<(Image, Image)> {
    match (&args.condition, &args.target) {
        (Some(c), Some(t)) => Ok((Image::load_ppm(c)?, Image::load_ppm(t)?)),
        (None, None) => {
            let s = task_dataset(cfg).get(0)?;
            Ok((s.condition, s.target))
        }
        _ => Err(Error::Usage("give both --condition and --target, or neither".into())),
    }
}

pub fn run_command(cmd: Command, cfg: &RunConfig, args: &CommandArgs) -> Result<CommandOutput> {
    cfg.validate()?;
    let out = &cfg.out;
    std::fs::create_dir_all(out)?;
    let mut result = CommandOutput::default();
    match cmd {
        Command::Datagen => {
            let ds = TaskDataset::new(
                TaskSpec::new(cfg.data.task),
                cfg.seed,
                cfg.model.image_size,
                cfg.data.count,
            );
            let dir = out.join("datasets");
            export_dataset(&ds, &dir)?;
            result.artifacts.push(dir.join(cfg.data.task.as_str()));
            result.summary = format!("wrote {} {} samples", cfg.data.count, cfg.data.task);
        }
        Command::Pretrain => {
            let mut log = ProgressLog::open(&out.join("pretrain.log"), cfg.train.log_interval)?;
            let (model, losses) = pretrain(cfg, &mut log)?;
            let path = out.join("pretrain.ckpt");
            save_checkpoint(&model, &path)?;
            result.artifacts.push(path);
            result.summary = format!(
                "pretrained {} steps, last loss {:.6}",
                losses.len(),
                losses.last().unwrap_or(&f64::NAN)
            );
        }
        Command::Finetune => {
            let base = require_checkpoint(args, "finetune")?;
            let mut log = ProgressLog::open(&out.join("finetune.log"), cfg.train.log_interval)?;
            let (model, losses) = finetune(cfg, base, &mut log)?;
            let path = out.join("finetune.ckpt");
            save_checkpoint(&model, &path)?;
            result.artifacts.push(path);
            result.summary = format!(
                "fine-tuned {} steps, last loss {:.6}",
                losses.len(),
                losses.last().unwrap_or(&f64::NAN)
            );
        }
        Command::Infer => {
            let model = adapt_model(require_checkpoint(args, "infer")?, cfg)?;
            let cond_path = args
                .condition
                .as_ref()
                .ok_or_else(|| Error::Usage("infer needs --condition".into()))?;
            let prompt = args
                .prompt
                .as_deref()
                .ok_or_else(|| Error::Usage("infer needs --prompt".into()))?;
            let cond = Image::load_ppm(cond_path)?;
            let codec = codec_for(&model)?;
            let mut rng = Rng::new(cfg.seed, stream_id(SAMPLE_STREAM, 0));
            let img = generate_image(
                &model,
                &codec,
                &Vocab::standard(),
                &cond,
                prompt,
                args.condition_prompt.as_deref(),
                &sample_settings(cfg),
                &mut rng,
            )?;
            let path = args.output.clone().unwrap_or_else(|| out.join("infer.ppm"));
            img.save_ppm(&path)?;
            result.artifacts.push(path);
            result.summary = "wrote generated image".into();
        }
        Command::Eval => {
            let model = adapt_model(require_checkpoint(args, "eval")?, cfg)?;
            let records = evaluate(cfg, &model)?;
            result.artifacts = write_eval(&out.join("eval"), &records)?;
            result.summary = aggregate_csv(&aggregate(&records));
        }
        Command::Ablate => {
            let dir = out.join("ablate");
            std::fs::create_dir_all(&dir)?;
            let base = match &args.checkpoint {
                Some(_) => require_checkpoint(args, "ablate")?,
                None => {
                    let mut log = ProgressLog::open(&dir.join("pretrain.log"), cfg.train.log_interval)?;
                    let (m, _) = pretrain(cfg, &mut log)?;
                    save_checkpoint(&m, &dir.join("base.ckpt"))?;
                    m
                }
            };
            let rows = ablate(cfg, &base, &dir)?;
            let csv = dir.join("table.csv");
            let md = dir.join("table.md");
            std::fs::write(&csv, ablation_csv(&rows))?;
            std::fs::write(&md, ablation_markdown(&rows, cfg.data.task))?;
            result.artifacts = vec![csv, md];
            result.summary = ablation_csv(&rows);
        }
        Command::ExportTransition => {
            let (cond, target) = load_or_sample_pair(cfg, args)?;
            let schedule = MixupSchedule::new(cfg.model.k, cfg.model.gamma)?;
            let seq = build_sequence(cfg.data.transition, &cond, &target, &schedule)?;
            let dir = out.join("transition");
            std::fs::create_dir_all(&dir)?;
            for (i, f) in seq.frames.iter().enumerate() {
                let p = dir.join(format!("frame_{i:02}.ppm"));
                f.save_ppm(&p)?;
                result.artifacts.push(p);
            }
            result.summary = format!("wrote {} frames", seq.len());
        }
    }
    Ok(result)
}

/// Latent video of a sample, for previews and tests.
pub fn encode_sample(cfg: &RunConfig, index: usize) -> Result<LatentVideo> {
    let model_cfg = &cfg.model;
    let codec = LatentCodec::new(model_cfg.channels, model_cfg.spatial_factor)?;
    Ok(task_example(&task_dataset(cfg), index, cfg, &codec, &Vocab::standard())?.clean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn progress_log_appends_one_line_per_interval() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.log");
        let mut log = ProgressLog::open(&p, 5).unwrap();
        for s in 1..=20 {
            log.record(s, 1.0 / s as f64, 1e-3).unwrap();
        }
        drop(log);
        let mut log = ProgressLog::open(&p, 5).unwrap();
        for s in 1..=10 {
            log.record(s, 0.5, 1e-3).unwrap();
        }
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 6);
        for line in text.lines() {
            let loss: f64 = line
                .split_whitespace()
                .nth(1)
                .unwrap()
                .trim_start_matches("loss=")
                .parse()
                .unwrap();
            assert!(loss.is_finite());
        }
    }

    #[test]
    fn parallel_map_keeps_order() {
        let v = parallel_map(10, 3, |i| Ok(i * i)).unwrap();
        assert_eq!(v, (0..10).map(|i| i * i).collect::<Vec<_>>());
    }
}
