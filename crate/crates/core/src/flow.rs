//! Flow-matching objective, training step and Euler sampler.
//!
//! Noisy latents follow the linear path `y_t = (1−t)·y + t·ε` and the model
//! regresses the velocity `ε − y`. Sampling integrates from `t = 1` to `t = 0`
//! with `y ← y − Δt·v`, rewriting frame 0 after every step.

use crate::codec::{LatentCodec, LatentVideo};
use crate::dit::{build_token_layout, is_lora_param, Dit, ForwardOptions, ForwardPlan, Mode, Vocab};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mixup::{loss_weight, normalize_dark_colors};
use crate::numerics::{AdamWConfig, OptimizerState, Rng, Scalar, Tape, Tensor, Var};

pub const DEFAULT_STEPS: usize = 50;

/// Uniform on `[0, 1]`.
pub fn draw_timestep(rng: &mut Rng) -> f64 {
    rng.uniform()
}

/// One noised training example.
#[derive(Clone, Debug)]
pub struct FlowSample {
    pub clean: LatentVideo,
    pub t: f64,
    /// Index of the first noised frame; earlier frames stay clean.
    pub first_noisy: usize,
    /// One noise tensor per noised frame.
    pub noise: Vec<Tensor<f32>>,
    pub noisy: LatentVideo,
    /// Velocity targets `ε − y`, one per noised frame.
    pub targets: Vec<Tensor<f32>>,
    /// Loss weight per noised frame.
    pub weights: Vec<f64>,
}

/// Dra convention: frame 0 clean, frames `1..=K+1` noised, weights `w(0..=K)`.
pub fn make_noisy(clean: &LatentVideo, t: f64, rng: &mut Rng) -> Result<FlowSample> {
    let k = clean.k();
    let weights = (0..=k).map(|i| loss_weight(i, k)).collect::<Result<_>>()?;
    make_noisy_with(clean, t, rng, 1, weights)
}

pub fn make_noisy_with(
    clean: &LatentVideo,
    t: f64,
    rng: &mut Rng,
    first_noisy: usize,
    weights: Vec<f64>,
) -> Result<FlowSample> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("timestep {t} outside [0, 1]")));
    }
    let n = clean.len();
    if first_noisy >= n || weights.len() != n - first_noisy {
        return Err(Error::dim(format!(
            "{} weights for frames {first_noisy}..{n}",
            weights.len()
        )));
    }
    let shape = clean.frames[0].shape().to_vec();
    let noise = (first_noisy..n).map(|_| rng.gaussian(&shape)).collect();
    make_noisy_from(clean, t, noise, first_noisy, weights)
}

/// [`make_noisy_with`] with explicit noise tensors.
pub fn make_noisy_from(
    clean: &LatentVideo,
    t: f64,
    noise: Vec<Tensor<f32>>,
    first_noisy: usize,
    weights: Vec<f64>,
) -> Result<FlowSample> {
    let n = clean.len();
    if noise.len() != n - first_noisy || noise.iter().any(|e| e.shape() != clean.frames[0].shape()) {
        return Err(Error::dim("one noise tensor per noised frame is required"));
    }
    let shape = clean.frames[0].shape().to_vec();
    let mut targets = Vec::with_capacity(noise.len());
    let mut frames = clean.frames.clone();
    for (f, eps) in (first_noisy..n).zip(&noise) {
        let y = &clean.frames[f];
        let yt: Vec<f32> = y
            .data()
            .iter()
            .zip(eps.data())
            .map(|(&a, &e)| ((1.0 - t) * a as f64 + t * e as f64) as f32)
            .collect();
        let target: Vec<f32> = eps.data().iter().zip(y.data()).map(|(&e, &a)| e - a).collect();
        frames[f] = Tensor::from_vec(&shape, yt)?;
        targets.push(Tensor::from_vec(&shape, target)?);
    }
    Ok(FlowSample {
        clean: clean.clone(),
        t,
        first_noisy,
        noise,
        noisy: LatentVideo::new(frames)?,
        targets,
        weights,
    })
}

impl FlowSample {
    fn frame_size(&self) -> usize {
        let (h, w) = self.clean.grid();
        h * w
    }

    /// Targets laid out like [`LatentVideo::to_tokens`]; clean frames hold 0.
    pub fn target_tokens<T: Scalar>(&self) -> Tensor<T> {
        let mut frames = vec![Tensor::zeros(self.clean.frames[0].shape()); self.first_noisy];
        frames.extend(self.targets.iter().cloned());
        LatentVideo::new(frames)
            .expect("at least two frames")
            .to_tokens()
            .cast()
    }

    /// Per-token weights `w(k) / (hwC · frames)`, zero on clean frames.
    pub fn token_weights<T: Scalar>(&self) -> Tensor<T> {
        let hw = self.frame_size();
        let denom = (hw * self.clean.channels() * self.weights.len()) as f64;
        let mut data = vec![T::zero(); self.clean.len() * hw];
        for (i, w) in self.weights.iter().enumerate() {
            let f = self.first_noisy + i;
            data[f * hw..(f + 1) * hw].fill(T::lit(w / denom));
        }
        Tensor::from_vec(&[self.clean.len() * hw], data).unwrap()
    }
}

/// `1/(#noised) · Σ_k w(k) · MSE(pred_k, ε_k − y_k)`. `pred` is a token
/// matrix over all frames; rows of clean frames are ignored.
pub fn reweighted_loss(pred: &Tensor<f32>, sample: &FlowSample) -> Result<f64> {
    let target = sample.target_tokens::<f64>();
    if pred.shape() != target.shape() {
        return Err(Error::dim(format!(
            "prediction {:?} does not match targets {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let weights = sample.token_weights::<f64>();
    let c = pred.cols();
    let mut acc = 0.0;
    for (r, &w) in weights.data().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let row: f64 = (0..c)
            .map(|j| (pred.data()[r * c + j] as f64 - target.data()[r * c + j]).powi(2))
            .sum();
        acc += w * row;
    }
    Ok(acc)
}

/// [`reweighted_loss`] recorded on a tape.
pub fn reweighted_loss_var<T: Scalar>(tape: &mut Tape<T>, pred: Var, sample: &FlowSample) -> Result<Var> {
    let target = tape.constant(sample.target_tokens());
    let weights = tape.constant(sample.token_weights());
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    let weighted = tape.mul_col(sq, weights)?;
    tape.sum(weighted)
}

/// Clean latents plus the prompts that condition them.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub clean: LatentVideo,
    pub prompt: Vec<usize>,
    pub condition_prompt: Option<Vec<usize>>,
}

/// Which parameters a run updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    /// Everything except adapters.
    Base,
    /// Adapters only.
    Lora,
    All,
}

impl Trainable {
    pub fn includes(self, name: &str) -> bool {
        match self {
            Trainable::Base => !is_lora_param(name),
            Trainable::Lora => is_lora_param(name),
            Trainable::All => true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub trainable: Trainable,
    pub delta: usize,
    /// Weight every noised frame by 1 instead of the mixup schedule.
    pub uniform_weights: bool,
    pub adam: AdamWConfig,
}

/// How frame 0 is treated in a given mode.
pub fn noise_plan(mode: Mode, frames: usize, uniform: bool) -> Result<(usize, Vec<f64>)> {
    match mode {
        Mode::TwoFrameT2v => Ok((0, vec![1.0; frames])),
        Mode::TwoFrameI2v => Ok((1, vec![1.0; frames - 1])),
        Mode::Dra if uniform => Ok((1, vec![1.0; frames - 1])),
        Mode::Dra => {
            let k = frames - 2;
            Ok((1, (0..=k).map(|i| loss_weight(i, k)).collect::<Result<_>>()?))
        }
    }
}

pub struct Trainer {
    pub model: Dit<f32>,
    pub optimizer: OptimizerState<f32>,
    pub settings: TrainSettings,
    trainable: Vec<usize>,
}

impl Trainer {
    pub fn new(model: Dit<f32>, settings: TrainSettings) -> Self {
        let trainable: Vec<usize> = (0..model.params.len())
            .filter(|&i| settings.trainable.includes(model.params.name(i)))
            .collect();
        let optimizer = OptimizerState::new(
            settings.adam.clone(),
            trainable.iter().map(|&i| model.params.tensor(i).shape()),
        );
        Self {
            model,
            optimizer,
            settings,
            trainable,
        }
    }

    pub fn trainable_ids(&self) -> &[usize] {
        &self.trainable
    }

    fn forward_options(&self) -> ForwardOptions {
        ForwardOptions {
            use_lora: self.settings.trainable != Trainable::Base,
            omega: 0.0,
        }
    }

    /// Loss and gradients (trainable parameters, in id order) of one example.
    pub fn loss_and_grads(&self, ex: &TrainExample, rng: &mut Rng) -> Result<(f64, Vec<Tensor<f32>>)> {
        let t = draw_timestep(rng);
        let (first, weights) = noise_plan(self.model.config.mode, ex.clean.len(), self.settings.uniform_weights)?;
        let sample = make_noisy_with(&ex.clean, t, rng, first, weights)?;
        let layout = build_token_layout(
            &self.model.config,
            &sample.noisy,
            &ex.prompt,
            ex.condition_prompt.as_deref(),
        )?;
        let plan = self.model.plan(layout, self.settings.delta)?;
        let mut tape = Tape::new();
        let trainable = self.settings.trainable;
        let vars = self.model.bind(&mut tape, |n| trainable.includes(n));
        let x = tape.constant(sample.noisy.to_tokens());
        let pred = self
            .model
            .forward(&mut tape, &vars, &plan, x, t, self.forward_options())?;
        let loss = reweighted_loss_var(&mut tape, pred, &sample)?;
        let value = tape.value(loss).item() as f64;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite training loss {value}")));
        }
        tape.backward(loss)?;
        let grads = self
            .trainable
            .iter()
            .map(|&i| {
                tape.grad(vars[i])
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.model.params.tensor(i).shape()))
            })
            .collect();
        Ok((value, grads))
    }

    /// Mean loss over the batch before the update. A non-finite loss or
    /// gradient aborts without touching the parameters.
    pub fn train_step(&mut self, batch: &[TrainExample], rng: &mut Rng) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::dim("empty batch"));
        }
        let mut total = 0.0;
        let mut acc: Option<Vec<Tensor<f32>>> = None;
        for ex in batch {
            let (loss, grads) = self.loss_and_grads(ex, rng)?;
            total += loss;
            match &mut acc {
                None => acc = Some(grads),
                Some(a) => a.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
            }
        }
        let inv = 1.0 / batch.len() as f32;
        let grads: Vec<Tensor<f32>> = acc.unwrap().into_iter().map(|g| g.map(|v| v * inv)).collect();
        let mut params = self.model.params.select_mut(&self.trainable);
        let grad_refs: Vec<&Tensor<f32>> = grads.iter().collect();
        self.optimizer.step(&mut params, &grad_refs)?;
        Ok(total / batch.len() as f64)
    }
}

/// A velocity model over token matrices in `f64`.
pub trait VelocityField {
    fn velocity(&self, state: &Tensor<f64>, t: f64) -> Result<Tensor<f64>>;
}

/// What happens to frame 0 after each Euler step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditionPolicy {
    /// Overwrite with the clean condition latent.
    Replace,
    /// Overwrite with the condition noised to the current time.
    Renoise,
}

impl ConditionPolicy {
    pub fn for_mode(mode: Mode) -> Self {
        if mode.replaces_condition() {
            ConditionPolicy::Replace
        } else {
            ConditionPolicy::Renoise
        }
    }
}

fn write_frame0(state: &mut Tensor<f64>, cond: &Tensor<f64>, eps0: &Tensor<f64>, t: f64, policy: ConditionPolicy) {
    let n = cond.len();
    let dst = &mut state.data_mut()[..n];
    match policy {
        ConditionPolicy::Replace => dst.copy_from_slice(cond.data()),
        ConditionPolicy::Renoise => {
            for ((d, &c), &e) in dst.iter_mut().zip(cond.data()).zip(eps0.data()) {
                *d = (1.0 - t) * c + t * e;
            }
        }
    }
}

/// Euler integration from noise to data with frame 0 pinned.
pub fn euler_sample<F: VelocityField>(
    field: &F,
    cond: &Tensor<f32>,
    frames: usize,
    steps: usize,
    policy: ConditionPolicy,
    rng: &mut Rng,
) -> Result<LatentVideo> {
    euler_sample_observed(field, cond, frames, steps, policy, rng, |_, _| {})
}

/// [`euler_sample`] calling `observe(step, state)` after every step.
pub fn euler_sample_observed<F: VelocityField>(
    field: &F,
    cond: &Tensor<f32>,
    frames: usize,
    steps: usize,
    policy: ConditionPolicy,
    rng: &mut Rng,
    mut observe: impl FnMut(usize, &Tensor<f64>),
) -> Result<LatentVideo> {
    if steps == 0 {
        return Err(Error::Domain("sampling needs at least one step".into()));
    }
    let shape = cond.shape();
    if shape.len() != 3 {
        return Err(Error::dim(format!("condition latent must be [C, h, w], got {shape:?}")));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut init = vec![cond.clone()];
    init.extend((1..frames).map(|_| rng.gaussian::<f32>(shape)));
    let init = LatentVideo::new(init)?;
    let eps0_video = LatentVideo::new(vec![rng.gaussian::<f32>(shape), cond.clone()])?;
    let hw = h * w;
    let mut state: Tensor<f64> = init.to_tokens().cast();
    let cond_tok = Tensor::from_vec(&[hw, c], state.data()[..hw * c].to_vec())?;
    let eps_all: Tensor<f64> = eps0_video.to_tokens().cast();
    let eps0 = Tensor::from_vec(&[hw, c], eps_all.data()[..hw * c].to_vec())?;
    write_frame0(&mut state, &cond_tok, &eps0, 1.0, policy);
    let dt = 1.0 / steps as f64;
    for step in 0..steps {
        let t = 1.0 - step as f64 * dt;
        let t_next = if step + 1 == steps {
            0.0
        } else {
            1.0 - (step + 1) as f64 * dt
        };
        let v = field.velocity(&state, t)?;
        if v.shape() != state.shape() {
            return Err(Error::dim(format!(
                "velocity {:?} for state {:?}",
                v.shape(),
                state.shape()
            )));
        }
        let h_step = t - t_next;
        for (s, &dv) in state.data_mut().iter_mut().zip(v.data()) {
            *s -= h_step * dv;
        }
        write_frame0(&mut state, &cond_tok, &eps0, t_next, policy);
        if !state.is_finite() {
            return Err(Error::Numeric(format!(
                "sampler state became non-finite at step {step}"
            )));
        }
        observe(step, &state);
    }
    LatentVideo::from_tokens(&state.cast(), frames, c, h, w)
}

/// The model as a velocity field for one layout.
pub struct ModelVelocity<'a> {
    pub model: &'a Dit<f32>,
    pub plan: &'a ForwardPlan<f32>,
    pub opts: ForwardOptions,
}

impl VelocityField for ModelVelocity<'_> {
    fn velocity(&self, state: &Tensor<f64>, t: f64) -> Result<Tensor<f64>> {
        let v = self.model.predict(self.plan, &state.cast(), t, self.opts)?;
        Ok(v.cast())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSettings {
    pub steps: usize,
    pub omega: f64,
    pub delta: usize,
    pub use_lora: bool,
    /// Apply dark-color normalization to the condition before encoding.
    pub normalize_condition: bool,
}

impl SampleSettings {
    pub fn from_config(config: &crate::dit::ModelConfig) -> Self {
        Self {
            steps: DEFAULT_STEPS,
            omega: config.omega,
            delta: config.delta,
            use_lora: true,
            normalize_condition: false,
        }
    }
}

/// Samples the latent video for an encoded condition.
pub fn generate_latent(
    model: &Dit<f32>,
    cond: &Tensor<f32>,
    prompt: &[usize],
    condition_prompt: Option<&[usize]>,
    settings: &SampleSettings,
    rng: &mut Rng,
) -> Result<LatentVideo> {
    let frames = model.config.latent_frames();
    let skeleton = LatentVideo::new(vec![cond.clone(); frames])?;
    let layout = build_token_layout(&model.config, &skeleton, prompt, condition_prompt)?;
    let plan = model.plan(layout, settings.delta)?;
    let field = ModelVelocity {
        model,
        plan: &plan,
        opts: ForwardOptions {
            use_lora: settings.use_lora,
            omega: settings.omega,
        },
    };
    let policy = ConditionPolicy::for_mode(model.config.mode);
    euler_sample(&field, cond, frames, settings.steps, policy, rng)
}

/// Encode, sample, decode the last frame, clamp to `[0, 1]`.
#[allow(clippy::too_many_arguments)]
pub fn generate_image(
    model: &Dit<f32>,
    codec: &LatentCodec,
    vocab: &Vocab,
    cond: &Image,
    prompt: &str,
    condition_prompt: Option<&str>,
    settings: &SampleSettings,
    rng: &mut Rng,
) -> Result<Image> {
    let cond = if settings.normalize_condition {
        normalize_dark_colors(cond)
    } else {
        cond.clone()
    };
    let latent = codec.encode_single(&cond)?;
    let p = vocab.tokenize(prompt);
    let cp = condition_prompt.map(|s| vocab.tokenize(s));
    let video = generate_latent(model, &latent, &p, cp.as_deref(), settings, rng)?;
    Ok(codec.decode_latent(video.target())?.clamp01())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn latent(frames: usize, seed: u64) -> LatentVideo {
        let mut rng = Rng::new(seed, 0);
        LatentVideo::new((0..frames).map(|_| rng.gaussian(&[2, 2, 2])).collect()).unwrap()
    }

    #[test]
    fn timestep_moments() {
        let mut rng = Rng::new(0, 0);
        let draws: Vec<f64> = (0..100_000).map(|_| draw_timestep(&mut rng)).collect();
        assert!(draws.iter().all(|t| (0.0..=1.0).contains(t)));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.01);
    }

    #[test]
    fn interpolation_endpoints() {
        let clean = latent(4, 1);
        let s0 = make_noisy(&clean, 0.0, &mut Rng::new(1, 1)).unwrap();
        assert_eq!(s0.noisy, clean);
        let s1 = make_noisy(&clean, 1.0, &mut Rng::new(1, 1)).unwrap();
        assert_eq!(s1.noisy.frames[0], clean.frames[0]);
        for k in 0..3 {
            assert_eq!(s1.noisy.frames[k + 1], s1.noise[k]);
        }
    }

    #[test]
    fn scalar_hand_example() {
        let clean = LatentVideo::new(vec![Tensor::zeros(&[1, 1, 1]); 2]).unwrap();
        let s = make_noisy_from(&clean, 0.5, vec![Tensor::full(&[1, 1, 1], 2.0)], 1, vec![1.0]).unwrap();
        assert_eq!(s.noisy.frames[1].data(), &[1.0]);
        assert_eq!(s.targets[0].data(), &[2.0]);
    }

    #[test]
    fn equal_frame_errors_scale_by_mean_weight() {
        let clean = latent(4, 2);
        let s = make_noisy(&clean, 0.3, &mut Rng::new(2, 0)).unwrap();
        let mut pred = s.target_tokens::<f32>();
        pred.data_mut().iter_mut().for_each(|v| *v += 0.5);
        let loss = reweighted_loss(&pred, &s).unwrap();
        let w: f64 = (0..3).map(|k| loss_weight(k, 2).unwrap()).sum::<f64>() / 3.0;
        assert!((loss - 0.25 * w).abs() < 1e-7, "{loss} vs {}", 0.25 * w);
        // Frame-0 rows are ignored.
        let mut p2 = pred.clone();
        p2.data_mut()[..8].fill(100.0);
        assert_eq!(reweighted_loss(&p2, &s).unwrap(), loss);
        assert_eq!(reweighted_loss(&s.target_tokens(), &s).unwrap(), 0.0);
        assert!(reweighted_loss(&Tensor::zeros(&[3, 2]), &s).is_err());
    }

    struct Oracle {
        target: Tensor<f64>,
    }

    impl VelocityField for Oracle {
        fn velocity(&self, state: &Tensor<f64>, t: f64) -> Result<Tensor<f64>> {
            let d = state
                .data()
                .iter()
                .zip(self.target.data())
                .map(|(s, y)| (s - y) / t)
                .collect();
            Tensor::from_vec(state.shape(), d)
        }
    }

    #[test]
    fn euler_is_exact_on_linear_path() {
        let clean = latent(4, 3);
        let oracle = Oracle {
            target: clean.to_tokens().cast(),
        };
        for steps in [1, 5, 50] {
            let mut frame0_ok = true;
            let out = euler_sample_observed(
                &oracle,
                clean.condition(),
                4,
                steps,
                ConditionPolicy::Replace,
                &mut Rng::new(3, 1),
                |_, s| {
                    frame0_ok &= s.data()[..8]
                        .iter()
                        .zip(clean.to_tokens().data())
                        .all(|(a, b)| *a == *b as f64);
                },
            )
            .unwrap();
            assert!(frame0_ok);
            assert_eq!(out.frames[0], clean.frames[0]);
            let err = out.to_tokens().max_abs_diff(&clean.to_tokens());
            assert!(err < 1e-6, "steps {steps}: {err}");
        }
    }

    #[test]
    fn sampler_rejects_zero_steps() {
        let clean = latent(2, 4);
        let oracle = Oracle {
            target: clean.to_tokens().cast(),
        };
        assert!(euler_sample(
            &oracle,
            clean.condition(),
            2,
            0,
            ConditionPolicy::Replace,
            &mut Rng::new(0, 0)
        )
        .is_err());
    }
}
