//! The toy video diffusion transformer.
//!
//! Visual tokens (one per latent pixel, `C` features) and prompt tokens share
//! one residual stream. Each block is pre-norm full attention followed by a
//! gated MLP, both modulated by adaptive shift/scale/gate vectors computed
//! from the timestep embedding plus the mean target-prompt embedding. Rotary
//! embeddings use frame-skip coordinates; attention logits carry the segment
//! mask. Every block linear can carry a LoRA adapter scaled per segment.

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Rng, Scalar, Tape, Tensor, Var};

use super::config::ModelConfig;
use super::layout::TokenLayout;
use super::mask::{build_attention_mask, inference_offset};
use super::rope::{fspe_positions, RopeTable};

/// Block linears that receive adapters.
pub const ADAPTED_LINEARS: [&str; 5] = ["qkv", "out", "mlp.gate", "mlp.up", "mlp.down"];

const LORA_PREFIX: &str = "lora.";

pub fn is_lora_param(name: &str) -> bool {
    name.starts_with(LORA_PREFIX)
}

#[derive(Clone, Debug)]
pub struct Dit<T: Scalar = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

/// Layout-dependent constants reused across forward passes.
#[derive(Clone, Debug)]
pub struct ForwardPlan<T: Scalar> {
    pub layout: TokenLayout,
    pub mask: Tensor<T>,
    pub rope: RopeTable<T>,
    pub lora_scales: Tensor<T>,
}

impl<T: Scalar> ForwardPlan<T> {
    pub fn new(config: &ModelConfig, layout: TokenLayout, delta: usize) -> Result<Self> {
        layout.validate()?;
        let positions = fspe_positions(&layout, delta);
        let rope = RopeTable::new(&positions, config.rope_bands()?, config.heads, config.rope_base)?;
        let mask = build_attention_mask(&layout);
        let lora_scales = config.lora_scales.column(&layout.segments());
        Ok(Self {
            layout,
            mask,
            rope,
            lora_scales,
        })
    }
}

/// Options that differ between training and sampling.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ForwardOptions {
    /// Apply LoRA adapters.
    pub use_lora: bool,
    /// Offset scale for the `T_I × T_P` logits; 0 disables.
    pub omega: f64,
}

fn layer_name(l: usize, name: &str) -> String {
    format!("blocks.{l}.{name}")
}

impl<T: Scalar> Dit<T> {
    /// Fresh model with adaptive-modulation and output projections at zero
    /// and LoRA `B` matrices at zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed, crate::numerics::stream_id(0x1217, 0));
        let d = config.dim;
        let hid = config.mlp_hidden;
        let c = config.channels;
        let mut p = ParamStore::new();
        let normal = |rng: &mut Rng, shape: &[usize], std: f64| rng.gaussian::<T>(shape).map(|v| v * T::lit(std));
        let inv = |n: usize| 1.0 / (n as f64).sqrt();

        p.insert("embed.visual.w", normal(&mut rng, &[c, d], inv(c)));
        p.insert("embed.visual.b", Tensor::zeros(&[d]));
        p.insert("embed.text", normal(&mut rng, &[config.vocab_size, d], 0.02));
        p.insert("time.w1", normal(&mut rng, &[d, d], inv(d)));
        p.insert("time.b1", Tensor::zeros(&[d]));
        p.insert("time.w2", normal(&mut rng, &[d, d], inv(d)));
        p.insert("time.b2", Tensor::zeros(&[d]));
        for l in 0..config.layers {
            p.insert(layer_name(l, "norm1"), Tensor::full(&[d], T::one()));
            p.insert(layer_name(l, "qkv.w"), normal(&mut rng, &[d, 3 * d], inv(d)));
            p.insert(layer_name(l, "out.w"), normal(&mut rng, &[d, d], inv(d)));
            p.insert(layer_name(l, "norm2"), Tensor::full(&[d], T::one()));
            p.insert(layer_name(l, "mlp.gate.w"), normal(&mut rng, &[d, hid], inv(d)));
            p.insert(layer_name(l, "mlp.up.w"), normal(&mut rng, &[d, hid], inv(d)));
            p.insert(layer_name(l, "mlp.down.w"), normal(&mut rng, &[hid, d], inv(hid)));
            p.insert(layer_name(l, "mod.w"), Tensor::zeros(&[d, 6 * d]));
            p.insert(layer_name(l, "mod.b"), Tensor::zeros(&[6 * d]));
        }
        p.insert("final.norm", Tensor::full(&[d], T::one()));
        p.insert("final.mod.w", Tensor::zeros(&[d, 2 * d]));
        p.insert("final.mod.b", Tensor::zeros(&[2 * d]));
        p.insert("final.w", Tensor::zeros(&[d, c]));
        p.insert("final.b", Tensor::zeros(&[c]));

        let mut model = Self { config, params: p };
        model.reset_lora(seed)?;
        Ok(model)
    }

    /// Shapes `(d_in, d_out)` of an adapted block linear.
    fn linear_dims(&self, name: &str) -> (usize, usize) {
        let (d, hid) = (self.config.dim, self.config.mlp_hidden);
        match name {
            "qkv" => (d, 3 * d),
            "out" => (d, d),
            "mlp.gate" | "mlp.up" => (d, hid),
            "mlp.down" => (hid, d),
            _ => unreachable!("unknown adapted linear {name}"),
        }
    }

    /// Re-initializes every adapter: Gaussian `A`, zero `B`.
    pub fn reset_lora(&mut self, seed: u64) -> Result<()> {
        let r = self.config.lora_rank;
        if r == 0 {
            return Ok(());
        }
        let mut rng = Rng::new(seed, crate::numerics::stream_id(0x10AA, 0));
        for l in 0..self.config.layers {
            for name in ADAPTED_LINEARS {
                let (d_in, d_out) = self.linear_dims(name);
                let std = T::lit(1.0 / (d_in as f64).sqrt());
                let a = rng.gaussian::<T>(&[r, d_in]).map(|v| v * std);
                let base = format!("{LORA_PREFIX}{}", layer_name(l, name));
                self.params.insert(format!("{base}.a"), a);
                self.params.insert(format!("{base}.b"), Tensor::zeros(&[d_out, r]));
            }
        }
        Ok(())
    }

    /// Overwrites every parameter with Gaussian noise of the given std.
    /// Used by gradient checks, where zero-initialized projections would hide
    /// most of the graph.
    pub fn randomize(&mut self, rng: &mut Rng, std: f64) {
        for id in 0..self.params.len() {
            let shape = self.params.tensor(id).shape().to_vec();
            let is_gain = self.params.name(id).contains("norm");
            let noise = rng.gaussian::<T>(&shape);
            let v = if is_gain {
                noise.map(|x| T::one() + x * T::lit(std))
            } else {
                noise.map(|x| x * T::lit(std))
            };
            *self.params.tensor_mut(id) = v;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Dit<U> {
        Dit {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    pub fn plan(&self, layout: TokenLayout, delta: usize) -> Result<ForwardPlan<T>> {
        ForwardPlan::new(&self.config, layout, delta)
    }

    /// Records every parameter as a tape leaf; `trainable` selects which ones
    /// receive gradients. Returns vars indexed by parameter id.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: impl Fn(&str) -> bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|(name, t)| tape.leaf(t.clone(), trainable(name)))
            .collect()
    }

    fn var(&self, vars: &[Var], name: &str) -> Result<Var> {
        self.params
            .id(name)
            .map(|i| vars[i])
            .ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))
    }

    fn linear(&self, tape: &mut Tape<T>, vars: &[Var], x: Var, w: &str, b: Option<&str>) -> Result<Var> {
        let y = tape.matmul(x, self.var(vars, w)?)?;
        match b {
            Some(b) => tape.add_row(y, self.var(vars, b)?),
            None => Ok(y),
        }
    }

    fn adapted(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        x: Var,
        l: usize,
        name: &str,
        lora: Option<Var>,
    ) -> Result<Var> {
        let full = layer_name(l, name);
        let y = self.linear(tape, vars, x, &format!("{full}.w"), None)?;
        let Some(scales) = lora else { return Ok(y) };
        if self.config.lora_rank == 0 {
            return Ok(y);
        }
        let a = self.var(vars, &format!("{LORA_PREFIX}{full}.a"))?;
        let b = self.var(vars, &format!("{LORA_PREFIX}{full}.b"))?;
        let h = tape.matmul_nt(x, a)?;
        let delta = tape.matmul_nt(h, b)?;
        let delta = tape.mul_col(delta, scales)?;
        tape.add(y, delta)
    }

    /// `x ⊙ (1 + scale) + shift`.
    fn modulate(tape: &mut Tape<T>, x: Var, shift: Var, scale: Var) -> Result<Var> {
        let xs = tape.mul_row(x, scale)?;
        let y = tape.add(x, xs)?;
        tape.add_row(y, shift)
    }

    fn timestep_features(&self, t: f64) -> Tensor<T> {
        let d = self.config.dim;
        let half = d / 2;
        let mut v = vec![T::zero(); d];
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            let arg = 1000.0 * t * freq;
            v[i] = T::lit(arg.cos());
            v[half + i] = T::lit(arg.sin());
        }
        Tensor::from_vec(&[1, d], v).unwrap()
    }

    /// Velocity prediction `[visual tokens, C]` for visual input tokens
    /// `[visual tokens, C]` at timestep `t`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        plan: &ForwardPlan<T>,
        visual: Var,
        t: f64,
        opts: ForwardOptions,
    ) -> Result<Var> {
        let cfg = &self.config;
        let layout = &plan.layout;
        let nv = layout.visual_len();
        let (d, heads) = (cfg.dim, cfg.heads);
        let hd = cfg.head_dim();
        if tape.value(visual).shape() != [nv, cfg.channels] {
            return Err(Error::dim(format!(
                "visual tokens {:?}, layout expects [{nv}, {}]",
                tape.value(visual).shape(),
                cfg.channels
            )));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("timestep {t} outside [0, 1]")));
        }

        // Embeddings.
        let xv = self.linear(tape, vars, visual, "embed.visual.w", Some("embed.visual.b"))?;
        let table = self.var(vars, "embed.text")?;
        let xt = tape.gather(table, &layout.text_ids)?;
        let mut x = tape.concat_rows(&[xv, xt])?;

        // Global conditioning vector.
        let tf = tape.constant(self.timestep_features(t));
        let h = self.linear(tape, vars, tf, "time.w1", Some("time.b1"))?;
        let h = tape.silu(h)?;
        let temb = self.linear(tape, vars, h, "time.w2", Some("time.b2"))?;
        let prompt = tape.gather(table, layout.target_prompt_ids())?;
        let pooled = tape.mean_rows(prompt)?;
        let cond = tape.add(temb, pooled)?;
        let cond = tape.silu(cond)?;

        let lora = if opts.use_lora {
            Some(tape.constant(plan.lora_scales.clone()))
        } else {
            None
        };
        let inv_sqrt = T::lit(1.0 / (hd as f64).sqrt());

        for l in 0..cfg.layers {
            let m = self.linear(tape, vars, cond, &layer_name(l, "mod.w"), Some(&layer_name(l, "mod.b")))?;
            let chunk = |tape: &mut Tape<T>, i: usize| tape.slice_cols(m, i * d, d);
            let (shift1, scale1, gate1) = (chunk(tape, 0)?, chunk(tape, 1)?, chunk(tape, 2)?);
            let (shift2, scale2, gate2) = (chunk(tape, 3)?, chunk(tape, 4)?, chunk(tape, 5)?);

            // Attention.
            let h = tape.rms_norm(x, self.var(vars, &layer_name(l, "norm1"))?)?;
            let h = Self::modulate(tape, h, shift1, scale1)?;
            let qkv = self.adapted(tape, vars, h, l, "qkv", lora)?;
            let q = tape.slice_cols(qkv, 0, d)?;
            let k = tape.slice_cols(qkv, d, d)?;
            let v = tape.slice_cols(qkv, 2 * d, d)?;
            let q = tape.rotate_pairs(q, plan.rope.cos.clone(), plan.rope.sin.clone())?;
            let k = tape.rotate_pairs(k, plan.rope.cos.clone(), plan.rope.sin.clone())?;
            let mut outs = Vec::with_capacity(heads);
            for head in 0..heads {
                let qh = tape.slice_cols(q, head * hd, hd)?;
                let kh = tape.slice_cols(k, head * hd, hd)?;
                let vh = tape.slice_cols(v, head * hd, hd)?;
                let s = tape.matmul_nt(qh, kh)?;
                let mut s = tape.scale(s, inv_sqrt)?;
                if opts.omega > 0.0 {
                    if let Some(off) = inference_offset(tape.value(s), layout, opts.omega) {
                        let off = tape.constant(off);
                        s = tape.add(s, off)?;
                    }
                }
                let a = tape.masked_softmax(s, Some(&plan.mask))?;
                outs.push(tape.matmul(a, vh)?);
            }
            let o = tape.concat_cols(&outs)?;
            let o = self.adapted(tape, vars, o, l, "out", lora)?;
            let o = tape.mul_row(o, gate1)?;
            x = tape.add(x, o)?;

            // Gated MLP.
            let h = tape.rms_norm(x, self.var(vars, &layer_name(l, "norm2"))?)?;
            let h = Self::modulate(tape, h, shift2, scale2)?;
            let g = self.adapted(tape, vars, h, l, "mlp.gate", lora)?;
            let g = tape.silu(g)?;
            let u = self.adapted(tape, vars, h, l, "mlp.up", lora)?;
            let gu = tape.mul(g, u)?;
            let o = self.adapted(tape, vars, gu, l, "mlp.down", lora)?;
            let o = tape.mul_row(o, gate2)?;
            x = tape.add(x, o)?;
        }

        let fm = self.linear(tape, vars, cond, "final.mod.w", Some("final.mod.b"))?;
        let shift = tape.slice_cols(fm, 0, d)?;
        let scale = tape.slice_cols(fm, d, d)?;
        let h = tape.rms_norm(x, self.var(vars, "final.norm")?)?;
        let h = Self::modulate(tape, h, shift, scale)?;
        let hv = tape.slice_rows(h, 0, nv)?;
        self.linear(tape, vars, hv, "final.w", Some("final.b"))
    }

    /// Forward pass without gradients.
    pub fn predict(
        &self,
        plan: &ForwardPlan<T>,
        visual: &Tensor<T>,
        t: f64,
        opts: ForwardOptions,
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, |_| false);
        let x = tape.constant(visual.clone());
        let out = self.forward(&mut tape, &vars, plan, x, t, opts)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::LatentVideo;
    use crate::dit::{build_token_layout, Mode, ModelConfig};

    fn small_config() -> ModelConfig {
        ModelConfig {
            image_size: 16,
            dim: 32,
            heads: 2,
            layers: 2,
            mlp_hidden: 48,
            lora_rank: 4,
            ..Default::default()
        }
    }

    fn setup(cfg: &ModelConfig, seed: u64) -> (Dit<f64>, ForwardPlan<f64>, Tensor<f64>) {
        let mut model = Dit::<f64>::new(cfg.clone(), seed).unwrap();
        let mut rng = Rng::new(seed, 99);
        model.randomize(&mut rng, 0.3);
        let g = cfg.latent_grid();
        let lv = LatentVideo::new(vec![Tensor::zeros(&[cfg.channels, g, g]); cfg.latent_frames()]).unwrap();
        let layout = build_token_layout(cfg, &lv, &[3, 4, 5], Some(&[6, 7])).unwrap();
        let plan = model.plan(layout, cfg.delta).unwrap();
        let x = rng.gaussian(&[plan.layout.visual_len(), cfg.channels]);
        (model, plan, x)
    }

    #[test]
    fn output_shape_and_determinism() {
        let cfg = small_config();
        let (model, plan, x) = setup(&cfg, 1);
        let opts = ForwardOptions {
            use_lora: true,
            omega: 0.6,
        };
        let a = model.predict(&plan, &x, 0.3, opts).unwrap();
        let b = model.predict(&plan, &x, 0.3, opts).unwrap();
        assert_eq!(a.shape(), x.shape());
        assert_eq!(a, b);
    }

    #[test]
    fn fresh_adapters_do_not_change_output() {
        let cfg = small_config();
        let mut model = Dit::<f32>::new(cfg.clone(), 4).unwrap();
        let mut rng = Rng::new(4, 1);
        model.randomize(&mut rng, 0.3);
        model.reset_lora(4).unwrap();
        let g = cfg.latent_grid();
        let lv = LatentVideo::new(vec![Tensor::zeros(&[cfg.channels, g, g]); 4]).unwrap();
        let plan = model
            .plan(build_token_layout(&cfg, &lv, &[3, 4], None).unwrap(), 12)
            .unwrap();
        let x = rng.gaussian(&[plan.layout.visual_len(), cfg.channels]);
        let base = model.predict(&plan, &x, 0.5, ForwardOptions::default()).unwrap();
        let adapted = model
            .predict(
                &plan,
                &x,
                0.5,
                ForwardOptions {
                    use_lora: true,
                    omega: 0.0,
                },
            )
            .unwrap();
        assert_eq!(base, adapted);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = small_config();
        let (model, plan, _) = setup(&cfg, 2);
        let wrong = Tensor::zeros(&[3, cfg.channels]);
        assert!(matches!(
            model.predict(&plan, &wrong, 0.5, ForwardOptions::default()),
            Err(Error::Dimension(_))
        ));
        let x = Tensor::zeros(&[plan.layout.visual_len(), cfg.channels]);
        assert!(model.predict(&plan, &x, 1.5, ForwardOptions::default()).is_err());
    }

    #[test]
    fn two_frame_config_builds() {
        let cfg = ModelConfig {
            mode: Mode::TwoFrameI2v,
            ..small_config()
        };
        let (model, plan, x) = setup(&cfg, 3);
        assert_eq!(plan.layout.frames, 2);
        assert_eq!(
            model
                .predict(&plan, &x, 0.1, ForwardOptions::default())
                .unwrap()
                .shape(),
            x.shape()
        );
    }
}
