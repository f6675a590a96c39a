use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which conditioning layout the model is trained and sampled with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Condition frame, `K` mixup transition frames, target frame.
    Dra,
    /// Two-frame video where the condition frame is noised like the target.
    TwoFrameT2v,
    /// Two-frame video with the clean condition latent replacing frame 0.
    TwoFrameI2v,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Dra, Mode::TwoFrameT2v, Mode::TwoFrameI2v];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Dra => "dra",
            Mode::TwoFrameT2v => "two_frame_t2v",
            Mode::TwoFrameI2v => "two_frame_i2v",
        }
    }

    /// Whether frame 0 carries the clean condition latent.
    pub fn replaces_condition(self) -> bool {
        !matches!(self, Mode::TwoFrameT2v)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config("model.mode", format!("unknown mode {s:?}")))
    }
}

/// LoRA scale applied to tokens of each segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentScales {
    pub condition_image: f64,
    pub generated: f64,
    pub target_prompt: f64,
    pub condition_prompt: f64,
}

impl Default for SegmentScales {
    fn default() -> Self {
        Self {
            condition_image: 1.0,
            generated: 0.0,
            target_prompt: 1.0,
            condition_prompt: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub spatial_factor: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_hidden: usize,
    pub vocab_size: usize,
    pub max_prompt_len: usize,
    pub k: usize,
    pub delta: usize,
    pub omega: f64,
    pub gamma: f64,
    pub lora_rank: usize,
    pub lora_scales: SegmentScales,
    pub mode: Mode,
    pub rope_base: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: 16,
            spatial_factor: 4,
            dim: 128,
            heads: 4,
            layers: 4,
            mlp_hidden: 256,
            vocab_size: crate::dit::Vocab::standard().len(),
            max_prompt_len: 16,
            k: 2,
            delta: 12,
            omega: 0.6,
            gamma: crate::mixup::DEFAULT_GAMMA,
            lora_rank: 16,
            lora_scales: SegmentScales::default(),
            mode: Mode::Dra,
            rope_base: 10_000.0,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads.max(1)
    }

    /// Noisy transition frames actually used; two-frame modes have none.
    pub fn effective_k(&self) -> usize {
        match self.mode {
            Mode::Dra => self.k,
            Mode::TwoFrameT2v | Mode::TwoFrameI2v => 0,
        }
    }

    /// Latent frames per sample: condition, transitions, target.
    pub fn latent_frames(&self) -> usize {
        self.effective_k() + 2
    }

    pub fn latent_grid(&self) -> usize {
        self.image_size / self.spatial_factor.max(1)
    }

    /// Rotary sub-band widths `(temporal, height, width)` of one head.
    ///
    /// The temporal band takes a quarter of the head, rounded down to even;
    /// the two spatial bands split the rest.
    pub fn rope_bands(&self) -> Result<[usize; 3]> {
        let hd = self.head_dim();
        let t = (hd / 4) & !1;
        let rest = hd - t;
        let s = rest / 2;
        if t == 0 || !rest.is_multiple_of(2) || !s.is_multiple_of(2) {
            return Err(Error::config(
                "model.dim",
                format!("head dim {hd} cannot be split into even (temporal, height, width) rotary bands"),
            ));
        }
        Ok([t, s, s])
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.image_size", self.image_size),
            ("model.channels", self.channels),
            ("model.spatial_factor", self.spatial_factor),
            ("model.dim", self.dim),
            ("model.heads", self.heads),
            ("model.layers", self.layers),
            ("model.mlp_hidden", self.mlp_hidden),
            ("model.vocab_size", self.vocab_size),
            ("model.max_prompt_len", self.max_prompt_len),
            ("model.k", self.k),
            ("model.delta", self.delta),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be >= 1"));
            }
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::config(
                "model.heads",
                format!("dim {} is not divisible by {} heads", self.dim, self.heads),
            ));
        }
        if !self.image_size.is_multiple_of(self.spatial_factor) {
            return Err(Error::config(
                "model.image_size",
                format!(
                    "{} is not divisible by spatial factor {}",
                    self.image_size, self.spatial_factor
                ),
            ));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(Error::config("model.omega", "must be finite and >= 0"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("model.gamma", "must be positive"));
        }
        if self.channels < 3 {
            return Err(Error::config("model.channels", "at least 3 latent channels are needed"));
        }
        self.rope_bands()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.rope_bands().unwrap(), [8, 12, 12]);
        assert_eq!((c.k, c.delta, c.omega, c.lora_rank), (2, 12, 0.6, 16));
    }

    #[test]
    fn small_heads_split() {
        let c = ModelConfig {
            dim: 32,
            heads: 2,
            ..Default::default()
        };
        assert_eq!(c.rope_bands().unwrap(), [4, 6, 6]);
        let bad = ModelConfig {
            dim: 32,
            heads: 4,
            ..Default::default()
        };
        assert!(matches!(bad.rope_bands(), Err(Error::Config { .. })));
    }

    #[test]
    fn two_frame_modes_drop_transitions() {
        let c = ModelConfig {
            mode: Mode::TwoFrameI2v,
            ..Default::default()
        };
        assert_eq!(c.latent_frames(), 2);
        assert!(!Mode::TwoFrameT2v.replaces_condition());
        assert_eq!("two_frame_t2v".parse::<Mode>().unwrap(), Mode::TwoFrameT2v);
    }
}
