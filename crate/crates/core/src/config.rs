//! Run configuration: model hyperparameters plus training, sampling, data
//! and evaluation settings.
//!
//! Files are JSON objects with flat dotted keys such as `"model.k": 2`.
//! Nested objects are accepted and flattened. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::dit::{Mode, ModelConfig};
use crate::error::{Error, Result};
use crate::mixup::TransitionKind;
use crate::tasks::TaskKind;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub lora_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    pub log_interval: usize,
    /// Frame skip used while pretraining on ordinary clips.
    pub pretrain_delta: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            lora_lr: 1e-3,
            weight_decay: 0.0,
            batch_size: 8,
            pretrain_steps: 2000,
            finetune_steps: 2000,
            log_interval: 10,
            pretrain_delta: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DataConfig {
    pub task: TaskKind,
    pub transition: TransitionKind,
    /// Samples written by `datagen`.
    pub count: usize,
    /// Held-out samples scored by `eval`.
    pub eval_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Colorize,
            transition: TransitionKind::Fade,
            count: 64,
            eval_count: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalConfig {
    /// `"none"`, `"mock"`, or an HTTP endpoint.
    pub vl: String,
    pub vl_timeout_ms: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            vl: "none".into(),
            vl_timeout_ms: 30_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sample_steps: usize,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sample_steps: crate::flow::DEFAULT_STEPS,
            data: DataConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| Error::config(key, format!("expected a non-negative integer, got {v}")))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::config(key, format!("expected a number, got {v}")))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str()
        .ok_or_else(|| Error::config(key, format!("expected a string, got {v}")))
}

fn parse_with_key<T: std::str::FromStr>(key: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::config(key, format!("invalid value {s:?}")))
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        if text.trim().is_empty() {
            return Ok(cfg);
        }
        let v: Value = serde_json::from_str(text).map_err(|e| Error::config("<file>", format!("invalid JSON: {e}")))?;
        if !v.is_object() {
            return Err(Error::config("<file>", "top level must be an object"));
        }
        let mut pairs = Vec::new();
        flatten("", &v, &mut pairs);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Sets one dotted key from a JSON value.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let m = &mut self.model;
        match key {
            "seed" => self.seed = v.as_u64().ok_or_else(|| Error::config(key, "expected an integer"))?,
            "out" => self.out = PathBuf::from(as_str(key, v)?),
            "model.image_size" => m.image_size = as_usize(key, v)?,
            "model.channels" => m.channels = as_usize(key, v)?,
            "model.spatial_factor" => m.spatial_factor = as_usize(key, v)?,
            "model.dim" => m.dim = as_usize(key, v)?,
            "model.heads" => m.heads = as_usize(key, v)?,
            "model.layers" => m.layers = as_usize(key, v)?,
            "model.mlp_hidden" => m.mlp_hidden = as_usize(key, v)?,
            "model.vocab_size" => m.vocab_size = as_usize(key, v)?,
            "model.max_prompt_len" => m.max_prompt_len = as_usize(key, v)?,
            "model.k" => m.k = as_usize(key, v)?,
            "model.delta" => m.delta = as_usize(key, v)?,
            "model.omega" => m.omega = as_f64(key, v)?,
            "model.gamma" => m.gamma = as_f64(key, v)?,
            "model.lora_rank" => m.lora_rank = as_usize(key, v)?,
            "model.lora_scales.condition_image" => m.lora_scales.condition_image = as_f64(key, v)?,
            "model.lora_scales.generated" => m.lora_scales.generated = as_f64(key, v)?,
            "model.lora_scales.target_prompt" => m.lora_scales.target_prompt = as_f64(key, v)?,
            "model.lora_scales.condition_prompt" => m.lora_scales.condition_prompt = as_f64(key, v)?,
            "model.mode" => m.mode = parse_with_key::<Mode>(key, as_str(key, v)?)?,
            "model.rope_base" => m.rope_base = as_f64(key, v)?,
            "train.lr" => self.train.lr = as_f64(key, v)?,
            "train.lora_lr" => self.train.lora_lr = as_f64(key, v)?,
            "train.weight_decay" => self.train.weight_decay = as_f64(key, v)?,
            "train.batch_size" => self.train.batch_size = as_usize(key, v)?,
            "train.pretrain_steps" => self.train.pretrain_steps = as_usize(key, v)?,
            "train.finetune_steps" => self.train.finetune_steps = as_usize(key, v)?,
            "train.log_interval" => self.train.log_interval = as_usize(key, v)?,
            "train.pretrain_delta" => self.train.pretrain_delta = as_usize(key, v)?,
            "sample.steps" => self.sample_steps = as_usize(key, v)?,
            "data.task" => self.data.task = parse_with_key(key, as_str(key, v)?)?,
            "data.transition" => self.data.transition = parse_with_key(key, as_str(key, v)?)?,
            "data.count" => self.data.count = as_usize(key, v)?,
            "data.eval_count" => self.data.eval_count = as_usize(key, v)?,
            "eval.vl" => self.eval.vl = as_str(key, v)?.to_string(),
            "eval.vl_timeout_ms" => {
                self.eval.vl_timeout_ms = v.as_u64().ok_or_else(|| Error::config(key, "expected an integer"))?
            }
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Transition-frame count `4K` → `K`.
    pub fn set_transition_frames(&mut self, frames: usize) -> Result<()> {
        if frames == 0 || !frames.is_multiple_of(4) {
            return Err(Error::config(
                "--frames",
                format!("{frames} is not a positive multiple of 4"),
            ));
        }
        self.model.k = frames / 4;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let positive = [
            ("train.batch_size", self.train.batch_size),
            ("train.log_interval", self.train.log_interval),
            ("train.pretrain_delta", self.train.pretrain_delta),
            ("sample.steps", self.sample_steps),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be >= 1"));
            }
        }
        Ok(())
    }

    /// Flat key/value view, the inverse of [`RunConfig::from_json_str`].
    pub fn to_flat_json(&self) -> Value {
        let mut nested = serde_json::to_value(self).expect("serializable");
        let obj = nested.as_object_mut().unwrap();
        let steps = obj.remove("sample_steps").unwrap();
        obj.insert("sample".into(), serde_json::json!({ "steps": steps }));
        let mut pairs = Vec::new();
        flatten("", &nested, &mut pairs);
        Value::Object(pairs.into_iter().collect())
    }
}
