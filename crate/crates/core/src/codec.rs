//! Fixed linear stand-in for a causal video autoencoder.
//!
//! Encoding average-pools non-overlapping `factor × factor` patches per RGB
//! channel and lifts the 3 pooled channels into `C` latent channels through a
//! seed-fixed matrix with orthonormal columns. Decoding projects back and
//! upsamples by pixel replication, so `decode(encode(x))` is exactly the
//! patch-mean image of `x`.
//!
//! Video grouping is causal 4:1: latent 0 is pixel frame 0, latent `n ≥ 1`
//! averages pixel frames `4n-3..=4n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mixup::{FrameSequence, MixupSchedule};
use crate::numerics::{Rng, Tensor};

pub const DEFAULT_CHANNELS: usize = 16;
pub const DEFAULT_SPATIAL_FACTOR: usize = 4;
const LIFT_SEED: u64 = 0x5EED_C0DE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameRole {
    Condition,
    Transition,
    Target,
}

/// Stack of latent frames, each `[C, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVideo {
    pub frames: Vec<Tensor<f32>>,
    pub roles: Vec<FrameRole>,
}

impl LatentVideo {
    pub fn new(frames: Vec<Tensor<f32>>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::Layout(format!(
                "latent video needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let shape = frames[0].shape().to_vec();
        if shape.len() != 3 || frames.iter().any(|f| f.shape() != shape.as_slice()) {
            return Err(Error::dim("latent frames must share one [C, h, w] shape"));
        }
        let n = frames.len();
        let roles = (0..n)
            .map(|i| match i {
                0 => FrameRole::Condition,
                i if i == n - 1 => FrameRole::Target,
                _ => FrameRole::Transition,
            })
            .collect();
        Ok(Self { frames, roles })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Number of noisy transition frames `K` (total frames minus 2).
    pub fn k(&self) -> usize {
        self.frames.len() - 2
    }

    pub fn channels(&self) -> usize {
        self.frames[0].shape()[0]
    }

    /// Latent grid `(h, w)`.
    pub fn grid(&self) -> (usize, usize) {
        let s = self.frames[0].shape();
        (s[1], s[2])
    }

    pub fn condition(&self) -> &Tensor<f32> {
        &self.frames[0]
    }

    pub fn target(&self) -> &Tensor<f32> {
        self.frames.last().unwrap()
    }

    /// Token matrix `[frames·h·w, C]`: frame-major, then row, then column.
    pub fn to_tokens(&self) -> Tensor<f32> {
        let c = self.channels();
        let (h, w) = self.grid();
        let mut data = Vec::with_capacity(self.len() * h * w * c);
        for f in &self.frames {
            let d = f.data();
            for p in 0..h * w {
                data.extend((0..c).map(|ch| d[ch * h * w + p]));
            }
        }
        Tensor::from_vec(&[self.len() * h * w, c], data).unwrap()
    }

    /// Inverse of [`LatentVideo::to_tokens`].
    pub fn from_tokens(tokens: &Tensor<f32>, frames: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if tokens.shape() != [frames * h * w, c] {
            return Err(Error::dim(format!(
                "token matrix {:?} does not hold {frames} frames of [{c}, {h}, {w}]",
                tokens.shape()
            )));
        }
        let mut out = Vec::with_capacity(frames);
        for n in 0..frames {
            let mut d = vec![0.0f32; c * h * w];
            for p in 0..h * w {
                let row = tokens.row(n * h * w + p);
                for ch in 0..c {
                    d[ch * h * w + p] = row[ch];
                }
            }
            out.push(Tensor::from_vec(&[c, h, w], d)?);
        }
        Self::new(out)
    }
}

#[derive(Clone, Debug)]
pub struct LatentCodec {
    channels: usize,
    factor: usize,
    /// `C × 3`, orthonormal columns.
    lift: Vec<f64>,
}

impl Default for LatentCodec {
    fn default() -> Self {
        Self::new(DEFAULT_CHANNELS, DEFAULT_SPATIAL_FACTOR).unwrap()
    }
}

impl LatentCodec {
    pub fn new(channels: usize, factor: usize) -> Result<Self> {
        if channels < 3 {
            return Err(Error::config("model.channels", "at least 3 latent channels are needed"));
        }
        if factor == 0 {
            return Err(Error::config("model.spatial_factor", "must be >= 1"));
        }
        Ok(Self {
            channels,
            factor,
            lift: orthonormal_lift(channels),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn latent_grid(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if !height.is_multiple_of(self.factor) || !width.is_multiple_of(self.factor) || height == 0 || width == 0 {
            return Err(Error::dim(format!(
                "{height}x{width} is not divisible by spatial factor {}",
                self.factor
            )));
        }
        Ok((height / self.factor, width / self.factor))
    }

    pub fn encode_single(&self, img: &Image) -> Result<Tensor<f32>> {
        let (h, w) = self.latent_grid(img.height(), img.width())?;
        let f = self.factor;
        let inv_area = 1.0 / (f * f) as f64;
        let c = self.channels;
        let mut out = vec![0.0f32; c * h * w];
        for i in 0..h {
            for j in 0..w {
                let mut pooled = [0.0f64; 3];
                for y in i * f..(i + 1) * f {
                    for x in j * f..(j + 1) * f {
                        let px = img.pixel(y, x);
                        for k in 0..3 {
                            pooled[k] += px[k] as f64;
                        }
                    }
                }
                pooled.iter_mut().for_each(|p| *p *= inv_area);
                for ch in 0..c {
                    let l = &self.lift[ch * 3..ch * 3 + 3];
                    out[ch * h * w + i * w + j] = (l[0] * pooled[0] + l[1] * pooled[1] + l[2] * pooled[2]) as f32;
                }
            }
        }
        Tensor::from_vec(&[c, h, w], out)
    }

    pub fn decode_latent(&self, frame: &Tensor<f32>) -> Result<Image> {
        let [c, h, w] = frame.shape() else {
            return Err(Error::dim(format!(
                "latent frame must be [C, h, w], got {:?}",
                frame.shape()
            )));
        };
        let (c, h, w) = (*c, *h, *w);
        if c != self.channels {
            return Err(Error::dim(format!(
                "latent has {c} channels, codec expects {}",
                self.channels
            )));
        }
        let f = self.factor;
        let d = frame.data();
        let mut pooled = vec![[0.0f32; 3]; h * w];
        for (p, rgb) in pooled.iter_mut().enumerate() {
            for (k, out) in rgb.iter_mut().enumerate() {
                let v: f64 = (0..c).map(|ch| self.lift[ch * 3 + k] * d[ch * h * w + p] as f64).sum();
                *out = v as f32;
            }
        }
        Ok(Image::from_fn(h * f, w * f, |y, x| pooled[(y / f) * w + x / f]))
    }

    /// Mean of per-frame encodings.
    fn encode_group(&self, frames: &[Image]) -> Result<Tensor<f32>> {
        let mut acc: Option<Tensor<f32>> = None;
        for fr in frames {
            let e = self.encode_single(fr)?;
            match &mut acc {
                None => acc = Some(e),
                Some(a) => a.add_assign(&e),
            }
        }
        let mut acc = acc.ok_or_else(|| Error::Layout("empty frame group".into()))?;
        let inv = 1.0 / frames.len() as f32;
        acc.data_mut().iter_mut().for_each(|v| *v *= inv);
        Ok(acc)
    }

    /// Encodes a transition sequence into `K+2` latent frames. The last frame
    /// is the target image encoded on its own.
    pub fn encode_transition(&self, seq: &FrameSequence, schedule: &MixupSchedule) -> Result<LatentVideo> {
        if seq.len() != schedule.frame_count() {
            return Err(Error::Layout(format!(
                "sequence has {} frames, schedule with K={} expects {}",
                seq.len(),
                schedule.k(),
                schedule.frame_count()
            )));
        }
        let k = schedule.k();
        let mut frames = Vec::with_capacity(k + 2);
        frames.push(self.encode_single(seq.first())?);
        for g in 0..k {
            frames.push(self.encode_group(&seq.frames[4 * g + 1..=4 * g + 4])?);
        }
        frames.push(self.encode_single(seq.last())?);
        LatentVideo::new(frames)
    }

    /// Two-frame latent video: condition and target, no transition frames.
    pub fn encode_pair(&self, cond: &Image, target: &Image) -> Result<LatentVideo> {
        LatentVideo::new(vec![self.encode_single(cond)?, self.encode_single(target)?])
    }

    /// Causal grouping of a `4T+1`-frame clip into `T+1` latents.
    pub fn encode_video(&self, frames: &[Image]) -> Result<LatentVideo> {
        if frames.len() < 5 || !(frames.len() - 1).is_multiple_of(4) {
            return Err(Error::Layout(format!(
                "video needs 4T+1 frames with T >= 1, got {}",
                frames.len()
            )));
        }
        let t = (frames.len() - 1) / 4;
        let mut out = vec![self.encode_single(&frames[0])?];
        for n in 1..=t {
            out.push(self.encode_group(&frames[4 * n - 3..=4 * n])?);
        }
        LatentVideo::new(out)
    }

    pub fn roundtrip_error(&self, img: &Image) -> Result<f64> {
        let back = self.decode_latent(&self.encode_single(img)?)?;
        let n = img.data().len() as f64;
        Ok(img
            .data()
            .iter()
            .zip(back.data())
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            / n)
    }
}

/// Gram–Schmidt on a seeded Gaussian `C × 3` matrix.
fn orthonormal_lift(channels: usize) -> Vec<f64> {
    let mut rng = Rng::new(LIFT_SEED, channels as u64);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(3);
    while cols.len() < 3 {
        let mut v: Vec<f64> = (0..channels).map(|_| rng.normal()).collect();
        for c in &cols {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|a| *a /= norm);
            cols.push(v);
        }
    }
    let mut lift = vec![0.0; channels * 3];
    for (k, c) in cols.iter().enumerate() {
        for ch in 0..channels {
            lift[ch * 3 + k] = c[ch];
        }
    }
    lift
}
