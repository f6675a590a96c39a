//! Shot-transition videos built from a (condition, target) image pair.
//!
//! Intermediate frames blend the two endpoints in gamma space with a
//! smoothstep weight. The pixel-frame grid is `α_m = m / (4K+1)` for
//! `m = 0..=4K+4`, clipped to 1, so that pixel frames `4k+1..=4k+4` form
//! latent group `k` and share the indices used by [`loss_weight`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{quantize, Image};

pub const DEFAULT_GAMMA: f64 = 2.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionKind {
    Fade,
    Slide,
}

impl std::str::FromStr for TransitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fade" => Ok(Self::Fade),
            "slide" => Ok(Self::Slide),
            other => Err(Error::config("transition", format!("unknown transition {other:?}"))),
        }
    }
}

impl std::fmt::Display for TransitionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fade => "fade",
            Self::Slide => "slide",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixupSchedule {
    k: usize,
    gamma: f64,
}

impl MixupSchedule {
    pub fn new(k: usize, gamma: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("transition schedule needs K >= 1".into()));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self { k, gamma })
    }

    pub fn with_k(k: usize) -> Result<Self> {
        Self::new(k, DEFAULT_GAMMA)
    }

    /// Number of noisy transition latent frames.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `4K + 5` pixel frames.
    pub fn frame_count(&self) -> usize {
        4 * self.k + 5
    }

    pub fn alphas(&self) -> Vec<f64> {
        let denom = (4 * self.k + 1) as f64;
        (0..self.frame_count()).map(|m| (m as f64 / denom).min(1.0)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Image>,
    pub alphas: Vec<f64>,
    pub kind: TransitionKind,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn first(&self) -> &Image {
        &self.frames[0]
    }

    pub fn last(&self) -> &Image {
        self.frames.last().expect("non-empty sequence")
    }
}

/// `β = α²(3 − 2α)`. Arguments above 1 are evaluated as-is.
pub fn smoothstep_beta(alpha: f64) -> Result<f64> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::Domain(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(alpha * alpha * (3.0 - 2.0 * alpha))
}

/// Gamma-space blend of two frames with smoothstep weight `β(min(α, 1))`.
///
/// `β = 0` and `β = 1` return exact copies of the corresponding endpoint.
pub fn mixup_frame(f0: &Image, f1: &Image, alpha: f64, gamma: f64) -> Result<Image> {
    f0.same_shape(f1)?;
    let beta = smoothstep_beta(alpha.min(1.0))?;
    if beta == 0.0 {
        return Ok(f0.clone());
    }
    if beta == 1.0 {
        return Ok(f1.clone());
    }
    let data = f0
        .data()
        .iter()
        .zip(f1.data())
        .map(|(&a, &b)| blend_pixel(a as f64, b as f64, beta, gamma) as f32)
        .collect();
    Image::new(f0.height(), f0.width(), data)
}

fn blend_pixel(a: f64, b: f64, beta: f64, gamma: f64) -> f64 {
    let a = a.clamp(0.0, 1.0).powf(gamma);
    let b = b.clamp(0.0, 1.0).powf(gamma);
    ((1.0 - beta) * a + beta * b).powf(1.0 / gamma).clamp(0.0, 1.0)
}

pub fn build_fade_sequence(cond: &Image, target: &Image, schedule: &MixupSchedule) -> Result<FrameSequence> {
    cond.same_shape(target)?;
    let alphas = schedule.alphas();
    let frames = alphas
        .iter()
        .map(|&a| mixup_frame(cond, target, a, schedule.gamma()))
        .collect::<Result<_>>()?;
    Ok(FrameSequence {
        frames,
        alphas,
        kind: TransitionKind::Fade,
    })
}

/// Condition slides out to the left by `round(β·W)` columns, uncovering the
/// target underneath.
pub fn slide_frame(cond: &Image, target: &Image, alpha: f64) -> Result<Image> {
    cond.same_shape(target)?;
    let beta = smoothstep_beta(alpha.min(1.0))?;
    let w = cond.width();
    let shift = ((beta * w as f64).round() as usize).min(w);
    Ok(Image::from_fn(cond.height(), w, |y, x| {
        if x + shift < w {
            cond.pixel(y, x + shift)
        } else {
            target.pixel(y, x)
        }
    }))
}

pub fn build_slide_sequence(cond: &Image, target: &Image, schedule: &MixupSchedule) -> Result<FrameSequence> {
    cond.same_shape(target)?;
    let alphas = schedule.alphas();
    let frames = alphas
        .iter()
        .map(|&a| slide_frame(cond, target, a))
        .collect::<Result<_>>()?;
    Ok(FrameSequence {
        frames,
        alphas,
        kind: TransitionKind::Slide,
    })
}

pub fn build_sequence(
    kind: TransitionKind,
    cond: &Image,
    target: &Image,
    schedule: &MixupSchedule,
) -> Result<FrameSequence> {
    match kind {
        TransitionKind::Fade => build_fade_sequence(cond, target, schedule),
        TransitionKind::Slide => build_slide_sequence(cond, target, schedule),
    }
}

/// Loss weight of noisy latent frame `k`:
/// `w(k) = ¼ Σᵢ₌₁⁴ β((4k+i)/(4K+1))²`.
pub fn loss_weight(k: usize, big_k: usize) -> Result<f64> {
    if k > big_k {
        return Err(Error::Domain(format!("latent index {k} outside 0..={big_k}")));
    }
    let denom = (4 * big_k + 1) as f64;
    let mut acc = 0.0;
    for i in 1..=4 {
        let s = (4 * k + i) as f64 / denom;
        let b = s * s * (3.0 - 2.0 * s);
        acc += b * b;
    }
    Ok(acc / 4.0)
}

/// `v' = 128 + round(v · 127 / 255)`: black lifts to mid-gray, white stays.
pub fn normalize_dark_value(v: u8) -> u8 {
    128 + ((v as f64) * 127.0 / 255.0).round() as u8
}

pub fn normalize_dark_rgb8(pixels: &[u8]) -> Vec<u8> {
    pixels.iter().map(|&v| normalize_dark_value(v)).collect()
}

/// Applies [`normalize_dark_value`] to the 8-bit quantization of `img`.
pub fn normalize_dark_colors(img: &Image) -> Image {
    let bytes: Vec<u8> = img.data().iter().map(|&v| normalize_dark_value(quantize(v))).collect();
    Image::from_rgb8(img.height(), img.width(), &bytes).expect("same size")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(v: f32) -> Image {
        Image::filled(4, 4, [v; 3])
    }

    #[test]
    fn beta_examples() {
        assert_eq!(smoothstep_beta(0.0).unwrap(), 0.0);
        assert_eq!(smoothstep_beta(1.0).unwrap(), 1.0);
        assert_eq!(smoothstep_beta(0.25).unwrap(), 0.15625);
        assert!(matches!(smoothstep_beta(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn mixup_endpoints_are_copies() {
        let a = Image::from_fn(4, 4, |y, x| [0.1 * y as f32, 0.05 * x as f32, 0.3]);
        let b = solid(0.9);
        assert_eq!(mixup_frame(&a, &b, 0.0, 2.2).unwrap(), a);
        assert_eq!(mixup_frame(&a, &b, 1.0, 2.2).unwrap(), b);
        assert_eq!(mixup_frame(&a, &b, 1.3, 2.2).unwrap(), b);
    }

    #[test]
    fn mixup_midpoint_value() {
        let out = mixup_frame(&solid(0.0), &solid(1.0), 0.5, 2.2).unwrap();
        assert!((out.data()[0] as f64 - 0.5f64.powf(1.0 / 2.2)).abs() < 1e-6);
    }

    #[test]
    fn mixup_rejects_mismatched_sizes() {
        let err = mixup_frame(&solid(0.0), &Image::filled(4, 8, [0.0; 3]), 0.5, 2.2);
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn fade_grid_for_k2() {
        let s = MixupSchedule::with_k(2).unwrap();
        let alphas = s.alphas();
        assert_eq!(alphas.len(), 13);
        for (m, a) in alphas.iter().enumerate() {
            let expect = if m <= 9 { m as f64 / 9.0 } else { 1.0 };
            assert_eq!(*a, expect);
        }
        let c = solid(0.2);
        let t = solid(0.7);
        let seq = build_fade_sequence(&c, &t, &s).unwrap();
        assert_eq!(seq.len(), 13);
        assert_eq!(seq.first(), &c);
        assert_eq!(seq.last(), &t);
        assert_eq!(seq.kind, TransitionKind::Fade);
    }

    #[test]
    fn slide_on_8x8_halfway() {
        let cond = Image::from_fn(8, 8, |_, x| [x as f32 / 8.0, 0.0, 0.0]);
        let target = Image::from_fn(8, 8, |_, x| [0.0, x as f32 / 8.0, 1.0]);
        // β(0.5) = 0.5 → shift of 4 columns.
        let f = slide_frame(&cond, &target, 0.5).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let expect = if x < 4 {
                    cond.pixel(y, x + 4)
                } else {
                    target.pixel(y, x)
                };
                assert_eq!(f.pixel(y, x), expect);
            }
        }
        assert_eq!(slide_frame(&cond, &target, 0.0).unwrap(), cond);
        assert_eq!(slide_frame(&cond, &target, 1.0).unwrap(), target);
    }

    #[test]
    fn weight_examples_k2() {
        let w: Vec<f64> = (0..=2).map(|k| loss_weight(k, 2).unwrap()).collect();
        assert!((w[0] - 0.0645).abs() < 1e-4);
        assert!((w[1] - 0.6462).abs() < 1e-4);
        assert!((w[2] - 0.7405).abs() < 1e-4);
        assert!(matches!(loss_weight(3, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn dark_normalization_examples() {
        assert_eq!(normalize_dark_value(0), 128);
        assert_eq!(normalize_dark_value(255), 255);
        assert_eq!(normalize_dark_value(127), 191);
        let img = normalize_dark_colors(&solid(0.0));
        assert_eq!(img.to_rgb8()[..3], [128, 128, 128]);
    }

    #[test]
    fn schedule_validation() {
        assert!(MixupSchedule::new(0, 2.2).is_err());
        assert!(MixupSchedule::new(2, 0.0).is_err());
    }
}
