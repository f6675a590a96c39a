//! Low-rank adapters with a per-segment scale.
//!
//! A linear layer `y = x·W` (weights stored `[d_in × d_out]`) gains
//! `scale(segment) · B·A·x` with `A: [r × d_in]`, `B: [d_out × r]`.
//! `B` starts at zero, so a fresh adapter leaves the layer unchanged.

use crate::error::{Error, Result};
use crate::numerics::{matmul, Rng, Scalar, Tensor};

use super::config::SegmentScales;
use super::layout::Segment;

impl SegmentScales {
    pub fn get(&self, s: Segment) -> f64 {
        match s {
            Segment::ConditionImage => self.condition_image,
            Segment::Generated => self.generated,
            Segment::TargetPrompt => self.target_prompt,
            Segment::ConditionPrompt => self.condition_prompt,
        }
    }

    /// Per-token scale column for a segment assignment.
    pub fn column<T: Scalar>(&self, segments: &[Segment]) -> Tensor<T> {
        let data = segments.iter().map(|&s| T::lit(self.get(s))).collect();
        Tensor::from_vec(&[segments.len()], data).unwrap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter<T: Scalar = f32> {
    pub a: Tensor<T>,
    pub b: Tensor<T>,
    pub scales: SegmentScales,
}

impl<T: Scalar> LoraAdapter<T> {
    /// Gaussian `A` with std `1/sqrt(d_in)`, zero `B`.
    pub fn new(d_in: usize, d_out: usize, rank: usize, scales: SegmentScales, rng: &mut Rng) -> Self {
        let std = 1.0 / (d_in as f64).sqrt();
        let a = rng.gaussian::<T>(&[rank, d_in]).map(|v| v * T::lit(std));
        Self {
            a,
            b: Tensor::zeros(&[d_out, rank]),
            scales,
        }
    }

    pub fn rank(&self) -> usize {
        self.a.shape()[0]
    }
}

/// `x·W + scale(segment)·(x·Aᵀ·Bᵀ)` row by row.
pub fn lora_apply<T: Scalar>(
    weight: &Tensor<T>,
    adapter: &LoraAdapter<T>,
    x: &Tensor<T>,
    segments: &[Segment],
) -> Result<Tensor<T>> {
    let (r, d_in) = (adapter.a.shape()[0], adapter.a.shape()[1]);
    let (d_out, rb) = (adapter.b.shape()[0], adapter.b.shape()[1]);
    if r != rb {
        return Err(Error::config(
            "model.lora_rank",
            format!("adapter A has rank {r}, B has rank {rb}"),
        ));
    }
    if weight.shape() != [d_in, d_out] {
        return Err(Error::dim(format!(
            "adapter [{d_in}→{d_out}] does not fit weight {:?}",
            weight.shape()
        )));
    }
    if segments.len() != x.rows() {
        return Err(Error::dim("one segment per input row is required"));
    }
    let mut out = matmul(x, weight)?;
    if r == 0 {
        return Ok(out);
    }
    let at = transpose(&adapter.a);
    let bt = transpose(&adapter.b);
    let delta = matmul(&matmul(x, &at)?, &bt)?;
    for (row, &seg) in segments.iter().enumerate() {
        let s = T::lit(adapter.scales.get(seg));
        if s == T::zero() {
            continue;
        }
        for j in 0..d_out {
            let v = &mut out.data_mut()[row * d_out + j];
            *v = *v + s * delta.at(row, j);
        }
    }
    Ok(out)
}

fn transpose<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (t.rows(), t.cols());
    let mut data = Vec::with_capacity(r * c);
    for j in 0..c {
        for i in 0..r {
            data.push(t.at(i, j));
        }
    }
    Tensor::from_vec(&[c, r], data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones_scales() -> SegmentScales {
        SegmentScales {
            condition_image: 1.0,
            generated: 1.0,
            target_prompt: 1.0,
            condition_prompt: 1.0,
        }
    }

    #[test]
    fn fresh_adapter_matches_base() {
        let mut rng = Rng::new(0, 0);
        let w = rng.gaussian::<f32>(&[4, 3]);
        let x = rng.gaussian::<f32>(&[5, 4]);
        let ad = LoraAdapter::new(4, 3, 2, ones_scales(), &mut rng);
        let segs = [Segment::ConditionImage; 5];
        assert_eq!(lora_apply(&w, &ad, &x, &segs).unwrap(), matmul(&x, &w).unwrap());
    }

    #[test]
    fn generated_tokens_keep_base_output() {
        let mut rng = Rng::new(1, 0);
        let w = rng.gaussian::<f32>(&[4, 3]);
        let x = rng.gaussian::<f32>(&[2, 4]);
        let mut ad = LoraAdapter::new(4, 3, 2, SegmentScales::default(), &mut rng);
        ad.b = rng.gaussian(&[3, 2]);
        let segs = [Segment::Generated, Segment::ConditionImage];
        let out = lora_apply(&w, &ad, &x, &segs).unwrap();
        let base = matmul(&x, &w).unwrap();
        assert_eq!(out.row(0), base.row(0));
        assert_ne!(out.row(1), base.row(1));
    }

    #[test]
    fn rank_one_hand_example() {
        let w = Tensor::<f64>::from_rows(&[&[2.0, 0.5], &[0.0, 1.0]]);
        let ad = LoraAdapter {
            a: Tensor::from_rows(&[&[1.0, 0.0]]),
            b: Tensor::from_rows(&[&[1.0], &[0.0]]),
            scales: ones_scales(),
        };
        let x = Tensor::from_rows(&[&[1.0, 0.0]]);
        let out = lora_apply(&w, &ad, &x, &[Segment::TargetPrompt]).unwrap();
        assert_eq!(out.data(), &[3.0, 0.5]);
    }

    #[test]
    fn rank_mismatch_is_a_config_error() {
        let w = Tensor::<f64>::zeros(&[2, 2]);
        let ad = LoraAdapter {
            a: Tensor::zeros(&[1, 2]),
            b: Tensor::zeros(&[2, 2]),
            scales: ones_scales(),
        };
        let x = Tensor::zeros(&[1, 2]);
        assert!(matches!(
            lora_apply(&w, &ad, &x, &[Segment::Generated]),
            Err(Error::Config { .. })
        ));
    }
}
