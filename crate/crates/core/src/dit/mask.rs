//! Segment attention mask and the inference-time prompt offset.

use crate::numerics::{Scalar, Tensor, BLOCKED};

use super::layout::{Segment, TokenLayout};

/// Whether queries in `query` may not attend to keys in `key`.
///
/// Blocked pairs: `C_I×T_I`, `T_I×C_P`, `T_P×C_I`, `T_P×C_P`, `C_P×T_I`.
pub fn is_blocked_pair(query: Segment, key: Segment) -> bool {
    use Segment::*;
    matches!(
        (query, key),
        (ConditionImage, Generated)
            | (Generated, ConditionPrompt)
            | (TargetPrompt, ConditionImage)
            | (TargetPrompt, ConditionPrompt)
            | (ConditionPrompt, Generated)
    )
}

/// Additive `[len × len]` mask: [`BLOCKED`] on blocked pairs, 0 elsewhere.
pub fn build_attention_mask<T: Scalar>(layout: &TokenLayout) -> Tensor<T> {
    let n = layout.len();
    let segs = layout.segments();
    let blocked = T::lit(BLOCKED);
    let mut data = vec![T::zero(); n * n];
    for (p, &sp) in segs.iter().enumerate() {
        for (q, &sq) in segs.iter().enumerate() {
            if is_blocked_pair(sp, sq) {
                data[p * n + q] = blocked;
            }
        }
    }
    Tensor::from_vec(&[n, n], data).expect("square mask")
}

/// Offset matrix that adds `omega · mean(|block|)` to the `T_I × T_P` block
/// of one head's logits, zero elsewhere. `None` when there is nothing to add.
pub fn inference_offset<T: Scalar>(scores: &Tensor<T>, layout: &TokenLayout, omega: f64) -> Option<Tensor<T>> {
    let rows = layout.span(Segment::Generated);
    let cols = layout.span(Segment::TargetPrompt);
    if omega == 0.0 || rows.is_empty() || cols.is_empty() {
        return None;
    }
    let n = scores.cols();
    let mut acc = 0.0f64;
    for r in rows.clone() {
        for c in cols.clone() {
            acc += scores.data()[r * n + c].abs().to_f64().unwrap();
        }
    }
    let mean = acc / (rows.len() * cols.len()) as f64;
    let shift = T::lit(omega * mean);
    let mut out = Tensor::zeros(scores.shape());
    for r in rows {
        for c in cols.clone() {
            out.data_mut()[r * n + c] = shift;
        }
    }
    Some(out)
}

/// `scores` with the `T_I × T_P` block raised by `omega · mean(|block|)`.
pub fn apply_inference_offset<T: Scalar>(scores: &Tensor<T>, layout: &TokenLayout, omega: f64) -> Tensor<T> {
    match inference_offset(scores, layout, omega) {
        None => scores.clone(),
        Some(off) => {
            let mut out = scores.clone();
            out.add_assign(&off);
            out
        }
    }
}
