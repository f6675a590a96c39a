//! Forward kernels shared by the tape and the plain tensor functions.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Additive mask value for blocked attention pairs.
///
/// Finite so masked logits stay representable; large enough that a blocked
/// entry's probability underflows to zero.
pub const BLOCKED: f64 = -1e9;

/// Epsilon added to the mean square before the root in `rms_norm`.
pub const RMS_EPS: f64 = 1e-6;

pub(crate) fn is_blocked<T: Scalar>(m: T) -> bool {
    m <= T::lit(BLOCKED / 2.0)
}

fn check_2d<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::dim(format!("{what}: expected rank-2 tensor, got {s:?}"))),
    }
}

/// `a [m×k] · b [k×n]`, or `a · bᵀ` with `b [n×k]` when `trans_b`.
pub(crate) fn matmul_fwd<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, trans_b: bool) -> Result<Tensor<T>> {
    let (m, k) = check_2d(a, "matmul lhs")?;
    let (br, bc) = check_2d(b, "matmul rhs")?;
    let (kb, n, b_strides) = if trans_b { (bc, br, (1, bc)) } else { (br, bc, (bc, 1)) };
    if k != kb {
        return Err(Error::dim(format!(
            "matmul inner dimensions disagree: {:?} x {:?}{}",
            a.shape(),
            b.shape(),
            if trans_b { "ᵀ" } else { "" }
        )));
    }
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, a.data(), (k, 1), b.data(), b_strides, &mut out, false);
    Tensor::from_vec(&[m, n], out)
}

/// Row-wise softmax of `scores + mask`, writing into a fresh tensor.
pub(crate) fn masked_softmax_fwd<T: Scalar>(scores: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (m, n) = check_2d(scores, "softmax scores")?;
    if let Some(mask) = mask {
        if mask.shape() != scores.shape() {
            return Err(Error::dim(format!(
                "mask shape {:?} differs from scores {:?}",
                mask.shape(),
                scores.shape()
            )));
        }
    }
    let mut out = vec![T::zero(); m * n];
    for r in 0..m {
        let s = scores.row(r);
        let row = &mut out[r * n..(r + 1) * n];
        match mask {
            Some(mask) => {
                let mr = mask.row(r);
                if n > 0 && mr.iter().all(|&x| is_blocked(x)) {
                    return Err(Error::DegenerateRow { row: r });
                }
                for j in 0..n {
                    row[j] = s[j] + mr[j];
                }
            }
            None => row.copy_from_slice(s),
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total = total + *x;
        }
        for x in row.iter_mut() {
            *x = *x / total;
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// Returns the normalized output and the per-row reciprocal RMS.
pub(crate) fn rms_norm_fwd<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
    let d = x.cols();
    if gain.len() != d {
        return Err(Error::dim(format!(
            "rms_norm gain has {} entries, last dimension is {d}",
            gain.len()
        )));
    }
    let rows = x.len().checked_div(d).unwrap_or(0);
    let g = gain.data();
    let mut inv = Vec::with_capacity(rows);
    let mut out = Vec::with_capacity(x.len());
    let eps = T::lit(RMS_EPS);
    let dn = T::from_usize(d).unwrap();
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let ms = row.iter().map(|&v| v * v).sum::<T>() / dn;
        let ir = T::one() / (ms + eps).sqrt();
        inv.push(ir);
        out.extend(row.iter().zip(g).map(|(&v, &gj)| v * ir * gj));
    }
    Ok((Tensor::from_vec(x.shape(), out)?, inv))
}

/// Rotates consecutive element pairs `(2p, 2p+1)` of each row by the angle
/// whose cosine/sine sit at `[row, p]` in the tables.
pub(crate) fn rotate_pairs_fwd<T: Scalar>(x: &Tensor<T>, cos: &[T], sin: &[T], inverse: bool) -> Tensor<T> {
    let d = x.cols();
    let half = d / 2;
    let mut out = x.clone();
    let rows = x.rows();
    for r in 0..rows {
        let row = &mut out.data_mut()[r * d..(r + 1) * d];
        for p in 0..half {
            let c = cos[r * half + p];
            let s = if inverse { -sin[r * half + p] } else { sin[r * half + p] };
            let (a, b) = (row[2 * p], row[2 * p + 1]);
            row[2 * p] = a * c - b * s;
            row[2 * p + 1] = a * s + b * c;
        }
    }
    out
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
