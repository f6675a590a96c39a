//! 3D rotary position embedding with a temporal frame-skip factor.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

use super::layout::TokenLayout;

/// Rotary coordinates for every token.
///
/// Visual tokens map `(n, i, j) → (n·δ, i, j)`. Text tokens follow the last
/// visual frame position: the `t`-th text token sits at
/// `(n_last·δ + 1 + t, 0, 0)`.
pub fn fspe_positions(layout: &TokenLayout, delta: usize) -> Vec<[usize; 3]> {
    let delta = delta.max(1);
    let mut out: Vec<[usize; 3]> = layout.coords.iter().map(|&[n, i, j]| [n * delta, i, j]).collect();
    let last = layout.coords.iter().map(|c| c[0]).max().unwrap_or(0) * delta;
    out.extend((0..layout.len() - layout.visual_len()).map(|t| [last + 1 + t, 0, 0]));
    out
}

fn check_bands(bands: [usize; 3]) -> Result<()> {
    if bands.iter().any(|b| b % 2 != 0) {
        return Err(Error::config(
            "model.dim",
            format!("rotary bands {bands:?} must all be even"),
        ));
    }
    Ok(())
}

/// Rotation angles of one head: `hd/2` values per token.
fn head_angles(pos: [usize; 3], bands: [usize; 3], base: f64) -> impl Iterator<Item = f64> {
    bands.into_iter().zip(pos).flat_map(move |(width, coord)| {
        (0..width / 2).map(move |q| coord as f64 * base.powf(-2.0 * q as f64 / width as f64))
    })
}

/// Cosine/sine tables for rotating `[tokens, heads·hd]` activations.
#[derive(Clone, Debug)]
pub struct RopeTable<T: Scalar> {
    pub cos: Arc<Vec<T>>,
    pub sin: Arc<Vec<T>>,
}

impl<T: Scalar> RopeTable<T> {
    pub fn new(positions: &[[usize; 3]], bands: [usize; 3], heads: usize, base: f64) -> Result<Self> {
        check_bands(bands)?;
        let half: usize = bands.iter().sum::<usize>() / 2;
        let mut cos = Vec::with_capacity(positions.len() * heads * half);
        let mut sin = Vec::with_capacity(cos.capacity());
        for &p in positions {
            let angles: Vec<f64> = head_angles(p, bands, base).collect();
            for _ in 0..heads {
                cos.extend(angles.iter().map(|a| T::lit(a.cos())));
                sin.extend(angles.iter().map(|a| T::lit(a.sin())));
            }
        }
        Ok(Self {
            cos: Arc::new(cos),
            sin: Arc::new(sin),
        })
    }
}

/// Rotates rows of a single-head `[tokens, hd]` tensor by their coordinates.
pub fn apply_rope<T: Scalar>(x: &Tensor<T>, coords: &[[usize; 3]], bands: [usize; 3], base: f64) -> Result<Tensor<T>> {
    check_bands(bands)?;
    let hd: usize = bands.iter().sum();
    if x.cols() != hd || x.rows() != coords.len() {
        return Err(Error::dim(format!(
            "rope input {:?} against {} coordinates and head dim {hd}",
            x.shape(),
            coords.len()
        )));
    }
    let table = RopeTable::<T>::new(coords, bands, 1, base)?;
    let mut out = x.clone();
    let half = hd / 2;
    for r in 0..x.rows() {
        let row = &mut out.data_mut()[r * hd..(r + 1) * hd];
        for p in 0..half {
            let (c, s) = (table.cos[r * half + p], table.sin[r * half + p]);
            let (a, b) = (row[2 * p], row[2 * p + 1]);
            row[2 * p] = a * c - b * s;
            row[2 * p + 1] = a * s + b * c;
        }
    }
    Ok(out)
}
