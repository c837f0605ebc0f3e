//! The fixed building blocks of the child network as free functions over a
//! graph. [`super::NetworkPlan`] lowers to the same layer sequences.

use crate::error::{Error, Result};
use crate::nn::{batch_norm, conv2d, pool2d, shift_window, BnMode, PoolKind, RunningStats};
use crate::tensor::{Graph, Var};

/// Batch-norm affine parameters with their running statistics.
pub struct Norm<'a> {
    pub gamma: Var,
    pub beta: Var,
    pub stats: &'a mut RunningStats,
}

/// Plain 3×3 convolution (same padding, no bias) followed by batch norm.
pub fn stem(g: &mut Graph, x: Var, weight: Var, bn: Norm<'_>, mode: BnMode) -> Result<Var> {
    if g.shape(weight)[2..] != [3, 3] {
        return Err(Error::Dimension(format!("stem needs a 3×3 kernel, got {:?}", g.shape(weight))));
    }
    let y = conv2d(g, x, weight, 1, 1)?;
    batch_norm(g, y, bn.gamma, bn.beta, bn.stats, mode)
}

/// ReLU, 1×1 convolution, batch norm. Applied to every skip branch.
pub fn nonlinear_module(g: &mut Graph, x: Var, weight: Var, bn: Norm<'_>, mode: BnMode) -> Result<Var> {
    let r = g.relu(x);
    let y = conv2d(g, r, weight, 1, 0)?;
    batch_norm(g, y, bn.gamma, bn.beta, bn.stats, mode)
}

/// Halves height and width and doubles channels.
///
/// Path one subsamples even pixels; path two first shifts the window one
/// pixel toward the lower right so it subsamples the odd ones. Each path is
/// a `C→C` 1×1 convolution; the concatenation is batch-normalised.
pub fn factor_reduction(
    g: &mut Graph,
    x: Var,
    path1: Var,
    path2: Var,
    bn: Norm<'_>,
    mode: BnMode,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 4 || shape[2] % 2 != 0 || shape[3] % 2 != 0 {
        return Err(Error::Dimension(format!("factor reduction needs even B×C×H×W, got {shape:?}")));
    }
    let a = pool2d(g, x, PoolKind::Avg, 1, 2, 0)?;
    let a = conv2d(g, a, path1, 1, 0)?;
    let s = shift_window(g, x, 1, 1)?;
    let b = pool2d(g, s, PoolKind::Avg, 1, 2, 0)?;
    let b = conv2d(g, b, path2, 1, 0)?;
    let cat = g.concat(&[a, b], 1)?;
    batch_norm(g, cat, bn.gamma, bn.beta, bn.stats, mode)
}
