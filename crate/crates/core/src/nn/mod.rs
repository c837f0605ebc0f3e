//! Layer kernels recorded on the tape: convolutions, pooling, batch norm,
//! dropblock and the dense head.

mod conv;
mod dropblock;
mod norm;
mod pool;

pub use conv::{conv2d, depthwise_conv2d, out_dim, separable_conv};
pub use dropblock::{dropblock, dropblock_mask, DEFAULT_BLOCK_SIZE, DEFAULT_KEEP_PROB};
pub use norm::{batch_norm, BatchNormState, BnMode, RunningStats, BN_EPSILON, BN_MOMENTUM};
pub use pool::{global_avg_pool, pool2d, shift_window, PoolKind};

use crate::error::Result;
use crate::tensor::{Graph, Tensor, Var};

/// Parameters of one depthwise-separable convolution.
#[derive(Clone, Debug)]
pub struct ConvParams {
    /// `C×k×k`
    pub depthwise_kernel: Tensor,
    /// `C_out×C_in×1×1`
    pub pointwise_kernel: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let dw = g.tensor(&self.depthwise_kernel);
        let pw = g.tensor(&self.pointwise_kernel);
        separable_conv(g, x, dw, pw, self.stride, self.padding)
    }
}

/// `x · w + b` for `x: N×d`, `w: d×n`, `b: n`.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add(y, b)
}
