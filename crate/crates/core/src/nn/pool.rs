use serde::{Deserialize, Serialize};

use super::conv::out_dim;
use crate::error::{Error, Result};
use crate::tensor::{BackwardKernel, GradSink, Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Avg,
    Max,
}

struct PoolKernel {
    x: Var,
    kind: PoolKind,
    geo: PoolGeom,
    /// Max: flat in-plane source index per output. Avg: unused.
    argmax: Vec<u32>,
}

/// Window bounds along one axis, clipped to the input.
#[derive(Clone)]
struct Axis {
    lo: Vec<usize>,
    hi: Vec<usize>,
}

impl Axis {
    fn new(n: usize, out: usize, k: usize, stride: usize, pad: usize) -> Self {
        let lo = (0..out).map(|o| (o * stride).saturating_sub(pad)).collect();
        let hi = (0..out).map(|o| (o * stride + k - pad).min(n)).collect();
        Self { lo, hi }
    }

    fn count(&self, o: usize) -> usize {
        self.hi[o] - self.lo[o]
    }
}

#[derive(Clone)]
struct PoolGeom {
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    rows: Axis,
    cols: Axis,
    /// Window of 1: plain subsampling.
    unit: bool,
    stride: usize,
}

impl BackwardKernel for PoolKernel {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, _g: &Graph, _out: &[f64], gout: &[f64], sink: &mut GradSink) {
        let Some(gx) = sink.slot(self.x) else {
            return;
        };
        let PoolGeom { h, w, oh, ow, .. } = self.geo;
        let (in_plane, out_plane) = (h * w, oh * ow);
        let planes = gout.len() / out_plane;
        if self.geo.unit {
            let s = self.geo.stride;
            for p in 0..planes {
                let (gp, go) = (&mut gx[p * in_plane..][..in_plane], &gout[p * out_plane..][..out_plane]);
                for oy in 0..oh {
                    for ox in 0..ow {
                        gp[oy * s * w + ox * s] += go[oy * ow + ox];
                    }
                }
            }
            return;
        }
        match self.kind {
            PoolKind::Max => {
                for p in 0..planes {
                    let base = p * in_plane;
                    for o in 0..out_plane {
                        let src = self.argmax[p * out_plane + o] as usize;
                        gx[base + src] += gout[p * out_plane + o];
                    }
                }
            }
            PoolKind::Avg => {
                // Spread each output over its rows, then over its columns.
                let (rows, cols) = (&self.geo.rows, &self.geo.cols);
                let mut tmp = vec![0.0; h * ow];
                for p in 0..planes {
                    tmp.iter_mut().for_each(|v| *v = 0.0);
                    let go = &gout[p * out_plane..][..out_plane];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = go[oy * ow + ox] / (rows.count(oy) * cols.count(ox)) as f64;
                            for iy in rows.lo[oy]..rows.hi[oy] {
                                tmp[iy * ow + ox] += gv;
                            }
                        }
                    }
                    let gp = &mut gx[p * in_plane..][..in_plane];
                    for iy in 0..h {
                        for ox in 0..ow {
                            let gv = tmp[iy * ow + ox];
                            for v in &mut gp[iy * w + cols.lo[ox]..iy * w + cols.hi[ox]] {
                                *v += gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Window pooling over `B×C×H×W`.
///
/// Average pooling divides by the number of in-bounds taps, so padding does
/// not dilute the mean. Max pooling routes the gradient to the first maximum
/// in row-major scan order.
pub fn pool2d(
    g: &mut Graph,
    x: Var,
    kind: PoolKind,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<Var> {
    let [b, c, h, w] = match *g.shape(x) {
        [b, c, h, w] => [b, c, h, w],
        ref s => return Err(Error::Dimension(format!("pool2d expects B×C×H×W, got {s:?}"))),
    };
    if k > h || k > w {
        return Err(Error::Dimension(format!(
            "pool window {k} larger than input {h}×{w}"
        )));
    }
    if pad >= k {
        return Err(Error::Contract(format!("pool padding {pad} must be below window {k}")));
    }
    let (oh, ow) = (out_dim(h, k, stride, pad)?, out_dim(w, k, stride, pad)?);
    let geo = PoolGeom {
        h,
        w,
        oh,
        ow,
        rows: Axis::new(h, oh, k, stride, pad),
        cols: Axis::new(w, ow, k, stride, pad),
        unit: k == 1,
        stride,
    };
    let (in_plane, out_plane) = (h * w, oh * ow);
    let xv = g.value(x);
    let mut out = Vec::with_capacity(b * c * out_plane);
    let mut argmax = Vec::new();
    if geo.unit {
        for plane in xv.chunks_exact(in_plane) {
            for oy in 0..oh {
                let row = &plane[oy * stride * w..];
                out.extend((0..ow).map(|ox| row[ox * stride]));
            }
        }
    } else {
        // Horizontal pass per input row, then vertical pass per output.
        let (rows, cols) = (&geo.rows, &geo.cols);
        let mut hval = vec![0.0; h * ow];
        let mut hidx = vec![0u32; if kind == PoolKind::Max { h * ow } else { 0 }];
        if kind == PoolKind::Max {
            argmax.reserve(b * c * out_plane);
        }
        for plane in xv.chunks_exact(in_plane) {
            for iy in 0..h {
                let row = &plane[iy * w..(iy + 1) * w];
                for ox in 0..ow {
                    let win = &row[cols.lo[ox]..cols.hi[ox]];
                    match kind {
                        PoolKind::Avg => hval[iy * ow + ox] = win.iter().sum(),
                        PoolKind::Max => {
                            let (mut best, mut at) = (win[0], 0);
                            for (t, &v) in win.iter().enumerate().skip(1) {
                                if v > best {
                                    best = v;
                                    at = t;
                                }
                            }
                            hval[iy * ow + ox] = best;
                            hidx[iy * ow + ox] = (iy * w + cols.lo[ox] + at) as u32;
                        }
                    }
                }
            }
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y0, y1) = (rows.lo[oy], rows.hi[oy]);
                    match kind {
                        PoolKind::Avg => {
                            let s: f64 = (y0..y1).map(|iy| hval[iy * ow + ox]).sum();
                            out.push(s / (rows.count(oy) * cols.count(ox)) as f64);
                        }
                        PoolKind::Max => {
                            let mut best = hval[y0 * ow + ox];
                            let mut at = hidx[y0 * ow + ox];
                            for iy in y0 + 1..y1 {
                                if hval[iy * ow + ox] > best {
                                    best = hval[iy * ow + ox];
                                    at = hidx[iy * ow + ox];
                                }
                            }
                            out.push(best);
                            argmax.push(at);
                        }
                    }
                }
            }
        }
    }
    Ok(g.push_kernel(
        vec![b, c, oh, ow],
        out,
        Box::new(PoolKernel { x, kind, geo, argmax }),
    ))
}

struct GapKernel {
    x: Var,
    plane: usize,
}

impl BackwardKernel for GapKernel {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, _g: &Graph, _out: &[f64], gout: &[f64], sink: &mut GradSink) {
        if let Some(gx) = sink.slot(self.x) {
            let inv = 1.0 / self.plane as f64;
            for (p, &gv) in gout.iter().enumerate() {
                for v in &mut gx[p * self.plane..(p + 1) * self.plane] {
                    *v += gv * inv;
                }
            }
        }
    }
}

/// Mean over the spatial dims: `B×C×H×W → B×C`.
pub fn global_avg_pool(g: &mut Graph, x: Var) -> Result<Var> {
    let [b, c, h, w] = match *g.shape(x) {
        [b, c, h, w] => [b, c, h, w],
        ref s => {
            return Err(Error::Dimension(format!(
                "global_avg_pool expects B×C×H×W, got {s:?}"
            )))
        }
    };
    let plane = h * w;
    let out = g
        .value(x)
        .chunks_exact(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect();
    Ok(g.push_kernel(vec![b, c], out, Box::new(GapKernel { x, plane })))
}

struct ShiftKernel {
    x: Var,
    h: usize,
    w: usize,
    dy: usize,
    dx: usize,
}

impl BackwardKernel for ShiftKernel {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, _g: &Graph, _out: &[f64], gout: &[f64], sink: &mut GradSink) {
        let Some(gx) = sink.slot(self.x) else {
            return;
        };
        let (h, w) = (self.h, self.w);
        for (gp, op) in gx.chunks_exact_mut(h * w).zip(gout.chunks_exact(h * w)) {
            for y in 0..h.saturating_sub(self.dy) {
                for x in 0..w.saturating_sub(self.dx) {
                    gp[(y + self.dy) * w + x + self.dx] += op[y * w + x];
                }
            }
        }
    }
}

/// `out[.., y, x] = in[.., y + dy, x + dx]`, zero where that falls off the edge.
///
/// Equivalent to zero-padding and cropping a same-size window moved `dy`
/// rows down and `dx` columns right.
pub fn shift_window(g: &mut Graph, x: Var, dy: usize, dx: usize) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let [_, _, h, w] = match shape[..] {
        [b, c, h, w] => [b, c, h, w],
        _ => return Err(Error::Dimension(format!("shift_window expects B×C×H×W, got {shape:?}"))),
    };
    let mut out = vec![0.0; g.value(x).len()];
    for (op, ip) in out.chunks_exact_mut(h * w).zip(g.value(x).chunks_exact(h * w)) {
        for y in 0..h.saturating_sub(dy) {
            for xx in 0..w.saturating_sub(dx) {
                op[y * w + xx] = ip[(y + dy) * w + xx + dx];
            }
        }
    }
    Ok(g.push_kernel(shape, out, Box::new(ShiftKernel { x, h, w, dy, dx })))
}
