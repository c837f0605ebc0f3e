use crate::error::{Error, Result};
use crate::tensor::linalg::gemm;
use crate::tensor::{BackwardKernel, GradSink, Graph, Var};

/// Output size of a sliding window: `floor((n + 2 pad - k) / stride) + 1`.
pub fn out_dim(n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Contract("stride must be positive".into()));
    }
    if n + 2 * pad < k {
        return Err(Error::Dimension(format!(
            "window {k} larger than padded input {}",
            n + 2 * pad
        )));
    }
    Ok((n + 2 * pad - k) / stride + 1)
}

fn nchw(g: &Graph, x: Var, what: &str) -> Result<[usize; 4]> {
    match *g.shape(x) {
        [b, c, h, w] => Ok([b, c, h, w]),
        ref s => Err(Error::Dimension(format!("{what} expects B×C×H×W input, got {s:?}"))),
    }
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }
    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col(geo: &Geom, img: &[f64], col: &mut [f64]) {
    let (k, s, p) = (geo.k, geo.stride, geo.pad);
    let n = geo.col_cols();
    for c in 0..geo.cin {
        let plane = &img[c * geo.h * geo.w..(c + 1) * geo.h * geo.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..geo.oh {
                    let iy = (oy * s + ky) as isize - p as isize;
                    for ox in 0..geo.ow {
                        let ix = (ox * s + kx) as isize - p as isize;
                        dst[oy * geo.ow + ox] = if iy >= 0
                            && (iy as usize) < geo.h
                            && ix >= 0
                            && (ix as usize) < geo.w
                        {
                            plane[iy as usize * geo.w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(geo: &Geom, col: &[f64], img: &mut [f64]) {
    let (k, s, p) = (geo.k, geo.stride, geo.pad);
    let n = geo.col_cols();
    for c in 0..geo.cin {
        let plane = &mut img[c * geo.h * geo.w..(c + 1) * geo.h * geo.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..geo.oh {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy as usize >= geo.h {
                        continue;
                    }
                    for ox in 0..geo.ow {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix >= 0 && (ix as usize) < geo.w {
                            plane[iy as usize * geo.w + ix as usize] += src[oy * geo.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dKernel {
    x: Var,
    w: Var,
    geo: Geom,
}

impl BackwardKernel for Conv2dKernel {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.w]
    }

    fn backward(&self, g: &Graph, _out: &[f64], gout: &[f64], sink: &mut GradSink) {
        let geo = self.geo;
        let (rows, cols) = (geo.col_rows(), geo.col_cols());
        let xv = g.value(self.x);
        let wv = g.value(self.w);
        let in_len = geo.cin * geo.h * geo.w;
        let out_len = geo.cout * cols;
        let mut col = if geo.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; rows * cols]
        };
        if sink.needs(self.w) {
            let gw = sink.slot(self.w).unwrap();
            for b in 0..geo.batch {
                let img = &xv[b * in_len..(b + 1) * in_len];
                let go = &gout[b * out_len..(b + 1) * out_len];
                let colref: &[f64] = if geo.is_pointwise() {
                    img
                } else {
                    im2col(&geo, img, &mut col);
                    &col
                };
                gemm(geo.cout, cols, rows, go, false, colref, true, gw, 1.0);
            }
        }
        if sink.needs(self.x) {
            let gx = sink.slot(self.x).unwrap();
            for b in 0..geo.batch {
                let go = &gout[b * out_len..(b + 1) * out_len];
                let gimg = &mut gx[b * in_len..(b + 1) * in_len];
                if geo.is_pointwise() {
                    gemm(rows, geo.cout, cols, wv, true, go, false, gimg, 1.0);
                } else {
                    gemm(rows, geo.cout, cols, wv, true, go, false, &mut col, 0.0);
                    col2im_add(&geo, &col, gimg);
                }
            }
        }
    }
}

/// Dense 2-D convolution (no bias). `w` is `C_out×C_in×k×k`.
pub fn conv2d(g: &mut Graph, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
    let [batch, cin, h, wd] = nchw(g, x, "conv2d")?;
    let (cout, k) = match *g.shape(w) {
        [co, ci, ky, kx] if ci == cin && ky == kx => (co, ky),
        ref s => {
            return Err(Error::Dimension(format!(
                "conv2d weight {s:?} does not fit input with {cin} channels"
            )))
        }
    };
    let geo = Geom {
        batch,
        cin,
        h,
        w: wd,
        cout,
        k,
        stride,
        pad,
        oh: out_dim(h, k, stride, pad)?,
        ow: out_dim(wd, k, stride, pad)?,
    };
    let (rows, cols) = (geo.col_rows(), geo.col_cols());
    let in_len = cin * h * wd;
    let mut out = vec![0.0; batch * cout * cols];
    let xv = g.value(x);
    let wv = g.value(w);
    let mut col = if geo.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; rows * cols]
    };
    for b in 0..batch {
        let img = &xv[b * in_len..(b + 1) * in_len];
        let dst = &mut out[b * cout * cols..(b + 1) * cout * cols];
        if geo.is_pointwise() {
            gemm(cout, rows, cols, wv, false, img, false, dst, 0.0);
        } else {
            im2col(&geo, img, &mut col);
            gemm(cout, rows, cols, wv, false, &col, false, dst, 0.0);
        }
    }
    Ok(g.push_kernel(
        vec![batch, cout, geo.oh, geo.ow],
        out,
        Box::new(Conv2dKernel { x, w, geo }),
    ))
}

struct DepthwiseKernel {
    x: Var,
    w: Var,
    geo: Geom,
}

/// Visits the runs of one kernel tap over a channel plane: output indices
/// `o0..o0 + n` read input indices `i0, i0 + stride, ...`.
#[inline]
fn for_each_run(geo: &Geom, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize)) {
    let (s, p) = (geo.stride as isize, geo.pad as isize);
    // ox range with 0 <= ox*s + kx - p < w
    let lo_num = p - kx as isize;
    let ox_lo = if lo_num <= 0 { 0 } else { ((lo_num + s - 1) / s) as usize };
    let hi_num = geo.w as isize - 1 + p - kx as isize;
    if hi_num < 0 {
        return;
    }
    let ox_hi = ((hi_num / s) as usize + 1).min(geo.ow);
    if ox_lo >= ox_hi {
        return;
    }
    for oy in 0..geo.oh {
        let iy = oy as isize * s + ky as isize - p;
        if iy < 0 || iy as usize >= geo.h {
            continue;
        }
        let ix = (ox_lo as isize * s + kx as isize - p) as usize;
        f(oy * geo.ow + ox_lo, iy as usize * geo.w + ix, ox_hi - ox_lo);
    }
}

/// `dst[t] += a * src[t * stride]`
#[inline]
fn axpy_strided(dst: &mut [f64], src: &[f64], stride: usize, a: f64) {
    if stride == 1 {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += a * s;
        }
    } else {
        for (t, d) in dst.iter_mut().enumerate() {
            *d += a * src[t * stride];
        }
    }
}

impl BackwardKernel for DepthwiseKernel {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.w]
    }

    fn backward(&self, g: &Graph, _out: &[f64], gout: &[f64], sink: &mut GradSink) {
        let geo = self.geo;
        let (k, hw, ohw) = (geo.k, geo.h * geo.w, geo.oh * geo.ow);
        let xv = g.value(self.x);
        let wv = g.value(self.w);
        if sink.needs(self.w) {
            let gw = sink.slot(self.w).unwrap();
            for b in 0..geo.batch {
                for c in 0..geo.cin {
                    let plane = &xv[(b * geo.cin + c) * hw..][..hw];
                    let go = &gout[(b * geo.cin + c) * ohw..][..ohw];
                    for ky in 0..k {
                        for kx in 0..k {
                            let mut acc = 0.0;
                            for_each_run(&geo, ky, kx, |o0, i0, n| {
                                let s = geo.stride;
                                acc += go[o0..o0 + n]
                                    .iter()
                                    .enumerate()
                                    .map(|(t, g)| g * plane[i0 + t * s])
                                    .sum::<f64>();
                            });
                            gw[(c * k + ky) * k + kx] += acc;
                        }
                    }
                }
            }
        }
        if sink.needs(self.x) {
            let gx = sink.slot(self.x).unwrap();
            for b in 0..geo.batch {
                for c in 0..geo.cin {
                    let gplane = &mut gx[(b * geo.cin + c) * hw..][..hw];
                    let go = &gout[(b * geo.cin + c) * ohw..][..ohw];
                    for ky in 0..k {
                        for kx in 0..k {
                            let wk = wv[(c * k + ky) * k + kx];
                            let s = geo.stride;
                            for_each_run(&geo, ky, kx, |o0, i0, n| {
                                if s == 1 {
                                    axpy_strided(&mut gplane[i0..i0 + n], &go[o0..o0 + n], 1, wk);
                                } else {
                                    for t in 0..n {
                                        gplane[i0 + t * s] += wk * go[o0 + t];
                                    }
                                }
                            });
                        }
                    }
                }
            }
        }
    }
}

/// Per-channel convolution. `w` is `C×k×k`.
pub fn depthwise_conv2d(g: &mut Graph, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
    let [batch, c, h, wd] = nchw(g, x, "depthwise_conv2d")?;
    let k = match *g.shape(w) {
        [wc, ky, kx] if wc == c && ky == kx => ky,
        ref s => {
            return Err(Error::Dimension(format!(
                "depthwise weight {s:?} does not fit input with {c} channels"
            )))
        }
    };
    let geo = Geom {
        batch,
        cin: c,
        h,
        w: wd,
        cout: c,
        k,
        stride,
        pad,
        oh: out_dim(h, k, stride, pad)?,
        ow: out_dim(wd, k, stride, pad)?,
    };
    let (hw, ohw) = (h * wd, geo.oh * geo.ow);
    let xv = g.value(x);
    let wv = g.value(w);
    let mut out = vec![0.0; batch * c * ohw];
    for b in 0..batch {
        for ch in 0..c {
            let plane = &xv[(b * c + ch) * hw..][..hw];
            let dst = &mut out[(b * c + ch) * ohw..][..ohw];
            for ky in 0..k {
                for kx in 0..k {
                    let wk = wv[(ch * k + ky) * k + kx];
                    for_each_run(&geo, ky, kx, |o0, i0, n| {
                        axpy_strided(&mut dst[o0..o0 + n], &plane[i0..], stride, wk);
                    });
                }
            }
        }
    }
    Ok(g.push_kernel(
        vec![batch, c, geo.oh, geo.ow],
        out,
        Box::new(DepthwiseKernel { x, w, geo }),
    ))
}

/// Depthwise `k×k` convolution followed by a `1×1` pointwise convolution.
///
/// `depthwise` is `C×k×k`, `pointwise` is `C_out×C×1×1`.
pub fn separable_conv(
    g: &mut Graph,
    x: Var,
    depthwise: Var,
    pointwise: Var,
    stride: usize,
    pad: usize,
) -> Result<Var> {
    let k = g.shape(depthwise).get(1).copied().unwrap_or(0);
    if k % 2 == 0 {
        return Err(Error::Contract(format!("separable conv kernel {k} must be odd")));
    }
    let d = depthwise_conv2d(g, x, depthwise, stride, pad)?;
    conv2d(g, d, pointwise, 1, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradient_check, Tensor};

    fn seq(n: usize, f: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 1.0) * f).sin()).collect()
    }

    #[test]
    fn same_padding_keeps_shape() {
        let mut g = Graph::new();
        let x = g.leaf(vec![2, 8, 16, 16], seq(2 * 8 * 256, 0.1), false).unwrap();
        let dw = g.leaf(vec![8, 3, 3], seq(72, 0.3), false).unwrap();
        let pw = g.leaf(vec![8, 8, 1, 1], seq(64, 0.7), false).unwrap();
        let y = separable_conv(&mut g, x, dw, pw, 1, 1).unwrap();
        assert_eq!(g.shape(y), &[2, 8, 16, 16]);
    }

    #[test]
    fn delta_and_identity_kernels_reproduce_input() {
        let mut g = Graph::new();
        let xs = seq(2 * 3 * 5 * 5, 0.37);
        let x = g.leaf(vec![2, 3, 5, 5], xs.clone(), false).unwrap();
        let mut delta = vec![0.0; 3 * 9];
        for c in 0..3 {
            delta[c * 9 + 4] = 1.0;
        }
        let dw = g.leaf(vec![3, 3, 3], delta, false).unwrap();
        let mut eye = vec![0.0; 9];
        for c in 0..3 {
            eye[c * 3 + c] = 1.0;
        }
        let pw = g.leaf(vec![3, 3, 1, 1], eye, false).unwrap();
        let y = separable_conv(&mut g, x, dw, pw, 1, 1).unwrap();
        assert_eq!(g.value(y), &xs[..]);
    }

    #[test]
    fn channel_mismatch_is_a_dimension_error() {
        let mut g = Graph::new();
        let x = g.leaf(vec![1, 2, 4, 4], vec![0.0; 32], false).unwrap();
        let dw = g.leaf(vec![3, 3, 3], vec![0.0; 27], false).unwrap();
        assert!(matches!(
            depthwise_conv2d(&mut g, x, dw, 1, 1),
            Err(Error::Dimension(_))
        ));
        let w = g.leaf(vec![4, 3, 1, 1], vec![0.0; 12], false).unwrap();
        assert!(matches!(conv2d(&mut g, x, w, 1, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn gradients_pass_finite_difference_checks() {
        let x = Tensor::new(vec![2, 2, 5, 5], seq(100, 0.23)).unwrap();
        let dw = Tensor::new(vec![2, 3, 3], seq(18, 0.71)).unwrap();
        let pw = Tensor::new(vec![3, 2, 1, 1], seq(6, 1.3)).unwrap();
        let full = Tensor::new(vec![3, 2, 3, 3], seq(54, 0.19)).unwrap();
        let loss = |g: &mut Graph, y: Var| -> Result<Var> {
            let sq = g.mul(y, y)?;
            Ok(g.sum(sq))
        };
        for stride in [1, 2] {
            let ex = gradient_check(
                |g, v| {
                    let d = g.tensor(&dw);
                    let p = g.tensor(&pw);
                    let y = separable_conv(g, v, d, p, stride, 1)?;
                    loss(g, y)
                },
                &x,
                1e-6,
            )
            .unwrap();
            let ew = gradient_check(
                |g, v| {
                    let xx = g.tensor(&x);
                    let y = depthwise_conv2d(g, xx, v, stride, 1)?;
                    loss(g, y)
                },
                &dw,
                1e-6,
            )
            .unwrap();
            let ef = gradient_check(
                |g, v| {
                    let xx = g.tensor(&x);
                    let y = conv2d(g, xx, v, stride, 1)?;
                    loss(g, y)
                },
                &full,
                1e-6,
            )
            .unwrap();
            let efx = gradient_check(
                |g, v| {
                    let w = g.tensor(&full);
                    let y = conv2d(g, v, w, stride, 1)?;
                    loss(g, y)
                },
                &x,
                1e-6,
            )
            .unwrap();
            for e in [ex, ew, ef, efx] {
                assert!(e < 1e-5, "stride {stride}: {e}");
            }
        }
    }
}
