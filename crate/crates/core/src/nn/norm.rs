use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BackwardKernel, GradSink, Graph, Tensor, Var};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Which statistics batch norm normalises with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnMode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Batch statistics; running statistics are left alone.
    BatchStats,
    /// Running statistics only.
    Eval,
}

/// Running mean/variance for one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }
}

/// Affine parameters plus running statistics of a batch-norm layer.
#[derive(Clone, Debug)]
pub struct BatchNormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub stats: RunningStats,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], 1.0).with_grad(),
            beta: Tensor::zeros(&[channels]).with_grad(),
            stats: RunningStats::new(channels),
        }
    }

    /// Records gamma/beta as leaves and applies [`batch_norm`].
    pub fn forward(&mut self, g: &mut Graph, x: Var, mode: BnMode) -> Result<Var> {
        let gamma = g.tensor(&self.gamma);
        let beta = g.tensor(&self.beta);
        batch_norm(g, x, gamma, beta, &mut self.stats, mode)
    }
}

struct BnKernel {
    x: Var,
    gamma: Var,
    beta: Var,
    channels: usize,
    plane: usize,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

impl BackwardKernel for BnKernel {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.gamma, self.beta]
    }

    fn backward(&self, g: &Graph, _out: &[f64], gout: &[f64], sink: &mut GradSink) {
        let (c, plane) = (self.channels, self.plane);
        let batch = gout.len() / (c * plane);
        let m = (batch * plane) as f64;
        let gamma = g.value(self.gamma);
        // Per-channel sums of dy and dy * xhat.
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for b in 0..batch {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                let (dy, xh) = (&gout[off..off + plane], &self.xhat[off..off + plane]);
                sum_dy[ch] += dy.iter().sum::<f64>();
                sum_dy_xhat[ch] += dy.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        if let Some(gg) = sink.slot(self.gamma) {
            for ch in 0..c {
                gg[ch] += sum_dy_xhat[ch];
            }
        }
        if let Some(gb) = sink.slot(self.beta) {
            for ch in 0..c {
                gb[ch] += sum_dy[ch];
            }
        }
        if let Some(gx) = sink.slot(self.x) {
            for b in 0..batch {
                for ch in 0..c {
                    let off = (b * c + ch) * plane;
                    let scale = gamma[ch] * self.inv_std[ch];
                    let dst = &mut gx[off..off + plane];
                    let (dy, xh) = (&gout[off..off + plane], &self.xhat[off..off + plane]);
                    if self.batch_stats {
                        let mean_dy = sum_dy[ch] / m;
                        let mean_dy_xhat = sum_dy_xhat[ch] / m;
                        for i in 0..plane {
                            dst[i] += scale * (dy[i] - mean_dy - xh[i] * mean_dy_xhat);
                        }
                    } else {
                        for i in 0..plane {
                            dst[i] += scale * dy[i];
                        }
                    }
                }
            }
        }
    }
}

/// Batch normalisation over `B×C×H×W` (or `B×C`) with per-channel affine.
pub fn batch_norm(
    g: &mut Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    stats: &mut RunningStats,
    mode: BnMode,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 4 && shape.len() != 2 {
        return Err(Error::Dimension(format!("batch_norm expects B×C[×H×W], got {shape:?}")));
    }
    let (batch, c) = (shape[0], shape[1]);
    let plane: usize = shape[2..].iter().product();
    if g.shape(gamma) != [c] || g.shape(beta) != [c] || stats.mean.len() != c {
        return Err(Error::Dimension(format!(
            "batch_norm parameters do not match {c} channels"
        )));
    }
    let batch_stats = mode != BnMode::Eval;
    if batch_stats && batch < 2 {
        return Err(Error::Contract(
            "batch norm with batch statistics needs at least 2 samples".into(),
        ));
    }
    let xv = g.value(x);
    let (mean, var) = if batch_stats {
        let m = (batch * plane) as f64;
        let mut mean = vec![0.0; c];
        for b in 0..batch {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                mean[ch] += xv[off..off + plane].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut var = vec![0.0; c];
        for b in 0..batch {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                let mu = mean[ch];
                var[ch] += xv[off..off + plane].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        (mean, var)
    } else {
        (stats.mean.clone(), stats.var.clone())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + stats.epsilon).sqrt()).collect();
    let (gv, bv) = (g.value(gamma), g.value(beta));
    let mut xhat = vec![0.0; xv.len()];
    let mut out = vec![0.0; xv.len()];
    for b in 0..batch {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let (mu, is) = (mean[ch], inv_std[ch]);
            for i in off..off + plane {
                let h = (xv[i] - mu) * is;
                xhat[i] = h;
                out[i] = gv[ch] * h + bv[ch];
            }
        }
    }
    if mode == BnMode::Train {
        let m = (batch * plane) as f64;
        let mom = stats.momentum;
        for ch in 0..c {
            let unbiased = var[ch] * m / (m - 1.0);
            stats.mean[ch] = mom * stats.mean[ch] + (1.0 - mom) * mean[ch];
            stats.var[ch] = mom * stats.var[ch] + (1.0 - mom) * unbiased;
        }
    }
    Ok(g.push_kernel(
        shape,
        out,
        Box::new(BnKernel {
            x,
            gamma,
            beta,
            channels: c,
            plane,
            xhat,
            inv_std,
            batch_stats,
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradient_check;

    fn data(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i * 7919 % 101) as f64) * 0.05 - 2.0).collect()
    }

    #[test]
    fn training_output_has_beta_mean_and_gamma_std() {
        let mut g = Graph::new();
        let x = g.leaf(vec![4, 3, 3, 3], data(108), false).unwrap();
        let gamma = g.leaf(vec![3], vec![2.0, 0.5, 1.5], false).unwrap();
        let beta = g.leaf(vec![3], vec![-1.0, 0.0, 3.0], false).unwrap();
        let mut st = RunningStats::new(3);
        let y = batch_norm(&mut g, x, gamma, beta, &mut st, BnMode::Train).unwrap();
        let yv = g.value(y);
        for (ch, (gm, bt)) in [(2.0, -1.0), (0.5, 0.0), (1.5, 3.0)].into_iter().enumerate() {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| yv[(b * 3 + ch) * 9..(b * 3 + ch + 1) * 9].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / 36.0;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 36.0).sqrt();
            assert!((mean - bt).abs() < 1e-9);
            // Epsilon shrinks the std slightly below gamma.
            assert!((std - gm).abs() < 1e-4 * gm, "{std} vs {gm}");
        }
        assert!(st.var.iter().all(|v| *v >= 0.0));
        assert_ne!(st.mean, vec![0.0; 3]);
    }

    #[test]
    fn standardised_input_passes_through() {
        let mut g = Graph::new();
        let x = g.leaf(vec![4, 1], vec![1.0, -1.0, 1.0, -1.0], false).unwrap();
        let gamma = g.leaf(vec![1], vec![1.0], false).unwrap();
        let beta = g.leaf(vec![1], vec![0.0], false).unwrap();
        let mut st = RunningStats::new(1);
        let y = batch_norm(&mut g, x, gamma, beta, &mut st, BnMode::BatchStats).unwrap();
        for (a, b) in g.value(y).iter().zip([1.0, -1.0, 1.0, -1.0]) {
            assert!((a - b).abs() < 1e-5);
        }
        assert_eq!(st, RunningStats::new(1));
    }

    #[test]
    fn eval_mode_uses_running_stats_only() {
        let mut st = RunningStats::new(2);
        st.mean = vec![1.0, -1.0];
        st.var = vec![4.0, 0.25];
        let mut g = Graph::new();
        let x = g.leaf(vec![1, 2, 1, 1], vec![3.0, 0.0], false).unwrap();
        let gamma = g.leaf(vec![2], vec![1.0, 1.0], false).unwrap();
        let beta = g.leaf(vec![2], vec![0.0, 0.0], false).unwrap();
        let y = batch_norm(&mut g, x, gamma, beta, &mut st, BnMode::Eval).unwrap();
        let yv = g.value(y);
        assert!((yv[0] - 2.0 / (4.0 + BN_EPSILON).sqrt()).abs() < 1e-12);
        assert!((yv[1] - 1.0 / (0.25 + BN_EPSILON).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn single_sample_training_is_a_contract_error() {
        let mut g = Graph::new();
        let x = g.leaf(vec![1, 2, 2, 2], vec![0.0; 8], false).unwrap();
        let gamma = g.leaf(vec![2], vec![1.0; 2], false).unwrap();
        let beta = g.leaf(vec![2], vec![0.0; 2], false).unwrap();
        let mut st = RunningStats::new(2);
        assert!(matches!(
            batch_norm(&mut g, x, gamma, beta, &mut st, BnMode::Train),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn gradients_check_in_every_mode() {
        let x = Tensor::new(vec![3, 2, 2, 2], data(24)).unwrap();
        let gamma = Tensor::new(vec![2], vec![1.3, -0.7]).unwrap();
        let beta = Tensor::new(vec![2], vec![0.2, 0.4]).unwrap();
        let weights: Vec<f64> = (0..24).map(|i| (i as f64 * 0.9).cos()).collect();
        for mode in [BnMode::BatchStats, BnMode::Eval] {
            let objective = |g: &mut Graph, y: Var| -> Result<Var> {
                let w = g.constant(vec![3, 2, 2, 2], weights.clone())?;
                let p = g.mul(y, w)?;
                let sq = g.mul(p, p)?;
                Ok(g.sum(sq))
            };
            let mut st = RunningStats::new(2);
            st.mean = vec![0.1, -0.3];
            st.var = vec![0.8, 1.7];
            let ex = gradient_check(
                |g, v| {
                    let (ga, be) = (g.tensor(&gamma), g.tensor(&beta));
                    let y = batch_norm(g, v, ga, be, &mut st.clone(), mode)?;
                    objective(g, y)
                },
                &x,
                1e-6,
            )
            .unwrap();
            let eg = gradient_check(
                |g, v| {
                    let (xx, be) = (g.tensor(&x), g.tensor(&beta));
                    let y = batch_norm(g, xx, v, be, &mut st.clone(), mode)?;
                    objective(g, y)
                },
                &gamma,
                1e-6,
            )
            .unwrap();
            let eb = gradient_check(
                |g, v| {
                    let (xx, ga) = (g.tensor(&x), g.tensor(&gamma));
                    let y = batch_norm(g, xx, ga, v, &mut st.clone(), mode)?;
                    objective(g, y)
                },
                &beta,
                1e-6,
            )
            .unwrap();
            for e in [ex, eg, eb] {
                assert!(e < 1e-5, "{mode:?}: {e}");
            }
        }
    }
}
