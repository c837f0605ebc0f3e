//! Reference classifiers for checking how hard a dataset is.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Split, SplitDataset};
use crate::error::{Error, Result};
use crate::loss::{cross_entropy, LossInput};
use crate::nn::{conv2d, global_avg_pool, pool2d, PoolKind};
use crate::schedule::OptimState;
use crate::tensor::{Graph, Tensor, Var};
use crate::util::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineModel {
    /// Softmax regression on raw pixels.
    Linear,
    /// conv3x3(16) → relu → maxpool2 → conv3x3(32) → relu → global avg → linear.
    SmallCnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

fn he(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let n = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| n.sample(rng)).collect()).unwrap()
}

fn init(model: BaselineModel, data: &SplitDataset, rng: &mut impl Rng) -> BTreeMap<String, Tensor> {
    let (c, k) = (data.channels, data.n_classes);
    let mut p = BTreeMap::new();
    match model {
        BaselineModel::Linear => {
            p.insert("fc.w".into(), Tensor::zeros(&[data.image_len(), k]));
            p.insert("fc.b".into(), Tensor::zeros(&[k]));
        }
        BaselineModel::SmallCnn => {
            p.insert("conv1.w".into(), he(&[16, c, 3, 3], c * 9, rng));
            p.insert("conv1.b".into(), Tensor::zeros(&[16, 1, 1]));
            p.insert("conv2.w".into(), he(&[32, 16, 3, 3], 16 * 9, rng));
            p.insert("conv2.b".into(), Tensor::zeros(&[32, 1, 1]));
            p.insert("fc.w".into(), he(&[32, k], 32, rng));
            p.insert("fc.b".into(), Tensor::zeros(&[k]));
        }
    }
    p
}

/// Builds the model on `g` and returns `(features, fc weight, fc bias)`.
fn forward(
    model: BaselineModel,
    g: &mut Graph,
    vars: &BTreeMap<String, Var>,
    x: &Tensor,
) -> Result<(Var, Var, Var)> {
    let n = x.shape()[0];
    let xv = g.tensor(x);
    let feats = match model {
        BaselineModel::Linear => g.reshape(xv, vec![n, x.len() / n])?,
        BaselineModel::SmallCnn => {
            let h = conv2d(g, xv, vars["conv1.w"], 1, 1)?;
            let h = g.add(h, vars["conv1.b"])?;
            let h = g.relu(h);
            let h = pool2d(g, h, PoolKind::Max, 2, 2, 0)?;
            let h = conv2d(g, h, vars["conv2.w"], 1, 1)?;
            let h = g.add(h, vars["conv2.b"])?;
            let h = g.relu(h);
            global_avg_pool(g, h)?
        }
    };
    Ok((feats, vars["fc.w"], vars["fc.b"]))
}

fn scores(model: BaselineModel, params: &BTreeMap<String, Tensor>, x: &Tensor) -> Result<Vec<usize>> {
    let mut g = Graph::new();
    let vars = params.iter().map(|(k, t)| (k.clone(), g.tensor(t))).collect();
    let (f, w, b) = forward(model, &mut g, &vars, x)?;
    let z = g.matmul(f, w)?;
    let z = g.add(z, b)?;
    let k = g.shape(z)[1];
    Ok(g.value(z)
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
        })
        .collect())
}

/// Trains `model` on the training split without augmentation and returns
/// its accuracy on `eval`.
pub fn baseline_accuracy(model: BaselineModel, data: &SplitDataset, eval: &Split, cfg: &BaselineConfig) -> Result<f64> {
    if data.train.len() < cfg.batch_size || eval.is_empty() {
        return Err(Error::Data("baseline needs a full training batch and a non-empty eval split".into()));
    }
    let mut params = init(model, data, &mut stream_rng(cfg.seed, &[0]));
    let mut optim = OptimState::new(cfg.momentum, cfg.weight_decay);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream_rng(cfg.seed, &[1, epoch as u64]));
        for idx in order.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
            let (x, labels) = data.batch::<rand_chacha::ChaCha8Rng>(&data.train, idx, None)?;
            let mut g = Graph::new();
            let vars: BTreeMap<String, Var> = params
                .iter()
                .map(|(k, t)| Ok((k.clone(), g.leaf(t.shape().to_vec(), t.data().to_vec(), true)?)))
                .collect::<Result<_>>()?;
            let (f, w, b) = forward(model, &mut g, &vars, &x)?;
            let loss = cross_entropy(
                &mut g,
                &LossInput {
                    embeddings: f,
                    labels: &labels,
                    class_weights: w,
                    bias: Some(b),
                },
            )?;
            g.backward(loss)?;
            for (k, v) in &vars {
                let grad = g.grad(*v).map(<[f64]>::to_vec).unwrap_or_default();
                optim.step(k, params.get_mut(k).unwrap().data_mut(), &grad, cfg.lr)?;
            }
        }
    }
    let idx: Vec<usize> = (0..eval.len()).collect();
    let mut correct = 0;
    for chunk in idx.chunks(256) {
        let (x, labels) = data.batch::<rand_chacha::ChaCha8Rng>(eval, chunk, None)?;
        let pred = scores(model, &params, &x)?;
        correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / eval.len() as f64)
}
