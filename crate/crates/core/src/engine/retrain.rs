use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::metrics::{MetricsRow, Phase};
use super::train::{evaluate, train_step};
use crate::arch::{ArchEncoding, NetworkPlan, SharedParams};
use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::schedule::OptimState;
use crate::tensor::Tensor;
use crate::util::stream_rng;

pub(crate) const STREAM_RETRAIN: u64 = 3;

/// Shuffled minibatches over `0..n`; a trailing batch of one is dropped
/// since batch norm cannot train on it.
pub(crate) fn shuffled_batches<R: rand::Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainResult {
    pub arch: String,
    /// Test accuracy after the last epoch.
    pub test_accuracy: f64,
    /// Test accuracy after every epoch.
    pub curve: Vec<f64>,
    pub rows: Vec<MetricsRow>,
    pub param_count: usize,
    pub latency: f64,
}

/// Trains `arch` from a fresh initialisation on train plus validation and
/// tracks test accuracy per epoch. `run` separates the random streams of
/// different retrains under one seed.
pub fn retrain_fixed(arch: &ArchEncoding, cfg: &RunConfig, data: &SplitDataset, run: u64) -> Result<RetrainResult> {
    cfg.validate()?;
    cfg.validate_augment(data.height, data.width)?;
    if data.test.is_empty() {
        return Err(Error::config("data.ratios", "test split is empty"));
    }
    let net = cfg.supernet_config(data.channels, data.height, data.width, data.n_classes);
    let mut store = SharedParams::init(net, &mut stream_rng(cfg.seed, &[STREAM_RETRAIN, run, 0]))?;
    let plan = NetworkPlan::compile(arch, &store)?;
    let latency = cfg.reward.latency_model()?.measure(
        &plan,
        &mut store,
        &Tensor::zeros(&[1, data.channels, data.height, data.width]),
    )?;
    let train = data.train.merged(&data.validation);
    let schedule = cfg.schedule_for(cfg.retrain.epochs);
    let loss_cfg = cfg.loss();
    let mut optim = OptimState::new(cfg.train.momentum, cfg.train.weight_decay);
    let mut curve = Vec::with_capacity(cfg.retrain.epochs);
    let mut rows = Vec::with_capacity(cfg.retrain.epochs);
    for epoch in 0..cfg.retrain.epochs {
        let mut rng = stream_rng(cfg.seed, &[STREAM_RETRAIN, run, 1, epoch as u64]);
        let batches = shuffled_batches(train.len(), cfg.train.batch_size, &mut rng);
        let mut total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let lr = schedule.lr_at(epoch as f64 + b as f64 / batches.len() as f64);
            let (x, labels) = data.batch(&train, idx, Some((&cfg.data.augment, &mut rng)))?;
            total += train_step(&plan, &mut store, &mut optim, &x, &labels, &loss_cfg, lr, &mut rng)?;
        }
        let acc = evaluate(&plan, &mut store, data, &data.test, cfg.train.eval_batch_size, &loss_cfg, &mut rng)?;
        curve.push(acc);
        rows.push(MetricsRow {
            epoch,
            phase: Phase::Retrain,
            loss: Some(total / batches.len().max(1) as f64),
            val_acc: Some(acc),
            latency: Some(latency),
            reward: None,
            lr: schedule.lr_at(epoch as f64),
            clamp_count: 0,
        });
    }
    Ok(RetrainResult {
        arch: arch.encode(),
        test_accuracy: *curve.last().unwrap(),
        curve,
        rows,
        param_count: plan.param_count(),
        latency,
    })
}
