use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::metrics::{MetricsRow, Phase, SampleRecord};
use super::rank::{rank_architectures, RankedArch};
use super::retrain::shuffled_batches;
use super::train::{accuracy_on, train_step};
use crate::arch::{ArchEncoding, NetworkPlan, SharedParams};
use crate::controller::Controller;
use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::nn::BnMode;
use crate::reward::LatencyModel;
use crate::schedule::OptimState;
use crate::tensor::Tensor;
use crate::util::stream_rng;

const STREAM_INIT: u64 = 0;
const STREAM_CHILD: u64 = 1;
const STREAM_CONTROLLER: u64 = 2;

/// What a controller evaluation sees of a sampled child.
pub struct EvalContext<'a> {
    pub plan: &'a NetworkPlan,
    pub store: &'a mut SharedParams,
    pub data: &'a SplitDataset,
    /// Validation samples of this controller step.
    pub batch: &'a [usize],
    pub loss: &'a LossConfig,
    pub rng: &'a mut dyn rand::RngCore,
}

/// Accuracy signal fed into the reward.
pub trait AccuracyOracle {
    fn accuracy(&mut self, arch: &ArchEncoding, ctx: EvalContext<'_>) -> Result<f64>;
}

/// Top-1 accuracy of the shared-weight child on the step's validation
/// batch, normalised with that batch's own statistics.
#[derive(Clone, Copy, Debug, Default)]
pub struct SharedWeightAccuracy;

impl AccuracyOracle for SharedWeightAccuracy {
    fn accuracy(&mut self, _arch: &ArchEncoding, ctx: EvalContext<'_>) -> Result<f64> {
        let n = ctx.batch.len();
        accuracy_on(
            ctx.plan,
            ctx.store,
            ctx.data,
            &ctx.data.validation,
            ctx.batch,
            n,
            ctx.loss,
            BnMode::BatchStats,
            ctx.rng,
        )
    }
}

impl<F: FnMut(&ArchEncoding) -> f64> AccuracyOracle for F {
    fn accuracy(&mut self, arch: &ArchEncoding, _ctx: EvalContext<'_>) -> Result<f64> {
        Ok(self(arch))
    }
}

/// Parameter fingerprints around each phase of one epoch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseAudit {
    pub epoch: usize,
    pub controller_before_child: u64,
    pub controller_after_child: u64,
    pub weights_before_controller: u64,
    pub weights_after_controller: u64,
}

impl PhaseAudit {
    pub fn separated(&self) -> bool {
        self.controller_before_child == self.controller_after_child
            && self.weights_before_controller == self.weights_after_controller
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct SearchMeta {
    epoch: usize,
    val_cursor: usize,
    history: Vec<SampleRecord>,
    rows: Vec<MetricsRow>,
    audit: Vec<PhaseAudit>,
}

/// Everything the search carries from one epoch to the next.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchState {
    /// Next epoch to run.
    pub epoch: usize,
    pub store: SharedParams,
    pub controller: Controller,
    pub optim: OptimState,
    pub history: Vec<SampleRecord>,
    pub rows: Vec<MetricsRow>,
    pub audit: Vec<PhaseAudit>,
    val_cursor: usize,
}

fn check_data(cfg: &RunConfig, data: &SplitDataset) -> Result<()> {
    cfg.validate()?;
    cfg.validate_augment(data.height, data.width)?;
    if data.validation.is_empty() {
        return Err(Error::config("data.ratios", "validation split is empty"));
    }
    if data.train.len() < 2 {
        return Err(Error::config("data.ratios", "training split needs at least 2 samples"));
    }
    Ok(())
}

impl SearchState {
    pub fn new(cfg: &RunConfig, data: &SplitDataset) -> Result<Self> {
        check_data(cfg, data)?;
        let net = cfg.supernet_config(data.channels, data.height, data.width, data.n_classes);
        let store = SharedParams::init(net, &mut stream_rng(cfg.seed, &[STREAM_INIT, 0]))?;
        let controller = Controller::new(
            cfg.search.nodes,
            cfg.controller.policy.clone(),
            &mut stream_rng(cfg.seed, &[STREAM_INIT, 1]),
        )?;
        Ok(Self {
            epoch: 0,
            store,
            controller,
            optim: OptimState::new(cfg.train.momentum, cfg.train.weight_decay),
            history: Vec::new(),
            rows: Vec::new(),
            audit: Vec::new(),
            val_cursor: 0,
        })
    }

    fn next_val_batch(&mut self, n: usize, size: usize) -> Vec<usize> {
        let out = (0..size.min(n)).map(|i| (self.val_cursor + i) % n).collect();
        self.val_cursor = (self.val_cursor + size.min(n)) % n;
        out
    }

    /// Shared-weight training: one momentum step per training batch on an
    /// architecture freshly sampled from the controller.
    fn child_phase(&mut self, cfg: &RunConfig, data: &SplitDataset) -> Result<MetricsRow> {
        let epoch = self.epoch;
        let schedule = cfg.schedule_for(cfg.search.epochs);
        let loss_cfg = cfg.loss();
        let mut order_rng = stream_rng(cfg.seed, &[STREAM_CHILD, epoch as u64, u64::MAX]);
        let batches = shuffled_batches(data.train.len(), cfg.train.batch_size, &mut order_rng);
        let mut total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let mut rng = stream_rng(cfg.seed, &[STREAM_CHILD, epoch as u64, b as u64]);
            let trace = self.controller.sample(&mut rng)?;
            let plan = NetworkPlan::compile(&trace.arch, &self.store)?;
            let (x, labels) = data.batch(&data.train, idx, Some((&cfg.data.augment, &mut rng)))?;
            let lr = schedule.lr_at(epoch as f64 + b as f64 / batches.len() as f64);
            total += train_step(&plan, &mut self.store, &mut self.optim, &x, &labels, &loss_cfg, lr, &mut rng)?;
        }
        Ok(MetricsRow {
            epoch,
            phase: Phase::Child,
            loss: Some(total / batches.len().max(1) as f64),
            val_acc: None,
            latency: None,
            reward: None,
            lr: schedule.lr_at(epoch as f64),
            clamp_count: 0,
        })
    }

    fn controller_phase(
        &mut self,
        cfg: &RunConfig,
        data: &SplitDataset,
        latency: &mut LatencyCache,
        oracle: &mut dyn AccuracyOracle,
    ) -> Result<MetricsRow> {
        let epoch = self.epoch;
        let lr = cfg.controller.lr.lr_at(epoch);
        let loss_cfg = cfg.loss();
        let (mut acc_sum, mut lat_sum, mut reward_sum, mut clamps, mut count) = (0.0, 0.0, 0.0, 0, 0usize);
        for step in 0..cfg.search.controller_steps {
            let mut rng = stream_rng(cfg.seed, &[STREAM_CONTROLLER, epoch as u64, step as u64]);
            let batch = self.next_val_batch(data.validation.len(), cfg.train.eval_batch_size);
            let mut traces = Vec::with_capacity(cfg.search.samples_per_step);
            let mut rewards = Vec::with_capacity(cfg.search.samples_per_step);
            for _ in 0..cfg.search.samples_per_step {
                let trace = self.controller.sample(&mut rng)?;
                let plan = NetworkPlan::compile(&trace.arch, &self.store)?;
                let acc = oracle.accuracy(
                    &trace.arch,
                    EvalContext {
                        plan: &plan,
                        store: &mut self.store,
                        data,
                        batch: &batch,
                        loss: &loss_cfg,
                        rng: &mut rng,
                    },
                )?;
                let lat = latency.get(&trace.arch, &plan, &mut self.store)?;
                let r = latency.model.reward(acc, lat)?;
                self.history.push(SampleRecord {
                    index: self.history.len(),
                    epoch,
                    step,
                    arch: trace.arch.encode(),
                    accuracy: acc,
                    latency: lat,
                    reward: r.reward,
                    clamped: r.clamped,
                    log_prob: trace.log_prob,
                });
                acc_sum += acc;
                lat_sum += lat;
                reward_sum += r.reward;
                clamps += r.clamped as usize;
                count += 1;
                rewards.push(r.reward);
                traces.push(trace);
            }
            self.controller.reinforce_update(&traces, &rewards, lr)?;
        }
        let n = count.max(1) as f64;
        Ok(MetricsRow {
            epoch,
            phase: Phase::Controller,
            loss: None,
            val_acc: Some(acc_sum / n),
            latency: Some(lat_sum / n),
            reward: Some(reward_sum / n),
            lr,
            clamp_count: clamps,
        })
    }

    /// Runs one epoch of both phases.
    pub fn run_epoch(
        &mut self,
        cfg: &RunConfig,
        data: &SplitDataset,
        latency: &mut LatencyCache,
        oracle: &mut dyn AccuracyOracle,
    ) -> Result<()> {
        if self.epoch >= cfg.search.epochs {
            return Err(Error::Contract(format!("search already ran {} epochs", self.epoch)));
        }
        let c0 = self.controller.param_hash();
        let child = self.child_phase(cfg, data)?;
        let c1 = self.controller.param_hash();
        let w0 = self.store.weight_hash();
        let ctrl = self.controller_phase(cfg, data, latency, oracle)?;
        let w1 = self.store.weight_hash();
        self.rows.push(child);
        self.rows.push(ctrl);
        self.audit.push(PhaseAudit {
            epoch: self.epoch,
            controller_before_child: c0,
            controller_after_child: c1,
            weights_before_controller: w0,
            weights_after_controller: w1,
        });
        self.epoch += 1;
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        c.insert_group("supernet", self.store.to_named());
        c.insert_group("controller", self.controller.to_named());
        c.insert_group("optim", self.optim.to_named());
        c.meta = serde_json::to_value(SearchMeta {
            epoch: self.epoch,
            val_cursor: self.val_cursor,
            history: self.history.clone(),
            rows: self.rows.clone(),
            audit: self.audit.clone(),
        })
        .expect("search metadata serialises");
        c
    }

    /// Rebuilds a state saved by [`SearchState::to_checkpoint`] for the
    /// same configuration and dataset shape.
    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &RunConfig, data: &SplitDataset) -> Result<Self> {
        let mut s = Self::new(cfg, data)?;
        s.store.load_named(&ckpt.group("supernet"))?;
        s.controller.load_named(&ckpt.group("controller"))?;
        s.optim.load_named(&ckpt.group("optim"));
        let meta: SearchMeta = serde_json::from_value(ckpt.meta.clone())?;
        s.epoch = meta.epoch;
        s.val_cursor = meta.val_cursor;
        s.history = meta.history;
        s.rows = meta.rows;
        s.audit = meta.audit;
        Ok(s)
    }
}

/// Latency per architecture, measured once.
pub struct LatencyCache {
    pub model: LatencyModel,
    probe: Tensor,
    seen: HashMap<String, f64>,
}

impl LatencyCache {
    pub fn new(model: LatencyModel, data: &SplitDataset) -> Self {
        Self {
            model,
            probe: Tensor::zeros(&[1, data.channels, data.height, data.width]),
            seen: HashMap::new(),
        }
    }

    pub fn get(&mut self, arch: &ArchEncoding, plan: &NetworkPlan, store: &mut SharedParams) -> Result<f64> {
        let key = arch.encode();
        if let Some(&v) = self.seen.get(&key) {
            return Ok(v);
        }
        let v = self.model.measure(plan, store, &self.probe)?;
        self.seen.insert(key, v);
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub ranked: Vec<RankedArch>,
    pub state: SearchState,
}

impl SearchOutcome {
    /// The first `k` ranked architectures.
    pub fn top(&self, k: usize) -> &[RankedArch] {
        &self.ranked[..k.min(self.ranked.len())]
    }
}

/// Alternating search with the shared-weight accuracy signal.
pub fn search(cfg: &RunConfig, data: &SplitDataset) -> Result<SearchOutcome> {
    search_with(cfg, data, SearchState::new(cfg, data)?, &mut SharedWeightAccuracy, &mut |_| Ok(()))
}

/// Continues `state` to the configured epoch count. `after_epoch` sees the
/// state after every epoch, e.g. to write checkpoints.
pub fn search_with(
    cfg: &RunConfig,
    data: &SplitDataset,
    mut state: SearchState,
    oracle: &mut dyn AccuracyOracle,
    after_epoch: &mut dyn FnMut(&SearchState) -> Result<()>,
) -> Result<SearchOutcome> {
    check_data(cfg, data)?;
    let mut latency = LatencyCache::new(cfg.reward.latency_model()?, data);
    while state.epoch < cfg.search.epochs {
        state.run_epoch(cfg, data, &mut latency, oracle)?;
        after_epoch(&state)?;
    }
    let mut ranked = rank_architectures(&state.history, cfg.search.ranking)?;
    for r in ranked.iter_mut() {
        let plan = NetworkPlan::compile(&ArchEncoding::decode(&r.arch)?, &state.store)?;
        r.param_count = Some(plan.param_count());
    }
    Ok(SearchOutcome { ranked, state })
}

/// Uniformly random architecture for baseline comparisons.
pub fn random_arch<R: Rng + ?Sized>(nodes: usize, rng: &mut R) -> Result<ArchEncoding> {
    ArchEncoding::random(nodes, rng)
}
