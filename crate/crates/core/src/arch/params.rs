use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::encoding::OpKind;
use crate::error::{Error, Result};
use crate::nn::RunningStats;
use crate::tensor::Tensor;

/// Number of stride-2 reductions in the network. They follow the first
/// `REDUCTIONS` nodes.
pub const REDUCTIONS: usize = 3;

/// Geometry of the shared supernetwork.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupernetConfig {
    pub nodes: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub stem_channels: usize,
    pub n_classes: usize,
    #[serde(default = "default_keep_prob")]
    pub dropblock_keep_prob: f64,
}

fn default_keep_prob() -> f64 {
    crate::nn::DEFAULT_KEEP_PROB
}

impl SupernetConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nodes", self.nodes),
            ("in_channels", self.in_channels),
            ("height", self.height),
            ("width", self.width),
            ("stem_channels", self.stem_channels),
            ("n_classes", self.n_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("model.{name}"), "must be positive"));
            }
        }
        let scale = 1 << self.nodes.min(REDUCTIONS);
        if self.height % scale != 0 || self.width % scale != 0 {
            return Err(Error::config(
                "model.height",
                format!("{}×{} input must be divisible by {scale}", self.height, self.width),
            ));
        }
        if !(self.dropblock_keep_prob > 0.0 && self.dropblock_keep_prob <= 1.0) {
            return Err(Error::config("model.dropblock_keep_prob", "must be in (0, 1]"));
        }
        Ok(())
    }

    /// Reductions applied before node `i`'s output reaches node `i + 1`.
    pub fn stage(&self, node: usize) -> usize {
        node.min(REDUCTIONS)
    }

    pub fn channels(&self, stage: usize) -> usize {
        self.stem_channels << stage
    }

    pub fn spatial(&self, stage: usize) -> (usize, usize) {
        (self.height >> stage, self.width >> stage)
    }

    /// Stage of the tensor entering the head.
    pub fn head_stage(&self) -> usize {
        self.nodes.min(REDUCTIONS)
    }
}

pub(crate) fn node_op_key(node: usize, op: OpKind) -> String {
    format!("node{node}.{}", op.name())
}

pub(crate) fn node_reduce_key(node: usize) -> String {
    format!("node{node}.reduce")
}

pub(crate) fn skip_key(src: usize, dst: usize) -> String {
    format!("skip{src}to{dst}")
}

/// All trainable weights and batch-norm statistics of the supernetwork.
///
/// Every architecture of the search space reads its layers from this store;
/// nothing is allocated per sampled architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedParams {
    config: SupernetConfig,
    params: BTreeMap<String, Tensor>,
    stats: BTreeMap<String, RunningStats>,
}

struct Init<'a, R: Rng + ?Sized> {
    params: BTreeMap<String, Tensor>,
    stats: BTreeMap<String, RunningStats>,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Init<'_, R> {
    fn conv(&mut self, key: String, shape: Vec<usize>) {
        // He-normal over the receptive field.
        let fan_in: usize = shape[1..].iter().product();
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(self.rng)).collect();
        self.params.insert(key, Tensor::new(shape, data).unwrap());
    }

    fn bn(&mut self, key: String, c: usize) {
        self.params.insert(format!("{key}.gamma"), Tensor::full(&[c], 1.0));
        self.params.insert(format!("{key}.beta"), Tensor::zeros(&[c]));
        self.stats.insert(key, RunningStats::new(c));
    }

    fn reduction(&mut self, key: &str, c: usize) {
        self.conv(format!("{key}.path1"), vec![c, c, 1, 1]);
        self.conv(format!("{key}.path2"), vec![c, c, 1, 1]);
        self.bn(format!("{key}.bn"), 2 * c);
    }
}

impl SharedParams {
    pub fn init<R: Rng + ?Sized>(config: SupernetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut it = Init {
            params: BTreeMap::new(),
            stats: BTreeMap::new(),
            rng,
        };
        let c0 = config.stem_channels;
        it.conv("stem.conv".into(), vec![c0, config.in_channels, 3, 3]);
        it.bn("stem.bn".into(), c0);
        for i in 0..config.nodes {
            let c = config.channels(config.stage(i));
            for op in OpKind::ALL {
                let key = node_op_key(i, op);
                it.conv(format!("{key}.conv_in"), vec![c, c, 1, 1]);
                match op {
                    OpKind::Sep3 | OpKind::Sep5 => {
                        let k = if op == OpKind::Sep3 { 3 } else { 5 };
                        it.conv(format!("{key}.depthwise"), vec![c, k, k]);
                        it.conv(format!("{key}.pointwise"), vec![c, c, 1, 1]);
                    }
                    OpKind::AvgPool | OpKind::MaxPool => {}
                }
                it.bn(format!("{key}.bn"), c);
            }
            if i < REDUCTIONS {
                it.reduction(&node_reduce_key(i), c);
            }
            for j in 0..i {
                let key = skip_key(j, i);
                let cj = config.channels(config.stage(j));
                it.conv(format!("{key}.conv"), vec![cj, cj, 1, 1]);
                it.bn(format!("{key}.bn"), cj);
                for (r, stage) in (config.stage(j)..config.stage(i)).enumerate() {
                    it.reduction(&format!("{key}.reduce{r}"), config.channels(stage));
                }
            }
        }
        let ch = config.channels(config.head_stage());
        it.conv("head.merge".into(), vec![ch, ch, 1, 1]);
        it.bn("head.bn".into(), ch);
        let bound = 1.0 / (ch as f64).sqrt();
        let fc = (0..ch * config.n_classes)
            .map(|_| it.rng.random_range(-bound..bound))
            .collect();
        it.params
            .insert("head.fc.weight".into(), Tensor::new(vec![ch, config.n_classes], fc).unwrap());
        it.params
            .insert("head.fc.bias".into(), Tensor::zeros(&[config.n_classes]));
        Ok(Self {
            config,
            params: it.params,
            stats: it.stats,
        })
    }

    pub fn config(&self) -> &SupernetConfig {
        &self.config
    }

    pub fn param(&self, key: &str) -> Result<&Tensor> {
        self.params
            .get(key)
            .ok_or_else(|| Error::Contract(format!("no parameter `{key}` in the store")))
    }

    pub fn param_mut(&mut self, key: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(key)
            .ok_or_else(|| Error::Contract(format!("no parameter `{key}` in the store")))
    }

    pub fn stats_mut(&mut self, key: &str) -> Result<&mut RunningStats> {
        self.stats
            .get_mut(key)
            .ok_or_else(|| Error::Contract(format!("no batch-norm statistics `{key}`")))
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn stats(&self) -> &BTreeMap<String, RunningStats> {
        &self.stats
    }

    pub fn total_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Flattens weights and running statistics into named tensors, the
    /// statistics under `<key>.running_mean` / `<key>.running_var`.
    pub fn to_named(&self) -> BTreeMap<String, Tensor> {
        let mut out = self.params.clone();
        for (k, s) in &self.stats {
            out.insert(format!("{k}.running_mean"), Tensor::from_vec(s.mean.clone()));
            out.insert(format!("{k}.running_var"), Tensor::from_vec(s.var.clone()));
        }
        out
    }

    /// Overwrites every tensor from `named`, which must hold exactly the
    /// entries [`Self::to_named`] produces, with matching shapes.
    pub fn load_named(&mut self, named: &BTreeMap<String, Tensor>) -> Result<()> {
        let expected = self.params.len() + 2 * self.stats.len();
        if named.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} child tensors, found {}",
                named.len()
            )));
        }
        let fetch = |k: &str, shape: &[usize]| -> Result<&Tensor> {
            let t = named
                .get(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{k}`")))?;
            if t.shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{k}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        for (k, p) in self.params.iter_mut() {
            let t = fetch(k, p.shape())?;
            p.data_mut().copy_from_slice(t.data());
        }
        for (k, s) in self.stats.iter_mut() {
            let c = s.mean.len();
            s.mean.copy_from_slice(fetch(&format!("{k}.running_mean"), &[c])?.data());
            s.var.copy_from_slice(fetch(&format!("{k}.running_var"), &[c])?.data());
        }
        Ok(())
    }

    /// Order-sensitive 64-bit FNV-1a hash of every weight's bit pattern.
    pub fn weight_hash(&self) -> u64 {
        let mut h = crate::util::Fnv64::new();
        for (k, t) in &self.params {
            h.write(k.as_bytes());
            for v in t.data() {
                h.write(&v.to_bits().to_le_bytes());
            }
        }
        h.finish()
    }
}
