use std::collections::BTreeSet;

use rand::Rng;

use super::encoding::{ArchEncoding, OpKind};
use super::params::{node_op_key, node_reduce_key, skip_key, SharedParams, SupernetConfig, REDUCTIONS};
use crate::error::{Error, Result};
use crate::nn::{
    batch_norm, conv2d, depthwise_conv2d, dropblock, global_avg_pool, out_dim, pool2d,
    shift_window, BnMode, PoolKind, DEFAULT_BLOCK_SIZE,
};
use crate::tensor::{Graph, Var};

/// One layer of a compiled network. Parameter fields are store keys.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Input,
    Conv { weight: String, kernel: usize, stride: usize, pad: usize },
    Depthwise { weight: String, kernel: usize, pad: usize },
    BatchNorm { key: String },
    Relu,
    Pool { kind: PoolKind, kernel: usize, stride: usize, pad: usize },
    /// Window moved one pixel down and right, zero-filled.
    Shift,
    /// Channel concatenation of the inputs.
    Concat,
    /// Elementwise sum of the inputs.
    Sum,
    DropBlock { block: usize },
    GlobalPool,
    Linear { weight: String, bias: String },
}

impl Layer {
    /// Name used to look up this layer's cost coefficients.
    pub fn cost_name(&self) -> &'static str {
        match self {
            Layer::Input => "input",
            Layer::Conv { .. } => "conv",
            Layer::Depthwise { .. } => "depthwise",
            Layer::BatchNorm { .. } => "batch_norm",
            Layer::Relu => "relu",
            Layer::Pool { .. } => "pool",
            Layer::Shift => "shift",
            Layer::Concat => "concat",
            Layer::Sum => "sum",
            Layer::DropBlock { .. } => "dropblock",
            Layer::GlobalPool => "global_pool",
            Layer::Linear { .. } => "linear",
        }
    }

    fn param_keys(&self) -> Vec<String> {
        match self {
            Layer::Conv { weight, .. } | Layer::Depthwise { weight, .. } => vec![weight.clone()],
            Layer::BatchNorm { key } => vec![format!("{key}.gamma"), format!("{key}.beta")],
            Layer::Linear { weight, bias } => vec![weight.clone(), bias.clone()],
            _ => vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub layer: Layer,
    /// Indices of earlier steps.
    pub inputs: Vec<usize>,
    /// Per-sample output shape (`C×H×W`, or `D` after pooling).
    pub shape: Vec<usize>,
    /// Multiply-accumulates (or elementwise ops) per sample.
    pub macs: u64,
}

/// A sampled architecture lowered to a straight-line list of layers over
/// the shared store.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkPlan {
    arch: ArchEncoding,
    steps: Vec<Step>,
    param_count: usize,
    keep_prob: f64,
}

struct Builder<'a> {
    steps: Vec<Step>,
    store: &'a SharedParams,
}

impl Builder<'_> {
    fn push(&mut self, layer: Layer, inputs: Vec<usize>, shape: Vec<usize>, macs: u64) -> Result<usize> {
        for k in layer.param_keys() {
            self.store.param(&k)?;
        }
        if let Layer::BatchNorm { key } = &layer {
            if !self.store.stats().contains_key(key) {
                return Err(Error::Contract(format!("no batch-norm statistics `{key}`")));
            }
        }
        self.steps.push(Step { layer, inputs, shape, macs });
        Ok(self.steps.len() - 1)
    }

    fn chw(&self, i: usize) -> (usize, usize, usize) {
        let s = &self.steps[i].shape;
        (s[0], s[1], s[2])
    }

    fn conv(&mut self, x: usize, weight: String, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
        let (c, h, w) = self.chw(x);
        let ws = self.store.param(&weight)?.shape().to_vec();
        if ws != [ws[0], c, kernel, kernel] {
            return Err(Error::Contract(format!("weight `{weight}` {ws:?} does not fit {c} input channels")));
        }
        let (oh, ow) = (out_dim(h, kernel, stride, pad)?, out_dim(w, kernel, stride, pad)?);
        let macs = (ws[0] * c * kernel * kernel * oh * ow) as u64;
        self.push(
            Layer::Conv { weight, kernel, stride, pad },
            vec![x],
            vec![ws[0], oh, ow],
            macs,
        )
    }

    fn depthwise(&mut self, x: usize, weight: String, kernel: usize) -> Result<usize> {
        let (c, h, w) = self.chw(x);
        let pad = kernel / 2;
        let macs = (c * kernel * kernel * h * w) as u64;
        self.push(Layer::Depthwise { weight, kernel, pad }, vec![x], vec![c, h, w], macs)
    }

    fn elementwise(&mut self, layer: Layer, inputs: Vec<usize>) -> Result<usize> {
        let shape = self.steps[inputs[0]].shape.clone();
        if inputs.iter().any(|&i| self.steps[i].shape != shape) {
            return Err(Error::Dimension(format!("{layer:?} over mismatched shapes")));
        }
        let n: usize = shape.iter().product();
        let macs = (n * inputs.len().max(2).saturating_sub(1)) as u64;
        self.push(layer, inputs, shape, macs)
    }

    fn bn(&mut self, x: usize, key: String) -> Result<usize> {
        self.elementwise(Layer::BatchNorm { key }, vec![x])
    }

    fn relu(&mut self, x: usize) -> Result<usize> {
        self.elementwise(Layer::Relu, vec![x])
    }

    fn pool(&mut self, x: usize, kind: PoolKind, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
        let (c, h, w) = self.chw(x);
        let (oh, ow) = (out_dim(h, kernel, stride, pad)?, out_dim(w, kernel, stride, pad)?);
        let macs = (c * oh * ow * kernel * kernel) as u64;
        self.push(Layer::Pool { kind, kernel, stride, pad }, vec![x], vec![c, oh, ow], macs)
    }

    /// Two stride-2 paths, the second offset by one pixel, concatenated and
    /// normalised: `C×H×W → 2C×H/2×W/2`.
    fn reduction(&mut self, x: usize, key: &str) -> Result<usize> {
        let (_, h, w) = self.chw(x);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Dimension(format!("factor reduction needs even dims, got {h}×{w}")));
        }
        let p1 = self.pool(x, PoolKind::Avg, 1, 2, 0)?;
        let p1 = self.conv(p1, format!("{key}.path1"), 1, 1, 0)?;
        let s = self.elementwise(Layer::Shift, vec![x])?;
        let p2 = self.pool(s, PoolKind::Avg, 1, 2, 0)?;
        let p2 = self.conv(p2, format!("{key}.path2"), 1, 1, 0)?;
        let (c1, oh, ow) = self.chw(p1);
        let c2 = self.chw(p2).0;
        let cat = self.push(Layer::Concat, vec![p1, p2], vec![c1 + c2, oh, ow], ((c1 + c2) * oh * ow) as u64)?;
        self.bn(cat, format!("{key}.bn"))
    }

    fn node_op(&mut self, x: usize, node: usize, op: OpKind) -> Result<usize> {
        let key = node_op_key(node, op);
        let a = self.conv(x, format!("{key}.conv_in"), 1, 1, 0)?;
        match op {
            OpKind::Sep3 | OpKind::Sep5 => {
                let k = if op == OpKind::Sep3 { 3 } else { 5 };
                let d = self.depthwise(a, format!("{key}.depthwise"), k)?;
                let p = self.conv(d, format!("{key}.pointwise"), 1, 1, 0)?;
                let n = self.bn(p, format!("{key}.bn"))?;
                self.relu(n)
            }
            OpKind::AvgPool | OpKind::MaxPool => {
                let kind = if op == OpKind::AvgPool { PoolKind::Avg } else { PoolKind::Max };
                let n = self.bn(a, format!("{key}.bn"))?;
                let (_, h, w) = self.chw(n);
                // Odd windows keep the map size; tiny maps fall back to 1×1.
                let k = if h.min(w) >= 3 { 3 } else { 1 };
                self.pool(n, kind, k, 1, k / 2)
            }
        }
    }
}

impl NetworkPlan {
    /// Lowers `arch` onto `store`. Deterministic in its inputs.
    pub fn compile(arch: &ArchEncoding, store: &SharedParams) -> Result<Self> {
        let cfg: &SupernetConfig = store.config();
        if arch.len() != cfg.nodes {
            return Err(Error::Contract(format!(
                "architecture has {} nodes, store was built for {}",
                arch.len(),
                cfg.nodes
            )));
        }
        let mut b = Builder { steps: Vec::new(), store };
        let input = b.push(Layer::Input, vec![], vec![cfg.in_channels, cfg.height, cfg.width], 0)?;
        let stem = b.conv(input, "stem.conv".into(), 3, 1, 1)?;
        let mut chain = b.bn(stem, "stem.bn".into())?;
        let mut outputs = Vec::with_capacity(arch.len());
        for (i, node) in arch.nodes().iter().enumerate() {
            let mut terms = vec![chain];
            for &j in &node.skips {
                let key = skip_key(j, i);
                let r = b.relu(outputs[j])?;
                let c = b.conv(r, format!("{key}.conv"), 1, 1, 0)?;
                let mut s = b.bn(c, format!("{key}.bn"))?;
                for r in 0..cfg.stage(i) - cfg.stage(j) {
                    s = b.reduction(s, &format!("{key}.reduce{r}"))?;
                }
                terms.push(s);
            }
            let x = if terms.len() == 1 { chain } else { b.elementwise(Layer::Sum, terms)? };
            let out = b.node_op(x, i, node.op)?;
            outputs.push(out);
            chain = if i < REDUCTIONS { b.reduction(out, &node_reduce_key(i))? } else { out };
        }
        // With the chain always linking node i to i + 1, the last node is the
        // only one whose output is not consumed downstream.
        let m = b.conv(chain, "head.merge".into(), 1, 1, 0)?;
        let m = b.bn(m, "head.bn".into())?;
        let m = b.relu(m)?;
        let (c, h, w) = b.chw(m);
        let block = DEFAULT_BLOCK_SIZE.min(h).min(w);
        let d = b.push(Layer::DropBlock { block }, vec![m], vec![c, h, w], 0)?;
        let e = b.push(Layer::GlobalPool, vec![d], vec![c], (c * h * w) as u64)?;
        b.push(
            Layer::Linear { weight: "head.fc.weight".into(), bias: "head.fc.bias".into() },
            vec![e],
            vec![cfg.n_classes],
            (c * cfg.n_classes) as u64,
        )?;
        let keys: BTreeSet<String> = b.steps.iter().flat_map(|s| s.layer.param_keys()).collect();
        let param_count = keys.iter().map(|k| store.param(k).map(|t| t.len())).sum::<Result<usize>>()?;
        Ok(Self {
            arch: arch.clone(),
            steps: b.steps,
            param_count,
            keep_prob: cfg.dropblock_keep_prob,
        })
    }

    pub fn arch(&self) -> &ArchEncoding {
        &self.arch
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// Trainable scalars this architecture uses.
    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn total_macs(&self) -> u64 {
        self.steps.iter().map(|s| s.macs).sum()
    }

    /// Store keys of every parameter the plan reads, in first-use order.
    pub fn param_keys(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.steps
            .iter()
            .flat_map(|s| s.layer.param_keys())
            .filter(|k| seen.insert(k.clone()))
            .collect()
    }

    /// Runs the plan on a `B×C×H×W` batch.
    ///
    /// In [`BnMode::Train`] parameters are recorded as gradient-requiring
    /// leaves, running statistics are updated and dropblock is active. The
    /// other modes leave the store untouched.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        store: &mut SharedParams,
        g: &mut Graph,
        x: Var,
        mode: BnMode,
        rng: &mut R,
    ) -> Result<ForwardOutput> {
        let want = &self.steps[0].shape;
        let got = g.shape(x).to_vec();
        if got.len() != 4 || got[1..] != want[..] {
            return Err(Error::Dimension(format!("input {got:?} does not match plan input {want:?}")));
        }
        let batch = got[0];
        let training = mode == BnMode::Train;
        let mut bound: Vec<(String, Var)> = Vec::new();
        let mut bind = |g: &mut Graph, store: &SharedParams, key: &str| -> Result<Var> {
            let t = store.param(key)?;
            let v = g.leaf(t.shape().to_vec(), t.data().to_vec(), training)?;
            bound.push((key.to_string(), v));
            Ok(v)
        };
        let mut vals: Vec<Var> = Vec::with_capacity(self.steps.len());
        let mut fc = None;
        for step in &self.steps {
            let a = step.inputs.first().map(|&i| vals[i]);
            let v = match &step.layer {
                Layer::Input => x,
                Layer::Conv { weight, stride, pad, .. } => {
                    let w = bind(g, store, weight)?;
                    conv2d(g, a.unwrap(), w, *stride, *pad)?
                }
                Layer::Depthwise { weight, pad, .. } => {
                    let w = bind(g, store, weight)?;
                    depthwise_conv2d(g, a.unwrap(), w, 1, *pad)?
                }
                Layer::BatchNorm { key } => {
                    let gamma = bind(g, store, &format!("{key}.gamma"))?;
                    let beta = bind(g, store, &format!("{key}.beta"))?;
                    batch_norm(g, a.unwrap(), gamma, beta, store.stats_mut(key)?, mode)?
                }
                Layer::Relu => g.relu(a.unwrap()),
                Layer::Pool { kind, kernel, stride, pad } => pool2d(g, a.unwrap(), *kind, *kernel, *stride, *pad)?,
                Layer::Shift => shift_window(g, a.unwrap(), 1, 1)?,
                Layer::Concat => {
                    let parts: Vec<Var> = step.inputs.iter().map(|&i| vals[i]).collect();
                    g.concat(&parts, 1)?
                }
                Layer::Sum => {
                    let mut acc = a.unwrap();
                    for &i in &step.inputs[1..] {
                        acc = g.add(acc, vals[i])?;
                    }
                    acc
                }
                Layer::DropBlock { block } => dropblock(g, a.unwrap(), *block, self.keep_prob, training, rng)?,
                Layer::GlobalPool => global_avg_pool(g, a.unwrap())?,
                Layer::Linear { weight, bias } => {
                    let w = bind(g, store, weight)?;
                    let b = bind(g, store, bias)?;
                    fc = Some((a.unwrap(), w, b));
                    let z = g.matmul(a.unwrap(), w)?;
                    g.add(z, b)?
                }
            };
            let actual = g.shape(v);
            if actual[0] != batch || actual[1..] != step.shape[..] {
                return Err(Error::Dimension(format!(
                    "{:?} produced {actual:?}, plan declared {:?}",
                    step.layer.cost_name(),
                    step.shape
                )));
            }
            vals.push(v);
        }
        let (embeddings, fc_weight, fc_bias) =
            fc.ok_or_else(|| Error::Contract("plan has no classifier".into()))?;
        Ok(ForwardOutput {
            logits: *vals.last().unwrap(),
            embeddings,
            fc_weight,
            fc_bias,
            bound,
            activations: vals,
        })
    }
}

/// Handles produced by [`NetworkPlan::forward`].
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    /// Pooled features entering the classifier.
    pub embeddings: Var,
    pub fc_weight: Var,
    pub fc_bias: Var,
    /// Store key and graph leaf of every parameter used.
    pub bound: Vec<(String, Var)>,
    /// Output of every plan step, in step order.
    pub activations: Vec<Var>,
}
