//! Recurrent architecture sampler trained by REINFORCE.
//!
//! Decisions are emitted in a fixed order: for node `i`, one op choice
//! followed by one keep/drop bit for each earlier node. Each decision's token
//! embedding is the LSTM input for the next one.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchEncoding, NodeChoice, OpKind};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub const HIDDEN: usize = 100;
pub const EMBED: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Exponential moving average across updates.
    Ema,
    /// Mean reward of the current batch of traces.
    BatchMean,
}

/// How rewards are paired with traces in an update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Each trace is credited with its own reward.
    PerTrace,
    /// Every trace is credited with the batch-mean reward.
    Averaged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub hidden: usize,
    pub embed: usize,
    pub temperature: f64,
    pub entropy_weight: f64,
    pub baseline: BaselineKind,
    pub baseline_decay: f64,
    pub reward_mode: RewardMode,
    pub init_range: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            hidden: HIDDEN,
            embed: EMBED,
            temperature: 1.0,
            entropy_weight: 1e-4,
            baseline: BaselineKind::Ema,
            baseline_decay: 0.95,
            reward_mode: RewardMode::PerTrace,
            init_range: 0.1,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embed == 0 {
            return Err(Error::config("controller.hidden", "sizes must be positive"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("controller.temperature", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::config("controller.baseline_decay", "must be in [0, 1)"));
        }
        if self.entropy_weight < 0.0 || !self.entropy_weight.is_finite() {
            return Err(Error::config("controller.entropy_weight", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One sampled architecture with its decision tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    #[serde(with = "arch_string")]
    pub arch: ArchEncoding,
    pub decisions: Vec<usize>,
    /// Sum of chosen-token log-probabilities.
    pub log_prob: f64,
    /// Sum of per-decision entropies.
    pub entropy: f64,
}

mod arch_string {
    use super::ArchEncoding;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(a: &ArchEncoding, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&a.encode())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ArchEncoding, D::Error> {
        let s = String::deserialize(d)?;
        ArchEncoding::decode(&s).map_err(serde::de::Error::custom)
    }
}

/// Summary of one policy-gradient step.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateStats {
    pub mean_reward: f64,
    pub baseline_used: f64,
    pub baseline_after: f64,
    pub objective: f64,
}

const GATES: [&str; 4] = ["input", "forget", "output", "cell"];

/// LSTM policy plus its reward baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    cfg: ControllerConfig,
    nodes: usize,
    params: BTreeMap<String, Tensor>,
    baseline: Option<f64>,
}

enum Choose<'a, R: Rng + ?Sized> {
    Sample(&'a mut R),
    Argmax,
    Replay(&'a [usize]),
}

struct Rollout {
    decisions: Vec<usize>,
    log_prob: Var,
    entropy: Var,
}

impl Controller {
    /// LSTM weights uniform in `±init_range`; output heads start at zero so
    /// every decision is initially uniform.
    pub fn new<R: Rng + ?Sized>(nodes: usize, cfg: ControllerConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if nodes == 0 {
            return Err(Error::config("search.nodes", "must be positive"));
        }
        let (h, e, r) = (cfg.hidden, cfg.embed, cfg.init_range);
        let mut uniform = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-r..=r)).collect()).unwrap()
        };
        let mut params = BTreeMap::new();
        for gate in GATES {
            params.insert(format!("lstm.{gate}.wx"), uniform(&[e, h]));
            params.insert(format!("lstm.{gate}.wh"), uniform(&[h, h]));
            params.insert(format!("lstm.{gate}.b"), uniform(&[h]));
        }
        params.insert("embed.start".into(), uniform(&[1, e]));
        params.insert("embed.op".into(), uniform(&[OpKind::COUNT, e]));
        params.insert("embed.skip".into(), uniform(&[2, e]));
        params.insert("head.op.w".into(), Tensor::zeros(&[h, OpKind::COUNT]));
        params.insert("head.op.b".into(), Tensor::zeros(&[OpKind::COUNT]));
        for j in 0..nodes.saturating_sub(1) {
            params.insert(format!("head.skip{j}.w"), Tensor::zeros(&[h, 2]));
            params.insert(format!("head.skip{j}.b"), Tensor::zeros(&[2]));
        }
        Ok(Self {
            cfg,
            nodes,
            params,
            baseline: None,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.params
    }

    pub fn baseline(&self) -> Option<f64> {
        self.baseline
    }

    pub fn set_baseline(&mut self, b: Option<f64>) {
        self.baseline = b;
    }

    pub fn set_temperature(&mut self, t: f64) -> Result<()> {
        if !(t > 0.0) {
            return Err(Error::config("controller.temperature", "must be positive"));
        }
        self.cfg.temperature = t;
        Ok(())
    }

    pub fn decision_count(&self) -> usize {
        ArchEncoding::decision_count(self.nodes)
    }

    /// Draws one architecture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SampleTrace> {
        let mut g = Graph::new();
        let mut bound = BTreeMap::new();
        let r = self.rollout(&mut g, &mut bound, false, Choose::Sample(rng))?;
        self.finish(&g, r)
    }

    /// Most probable token at every step; ties go to the lowest index.
    pub fn argmax_decode(&self) -> Result<ArchEncoding> {
        let mut g = Graph::new();
        let mut bound = BTreeMap::new();
        let r = self.rollout::<rand_chacha::ChaCha8Rng>(&mut g, &mut bound, false, Choose::Argmax)?;
        Ok(self.finish(&g, r)?.arch)
    }

    /// Probabilities of the first op decision.
    pub fn first_op_probs(&self) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let mut bound = BTreeMap::new();
        let mut first = None;
        self.rollout_with(&mut g, &mut bound, false, |probs, idx| {
            if idx == 0 {
                first = Some(probs.to_vec());
            }
            Ok(0)
        })?;
        Ok(first.expect("at least one decision"))
    }

    /// Replays `decisions` on `g`, returning the summed log-probability and
    /// entropy. Entries of `fixed` stand in for the named parameters.
    pub fn replay(&self, g: &mut Graph, decisions: &[usize], fixed: &[(String, Var)]) -> Result<(Var, Var)> {
        let mut bound: BTreeMap<String, Var> = fixed.iter().cloned().collect();
        let r = self.rollout::<rand_chacha::ChaCha8Rng>(g, &mut bound, false, Choose::Replay(decisions))?;
        Ok((r.log_prob, r.entropy))
    }

    /// One gradient-ascent step on
    /// `mean_i (r_i - b) log p_i + entropy_weight * mean_i H_i`.
    pub fn reinforce_update(&mut self, traces: &[SampleTrace], rewards: &[f64], lr: f64) -> Result<UpdateStats> {
        if traces.is_empty() || traces.len() != rewards.len() {
            return Err(Error::Contract(format!(
                "{} traces with {} rewards",
                traces.len(),
                rewards.len()
            )));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::Contract("non-finite reward".into()));
        }
        let q = traces.len() as f64;
        let mean = rewards.iter().sum::<f64>() / q;
        let credited: Vec<f64> = match self.cfg.reward_mode {
            RewardMode::PerTrace => rewards.to_vec(),
            RewardMode::Averaged => vec![mean; traces.len()],
        };
        let baseline = match (self.cfg.baseline, self.baseline) {
            (BaselineKind::Ema, Some(b)) => b,
            _ => mean,
        };
        let mut g = Graph::new();
        let mut bound = BTreeMap::new();
        let mut objective: Option<Var> = None;
        for (t, &r) in traces.iter().zip(&credited) {
            let roll = self.rollout::<rand_chacha::ChaCha8Rng>(&mut g, &mut bound, true, Choose::Replay(&t.decisions))?;
            let a = g.scale(roll.log_prob, (r - baseline) / q);
            let e = g.scale(roll.entropy, self.cfg.entropy_weight / q);
            let term = g.add(a, e)?;
            objective = Some(match objective {
                Some(o) => g.add(o, term)?,
                None => term,
            });
        }
        let objective = objective.unwrap();
        let value = g.item(objective);
        g.backward(objective)?;
        for (name, v) in &bound {
            if let Some(grad) = g.grad(*v) {
                let p = self.params.get_mut(name).expect("bound names come from the store");
                for (w, d) in p.data_mut().iter_mut().zip(grad) {
                    *w += lr * d;
                }
            }
        }
        let after = match self.baseline {
            Some(b) => self.cfg.baseline_decay * b + (1.0 - self.cfg.baseline_decay) * mean,
            None => mean,
        };
        self.baseline = Some(after);
        Ok(UpdateStats {
            mean_reward: mean,
            baseline_used: baseline,
            baseline_after: after,
            objective: value,
        })
    }

    /// Order-sensitive hash over every parameter's bit pattern.
    pub fn param_hash(&self) -> u64 {
        let mut h = crate::util::Fnv64::new();
        for (k, t) in &self.params {
            h.write(k.as_bytes());
            for v in t.data() {
                h.write(&v.to_bits().to_le_bytes());
            }
        }
        h.finish()
    }

    /// Parameters plus the baseline (as `baseline`, empty when unset).
    pub fn to_named(&self) -> BTreeMap<String, Tensor> {
        let mut out = self.params.clone();
        let b = match self.baseline {
            Some(b) => Tensor::from_vec(vec![1.0, b]),
            None => Tensor::from_vec(vec![0.0, 0.0]),
        };
        out.insert("baseline".into(), b);
        out
    }

    pub fn load_named(&mut self, named: &BTreeMap<String, Tensor>) -> Result<()> {
        if named.len() != self.params.len() + 1 {
            return Err(Error::Checkpoint(format!(
                "expected {} controller tensors, found {}",
                self.params.len() + 1,
                named.len()
            )));
        }
        for (k, p) in self.params.iter_mut() {
            let t = named
                .get(k)
                .filter(|t| t.shape() == p.shape())
                .ok_or_else(|| Error::Checkpoint(format!("controller tensor `{k}` missing or misshapen")))?;
            p.data_mut().copy_from_slice(t.data());
        }
        let b = named
            .get("baseline")
            .filter(|t| t.len() == 2)
            .ok_or_else(|| Error::Checkpoint("controller baseline missing".into()))?;
        self.baseline = (b.data()[0] != 0.0).then_some(b.data()[1]);
        Ok(())
    }

    fn finish(&self, g: &Graph, r: Rollout) -> Result<SampleTrace> {
        Ok(SampleTrace {
            arch: self.to_arch(&r.decisions)?,
            log_prob: g.item(r.log_prob),
            entropy: g.item(r.entropy),
            decisions: r.decisions,
        })
    }

    /// Turns a decision sequence back into an architecture.
    pub fn to_arch(&self, decisions: &[usize]) -> Result<ArchEncoding> {
        if decisions.len() != self.decision_count() {
            return Err(Error::Contract(format!(
                "{} decisions for a {}-node space",
                decisions.len(),
                self.nodes
            )));
        }
        let mut it = decisions.iter();
        let mut nodes = Vec::with_capacity(self.nodes);
        for i in 0..self.nodes {
            let op = OpKind::from_id(*it.next().unwrap())
                .ok_or_else(|| Error::Contract("op token out of range".into()))?;
            let skips = (0..i).filter(|_| *it.next().unwrap() == 1).collect();
            nodes.push(NodeChoice { op, skips });
        }
        ArchEncoding::new(nodes)
    }

    fn rollout<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        bound: &mut BTreeMap<String, Var>,
        trainable: bool,
        choose: Choose<'_, R>,
    ) -> Result<Rollout> {
        match choose {
            Choose::Sample(rng) => self.rollout_with(g, bound, trainable, |p, _| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, &pk) in p.iter().enumerate() {
                    acc += pk;
                    if u < acc {
                        return Ok(k);
                    }
                }
                // Rounding left u above the last partial sum.
                Ok(p.iter().rposition(|&pk| pk > 0.0).unwrap_or(0))
            }),
            Choose::Argmax => self.rollout_with(g, bound, trainable, |p, _| {
                let mut best = 0;
                for (k, &pk) in p.iter().enumerate() {
                    if pk > p[best] {
                        best = k;
                    }
                }
                Ok(best)
            }),
            Choose::Replay(d) => {
                if d.len() != self.decision_count() {
                    return Err(Error::Contract(format!(
                        "trace has {} decisions, expected {}",
                        d.len(),
                        self.decision_count()
                    )));
                }
                self.rollout_with(g, bound, trainable, |p, idx| {
                    let t = d[idx];
                    if t >= p.len() {
                        return Err(Error::Contract(format!("token {t} at decision {idx} out of range")));
                    }
                    Ok(t)
                })
            }
        }
    }

    fn rollout_with(
        &self,
        g: &mut Graph,
        bound: &mut BTreeMap<String, Var>,
        trainable: bool,
        mut choose: impl FnMut(&[f64], usize) -> Result<usize>,
    ) -> Result<Rollout> {
        let mut param = |g: &mut Graph, name: &str| -> Var {
            if let Some(&v) = bound.get(name) {
                return v;
            }
            let t = &self.params[name];
            let v = g.leaf(t.shape().to_vec(), t.data().to_vec(), trainable).unwrap();
            bound.insert(name.to_string(), v);
            v
        };
        let hsz = self.cfg.hidden;
        let mut h = g.constant(vec![1, hsz], vec![0.0; hsz])?;
        let mut c = g.constant(vec![1, hsz], vec![0.0; hsz])?;
        let mut x = param(g, "embed.start");
        let inv_t = 1.0 / self.cfg.temperature;
        let mut decisions = Vec::with_capacity(self.decision_count());
        let mut log_prob: Option<Var> = None;
        let mut entropy: Option<Var> = None;
        for i in 0..self.nodes {
            for slot in 0..=i {
                // slot 0 is the op; slot j + 1 is the skip bit from node j.
                let (head, table, k) = if slot == 0 {
                    ("head.op".to_string(), "embed.op", OpKind::COUNT)
                } else {
                    (format!("head.skip{}", slot - 1), "embed.skip", 2)
                };
                let mut gate = |g: &mut Graph, name: &str, h: Var, x: Var| -> Result<Var> {
                    let wx = param(g, &format!("lstm.{name}.wx"));
                    let wh = param(g, &format!("lstm.{name}.wh"));
                    let b = param(g, &format!("lstm.{name}.b"));
                    let a = g.matmul(x, wx)?;
                    let r = g.matmul(h, wh)?;
                    let s = g.add(a, r)?;
                    g.add(s, b)
                };
                let ig = gate(g, "input", h, x)?;
                let fg = gate(g, "forget", h, x)?;
                let og = gate(g, "output", h, x)?;
                let cg = gate(g, "cell", h, x)?;
                let (ig, fg, og, cg) = (g.sigmoid(ig), g.sigmoid(fg), g.sigmoid(og), g.tanh(cg));
                let keep = g.mul(fg, c)?;
                let write = g.mul(ig, cg)?;
                c = g.add(keep, write)?;
                let tc = g.tanh(c);
                h = g.mul(og, tc)?;
                let w = param(g, &format!("{head}.w"));
                let b = param(g, &format!("{head}.b"));
                let z = g.matmul(h, w)?;
                let z = g.add(z, b)?;
                let z = g.scale(z, inv_t);
                let lp = g.log_softmax(z)?;
                let probs: Vec<f64> = g.value(lp).iter().map(|v| v.exp()).collect();
                let tok = choose(&probs, decisions.len())?;
                decisions.push(tok);
                let chosen = g.pick(lp, &[tok])?;
                let p = g.exp(lp);
                let plp = g.mul(p, lp)?;
                let s = g.sum(plp);
                let ent = g.neg(s);
                log_prob = Some(match log_prob {
                    Some(acc) => g.add(acc, chosen)?,
                    None => chosen,
                });
                entropy = Some(match entropy {
                    Some(acc) => g.add(acc, ent)?,
                    None => ent,
                });
                let mut one_hot = vec![0.0; k];
                one_hot[tok] = 1.0;
                let sel = g.constant(vec![1, k], one_hot)?;
                let emb = param(g, table);
                x = g.matmul(sel, emb)?;
            }
        }
        Ok(Rollout {
            decisions,
            log_prob: log_prob.unwrap(),
            entropy: entropy.unwrap(),
        })
    }
}
