//! Latency-aware reward: `asin(accuracy * (latency / target)^q)`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::arch::{NetworkPlan, SharedParams};
use crate::error::{Error, Result};
use crate::nn::BnMode;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyMode {
    /// Cost-table estimate; deterministic.
    Analytic,
    /// Median of timed forwards; machine dependent.
    Wallclock,
}

/// Per-layer cost `a * macs + b`, keyed by layer kind.
#[derive(Clone, Debug, PartialEq)]
pub struct CostTable {
    entries: BTreeMap<String, (f64, f64)>,
}

const LAYER_KINDS: [&str; 12] = [
    "input", "conv", "depthwise", "batch_norm", "relu", "pool", "shift", "concat", "sum",
    "dropblock", "global_pool", "linear",
];

impl Default for CostTable {
    /// One unit per million multiply-accumulates plus a small fixed
    /// per-layer overhead. Layers that vanish at inference cost nothing.
    fn default() -> Self {
        let entries = LAYER_KINDS
            .iter()
            .map(|&k| {
                let cost = match k {
                    "input" | "dropblock" => (0.0, 0.0),
                    _ => (1e-6, 1e-3),
                };
                (k.to_string(), cost)
            })
            .collect();
        Self { entries }
    }
}

impl CostTable {
    /// Same `(a, b)` for every layer kind.
    pub fn uniform(a: f64, b: f64) -> Self {
        Self {
            entries: LAYER_KINDS.iter().map(|k| (k.to_string(), (a, b))).collect(),
        }
    }

    /// Parses lines of `op_name a b`. Blank lines and `#` comments are
    /// skipped; kinds not listed keep their default coefficients.
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = Self::default();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let start = offset;
            offset += line.len();
            let body = line.split('#').next().unwrap().trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            let [name, a, b] = fields[..] else {
                return Err(Error::Parse {
                    position: start,
                    message: format!("expected `op_name a b`, found `{body}`"),
                });
            };
            if !LAYER_KINDS.contains(&name) {
                return Err(Error::Parse {
                    position: start,
                    message: format!("unknown layer kind `{name}`"),
                });
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| Error::Parse {
                        position: start,
                        message: format!("`{s}` is not a non-negative number"),
                    })
            };
            table.entries.insert(name.to_string(), (num(a)?, num(b)?));
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, kind: &str) -> Option<(f64, f64)> {
        self.entries.get(kind).copied()
    }

    /// Sum of `a * macs + b` over the plan's layers.
    pub fn plan_cost(&self, plan: &NetworkPlan) -> Result<f64> {
        let mut total = 0.0;
        for s in plan.steps() {
            let kind = s.layer.cost_name();
            let (a, b) = self
                .get(kind)
                .ok_or_else(|| Error::config("latency.cost_table", format!("no entry for `{kind}`")))?;
            total += a * s.macs as f64 + b;
        }
        Ok(total)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyModel {
    pub mode: LatencyMode,
    pub table: CostTable,
    /// Target latency, same units as the measurement.
    pub target: f64,
    /// Exponent on `latency / target`; `<= 0` penalises slow models.
    pub q: f64,
}

impl LatencyModel {
    pub fn analytic(target: f64, q: f64) -> Self {
        Self {
            mode: LatencyMode::Analytic,
            table: CostTable::default(),
            target,
            q,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target > 0.0 && self.target.is_finite()) {
            return Err(Error::config("reward.target", "must be positive"));
        }
        if !(self.q <= 0.0) {
            return Err(Error::config("reward.q", "must be <= 0"));
        }
        Ok(())
    }

    /// Latency of `plan`. Wallclock mode times five eval-mode forwards of
    /// `probe` and returns the median in milliseconds.
    pub fn measure(&self, plan: &NetworkPlan, store: &mut SharedParams, probe: &Tensor) -> Result<f64> {
        match self.mode {
            LatencyMode::Analytic => self.table.plan_cost(plan),
            LatencyMode::Wallclock => {
                let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
                let mut times = Vec::with_capacity(5);
                for _ in 0..5 {
                    let t = Instant::now();
                    let mut g = Graph::new();
                    let x = g.tensor(probe);
                    plan.forward(store, &mut g, x, BnMode::Eval, &mut rng)?;
                    times.push(t.elapsed().as_secs_f64() * 1e3);
                }
                times.sort_by(f64::total_cmp);
                Ok(times[2])
            }
        }
    }

    pub fn reward(&self, accuracy: f64, latency: f64) -> Result<RewardRecord> {
        compute_reward(accuracy, latency, self.target, self.q)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub accuracy: f64,
    pub latency: f64,
    pub reward: f64,
    /// The arcsine argument exceeded 1 and was clamped.
    pub clamped: bool,
}

/// `asin(min(accuracy * (latency / target)^q, 1))`.
pub fn compute_reward(accuracy: f64, latency: f64, target: f64, q: f64) -> Result<RewardRecord> {
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(Error::Contract(format!("accuracy {accuracy} outside [0, 1]")));
    }
    if !(latency > 0.0 && latency.is_finite()) || !(target > 0.0 && target.is_finite()) {
        return Err(Error::Contract(format!("latency {latency} and target {target} must be positive")));
    }
    let z = accuracy * (latency / target).powf(q);
    let clamped = z > 1.0;
    Ok(RewardRecord {
        accuracy,
        latency,
        reward: z.min(1.0).asin(),
        clamped,
    })
}
