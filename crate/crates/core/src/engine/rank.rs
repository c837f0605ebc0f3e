use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::config::RankPolicy;
use super::metrics::SampleRecord;
use crate::arch::{ArchEncoding, NetworkPlan, SharedParams};
use crate::error::{Error, Result};
use crate::reward::CostTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedArch {
    pub arch: String,
    pub val_accuracy: f64,
    pub latency: f64,
    /// 1-based.
    pub rank: usize,
    /// History index of the first sample of this architecture.
    pub first_seen: usize,
    pub samples: usize,
    /// Trainable scalars; filled in by the caller that compiles the arch.
    pub param_count: Option<usize>,
}

/// Unique architectures of `history`, best first. Ties keep the order in
/// which architectures were first sampled.
pub fn rank_architectures(history: &[SampleRecord], policy: RankPolicy) -> Result<Vec<RankedArch>> {
    if history.is_empty() {
        return Err(Error::Contract("cannot rank an empty sample history".into()));
    }
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut out: Vec<(RankedArch, f64)> = Vec::new();
    for (pos, r) in history.iter().enumerate() {
        match slot.get(r.arch.as_str()) {
            Some(&i) => {
                let (e, sum) = &mut out[i];
                e.samples += 1;
                *sum += r.accuracy;
                if policy == RankPolicy::Best && r.accuracy > e.val_accuracy {
                    e.val_accuracy = r.accuracy;
                }
            }
            None => {
                slot.insert(&r.arch, out.len());
                out.push((
                    RankedArch {
                        arch: r.arch.clone(),
                        val_accuracy: r.accuracy,
                        latency: r.latency,
                        rank: 0,
                        first_seen: pos,
                        samples: 1,
                        param_count: None,
                    },
                    r.accuracy,
                ));
            }
        }
    }
    let mut ranked: Vec<RankedArch> = out
        .into_iter()
        .map(|(mut e, sum)| {
            if policy == RankPolicy::Mean {
                e.val_accuracy = sum / e.samples as f64;
            }
            e
        })
        .collect();
    // Stable sort keeps first-seen order among equal accuracies.
    ranked.sort_by(|a, b| b.val_accuracy.total_cmp(&a.val_accuracy));
    for (i, e) in ranked.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    Ok(ranked)
}

/// Size of one ranked architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSize {
    pub rank: usize,
    pub arch: String,
    pub param_count: usize,
    pub macs: u64,
    pub analytic_latency: f64,
}

pub const MODEL_SIZE_HEADER: &str = "rank,arch,param_count,macs,analytic_latency";

/// Parameter count, multiply-accumulates and table latency of every entry
/// of `ranked`, compiled against `store`.
pub fn model_sizes(ranked: &[RankedArch], store: &SharedParams, table: &CostTable) -> Result<Vec<ModelSize>> {
    ranked
        .iter()
        .map(|r| {
            let plan = NetworkPlan::compile(&ArchEncoding::decode(&r.arch)?, store)?;
            Ok(ModelSize {
                rank: r.rank,
                arch: r.arch.clone(),
                param_count: plan.param_count(),
                macs: plan.total_macs(),
                analytic_latency: table.plan_cost(&plan)?,
            })
        })
        .collect()
}

pub fn model_size_csv(sizes: &[ModelSize]) -> String {
    let mut out = format!("{MODEL_SIZE_HEADER}\n");
    for s in sizes {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.rank, s.arch, s.param_count, s.macs, s.analytic_latency
        ));
    }
    out
}
