//! Plot-ready CSV tables derived from a run's metrics and sample traces.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use facenas_core::engine::{MetricsRow, Phase, SampleRecord};

use crate::manifest::RetrainRecord;

pub const HISTOGRAM_BINS: usize = 10;

/// Learning rates of both phases, one row per search epoch.
pub fn lr_vs_epoch(rows: &[MetricsRow]) -> String {
    let mut by_epoch: BTreeMap<usize, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in rows {
        let e = by_epoch.entry(r.epoch).or_default();
        match r.phase {
            Phase::Child => e.0 = Some(r.lr),
            Phase::Controller => e.1 = Some(r.lr),
            Phase::Retrain => {}
        }
    }
    let mut out = String::from("epoch,child_lr,controller_lr\n");
    for (epoch, (child, ctrl)) in by_epoch {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(out, "{epoch},{},{}", cell(child), cell(ctrl)).unwrap();
    }
    out
}

/// Mean reward, accuracy and latency of each controller step.
pub fn reward_vs_step(traces: &[SampleRecord]) -> String {
    let mut steps: BTreeMap<(usize, usize), Vec<&SampleRecord>> = BTreeMap::new();
    for t in traces {
        steps.entry((t.epoch, t.step)).or_default().push(t);
    }
    let mut out = String::from("step,epoch,mean_reward,mean_accuracy,mean_latency\n");
    for (i, ((epoch, _), recs)) in steps.iter().enumerate() {
        let n = recs.len() as f64;
        let mean = |f: fn(&SampleRecord) -> f64| recs.iter().map(|r| f(r)).sum::<f64>() / n;
        writeln!(
            out,
            "{i},{epoch},{},{},{}",
            mean(|r| r.reward),
            mean(|r| r.accuracy),
            mean(|r| r.latency)
        )
        .unwrap();
    }
    out
}

/// Search-time validation accuracy per epoch followed by every retrain's
/// test-accuracy curve.
pub fn accuracy_vs_epoch(rows: &[MetricsRow], retrains: &[RetrainRecord]) -> String {
    let mut out = String::from("series,epoch,accuracy\n");
    for r in rows.iter().filter(|r| r.phase == Phase::Controller) {
        if let Some(a) = r.val_acc {
            writeln!(out, "search_val,{},{a}", r.epoch).unwrap();
        }
    }
    for rt in retrains {
        for (epoch, a) in rt.result.curve.iter().enumerate() {
            writeln!(out, "retrain_rank{},{epoch},{a}", rt.rank).unwrap();
        }
    }
    out
}

/// Equal-width histogram of sampled latencies.
pub fn latency_histogram(traces: &[SampleRecord]) -> String {
    let mut out = String::from("bin_start,bin_end,count\n");
    if traces.is_empty() {
        return out;
    }
    let lo = traces.iter().map(|t| t.latency).fold(f64::INFINITY, f64::min);
    let hi = traces.iter().map(|t| t.latency).fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        writeln!(out, "{lo},{hi},{}", traces.len()).unwrap();
        return out;
    }
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let mut counts = [0usize; HISTOGRAM_BINS];
    for t in traces {
        let b = (((t.latency - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
        counts[b] += 1;
    }
    for (b, c) in counts.iter().enumerate() {
        let start = lo + b as f64 * width;
        let end = if b + 1 == HISTOGRAM_BINS { hi } else { lo + (b + 1) as f64 * width };
        writeln!(out, "{start},{end},{c}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, step: usize, latency: f64, reward: f64) -> SampleRecord {
        SampleRecord {
            index: 0,
            epoch,
            step,
            arch: "0".into(),
            accuracy: 0.5,
            latency,
            reward,
            clamped: false,
            log_prob: 0.0,
        }
    }

    #[test]
    fn histogram_counts_every_sample_once() {
        let t: Vec<_> = (0..37).map(|i| rec(0, 0, 1.0 + (i % 7) as f64 * 0.3, 0.0)).collect();
        let csv = latency_histogram(&t);
        let total: usize = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(total, 37);
        assert_eq!(csv.lines().count(), 1 + HISTOGRAM_BINS);
    }

    #[test]
    fn reward_rows_average_each_step() {
        let t = vec![rec(0, 0, 1.0, 0.2), rec(0, 0, 1.0, 0.4), rec(0, 1, 1.0, 1.0), rec(1, 0, 2.0, 0.0)];
        let csv = reward_vs_step(&t);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,0,0.30000000000000004,"));
        assert!(lines[3].starts_with("2,1,0,"));
    }
}
