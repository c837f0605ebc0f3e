//! Learning-rate schedules and the momentum optimiser.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `(2^(½(1 + cos(π t)) + 1) - 2) / 2` for `t ∈ [0, 1]`: 1 at the start,
/// 0 at the end, and below the plain cosine factor in between.
pub fn cosine_mod_factor(t: f64) -> f64 {
    let e = 0.5 * (1.0 + (PI * t).cos()) + 1.0;
    (e.exp2() - 2.0) / 2.0
}

/// Modified cosine annealing from `lr_max` down to `lr_min` over `period`.
pub fn cosine_mod_lr(lr_min: f64, lr_max: f64, t_cur: f64, period: f64) -> Result<f64> {
    if !(period > 0.0) || !(0.0..=period).contains(&t_cur) {
        return Err(Error::Contract(format!("t_cur {t_cur} outside [0, {period}]")));
    }
    Ok(lr_min + (lr_max - lr_min) * cosine_mod_factor(t_cur / period))
}

/// Linear warmup from zero, then one or more modified-cosine periods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub lr_min: f64,
    pub lr_max: f64,
    pub warmup_epochs: f64,
    /// Length of the run; set by the training loop, not read from files.
    #[serde(skip)]
    pub total_epochs: f64,
    /// Lengths of successive restart periods after warmup. Empty means a
    /// single period covering the rest of training.
    pub restart_periods: Vec<f64>,
    /// `lr_max` of restart `i` is `lr_max * restart_decay^i`.
    pub restart_decay: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            lr_min: 1e-4,
            lr_max: 0.1,
            warmup_epochs: 20.0,
            total_epochs: 100.0,
            restart_periods: Vec::new(),
            restart_decay: 1.0,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lr_min && self.lr_min < self.lr_max) {
            return Err(Error::config("schedule.lr_min", "need 0 <= lr_min < lr_max"));
        }
        if !(self.warmup_epochs >= 0.0 && self.total_epochs - self.warmup_epochs >= 1.0) {
            return Err(Error::config(
                "schedule.warmup_epochs",
                "need at least one epoch of annealing after warmup",
            ));
        }
        if self.restart_periods.iter().any(|&p| !(p >= 1.0)) {
            return Err(Error::config("schedule.restart_periods", "every period must be >= 1"));
        }
        if !(self.restart_decay > 0.0 && self.restart_decay <= 1.0) {
            return Err(Error::config("schedule.restart_decay", "must be in (0, 1]"));
        }
        Ok(())
    }

    /// Learning rate at a (possibly fractional) epoch.
    pub fn lr_at(&self, epoch: f64) -> f64 {
        warmup_then_cosine(self, epoch)
    }
}

pub fn warmup_then_cosine(cfg: &ScheduleConfig, epoch: f64) -> f64 {
    let epoch = epoch.max(0.0);
    if epoch < cfg.warmup_epochs {
        return cfg.lr_max * epoch / cfg.warmup_epochs;
    }
    let mut t = epoch - cfg.warmup_epochs;
    let remaining = cfg.total_epochs - cfg.warmup_epochs;
    let periods: Vec<f64> = if cfg.restart_periods.is_empty() {
        vec![remaining]
    } else {
        cfg.restart_periods.clone()
    };
    let mut lr_max = cfg.lr_max;
    for (i, &p) in periods.iter().enumerate() {
        if t <= p || i + 1 == periods.len() {
            let lr_max = lr_max.max(cfg.lr_min);
            return cosine_mod_lr(cfg.lr_min, lr_max, t.min(p), p).expect("t clamped into the period");
        }
        t -= p;
        lr_max *= cfg.restart_decay;
    }
    unreachable!("periods is non-empty")
}

/// Step ladder for the controller: `start / factor^floor(epoch / every)`,
/// never below `floor`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepDecay {
    pub start: f64,
    pub factor: f64,
    pub every: usize,
    pub floor: f64,
}

impl Default for StepDecay {
    fn default() -> Self {
        Self {
            start: 0.1,
            factor: 10.0,
            every: 20,
            floor: 1e-4,
        }
    }
}

impl StepDecay {
    pub fn validate(&self) -> Result<()> {
        if !(self.start > 0.0 && self.factor >= 1.0 && self.every > 0 && self.floor >= 0.0) {
            return Err(Error::config("controller_lr", "need start > 0, factor >= 1, every > 0, floor >= 0"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.every) as i32;
        (self.start / self.factor.powi(steps)).max(self.floor)
    }
}

/// Controller learning rate with the default ladder.
pub fn piecewise_controller_lr(epoch: usize) -> f64 {
    StepDecay::default().lr_at(epoch)
}

/// `v ← βv + (g + λw); w ← w − lr·v`.
pub fn momentum_step(
    w: &mut [f64],
    g: &[f64],
    v: &mut [f64],
    beta: f64,
    weight_decay: f64,
    lr: f64,
) -> Result<()> {
    if w.len() != g.len() || w.len() != v.len() {
        return Err(Error::Dimension(format!(
            "momentum step over {} weights, {} grads, {} velocities",
            w.len(),
            g.len(),
            v.len()
        )));
    }
    for ((wi, &gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        let d = if weight_decay == 0.0 { gi } else { gi + weight_decay * *wi };
        *vi = beta * *vi + d;
        *wi -= lr * *vi;
    }
    Ok(())
}

/// Velocity buffers keyed by parameter name, created on first use.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl OptimState {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, name: &str, w: &mut [f64], g: &[f64], lr: f64) -> Result<()> {
        let v = self
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; w.len()]);
        momentum_step(w, g, v, self.momentum, self.weight_decay, lr)
    }

    pub fn velocity(&self, name: &str) -> Option<&[f64]> {
        self.velocity.get(name).map(Vec::as_slice)
    }

    pub fn to_named(&self) -> BTreeMap<String, Tensor> {
        self.velocity
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::from_vec(v.clone())))
            .collect()
    }

    pub fn load_named(&mut self, named: &BTreeMap<String, Tensor>) {
        self.velocity = named.iter().map(|(k, t)| (k.clone(), t.data().to_vec())).collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let (lo, hi) = (1e-4, 0.1);
        assert!((cosine_mod_lr(lo, hi, 0.0, 80.0).unwrap() - hi).abs() < 1e-12);
        assert!((cosine_mod_lr(lo, hi, 80.0, 80.0).unwrap() - lo).abs() < 1e-12);
        let mid = cosine_mod_lr(lo, hi, 40.0, 80.0).unwrap();
        assert!((cosine_mod_factor(0.5) - 0.414_214).abs() < 1e-6);
        assert!((mid - (lo + 0.414_213_562_373_095 * (hi - lo))).abs() < 1e-9);
        assert!((mid - 0.041_480).abs() < 1e-6);
        assert!(cosine_mod_lr(lo, hi, 81.0, 80.0).is_err());
        assert!(cosine_mod_lr(lo, hi, -1.0, 80.0).is_err());
    }

    #[test]
    fn warmup_hands_off_continuously() {
        let cfg = ScheduleConfig::default();
        assert_eq!(cfg.lr_at(0.0), 0.0);
        assert_eq!(cfg.lr_at(20.0), 0.1);
        assert!((cfg.lr_at(20.0 - 1e-9) - 0.1).abs() < 1e-9);
        assert!((cfg.lr_at(100.0) - 1e-4).abs() < 1e-12);
        assert!((cfg.lr_at(10.0) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn restarts_decay_their_peaks() {
        let cfg = ScheduleConfig {
            warmup_epochs: 0.0,
            total_epochs: 30.0,
            restart_periods: vec![10.0, 20.0],
            restart_decay: 0.5,
            ..Default::default()
        };
        cfg.validate().unwrap();
        assert!((cfg.lr_at(0.0) - 0.1).abs() < 1e-12);
        assert!((cfg.lr_at(10.0) - 1e-4).abs() < 1e-12);
        assert!((cfg.lr_at(10.0 + 1e-9) - 0.05).abs() < 1e-6);
        assert!((cfg.lr_at(30.0) - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn controller_ladder() {
        assert_eq!(piecewise_controller_lr(0), 0.1);
        assert!((piecewise_controller_lr(39) - 0.01).abs() < 1e-15);
        assert!((piecewise_controller_lr(60) - 1e-4).abs() < 1e-15);
        assert!((piecewise_controller_lr(99) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn degenerate_momentum_is_sgd() {
        let mut w = vec![1.0, -2.0];
        let mut v = vec![0.0; 2];
        momentum_step(&mut w, &[0.5, 0.25], &mut v, 0.0, 0.0, 0.1).unwrap();
        assert_eq!(w, vec![1.0 - 0.05, -2.0 - 0.025]);
        let mut w2 = vec![3.0];
        let mut v2 = vec![0.0];
        momentum_step(&mut w2, &[0.0], &mut v2, 0.9, 0.0, 0.1).unwrap();
        assert_eq!(w2, vec![3.0]);
        assert!(momentum_step(&mut w2, &[0.0, 1.0], &mut v2, 0.9, 0.0, 0.1).is_err());
    }

    #[test]
    fn quadratic_bowl_converges() {
        // Contraction rate is sqrt(0.9) per step, so 100 steps leave ~4e-3.
        let run = |steps: usize| {
            let (mut w, mut v) = (vec![1.0], vec![0.0]);
            for _ in 0..steps {
                let g = vec![w[0]];
                momentum_step(&mut w, &g, &mut v, 0.9, 0.0, 0.1).unwrap();
            }
            w[0]
        };
        assert!((run(100) - 0.003_738_733_311_297).abs() < 1e-12);
        assert!(run(150).abs() < 1e-3);
    }
}
