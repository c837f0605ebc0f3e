//! Softmax-family classification losses: plain cross-entropy and the three
//! angular/cosine margin variants.
//!
//! Every loss takes `N×d` embeddings, an `N`-vector of labels and `d×n`
//! class weights, and returns the batch mean of the per-sample negative
//! log-likelihood. Margin losses ignore the bias and work on L2-normalised
//! weight columns; A-softmax keeps the embedding norm as its logit scale,
//! the other two normalise embeddings and use a fixed scale `s`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// Floor applied to L2 norms before dividing by them.
pub const NORM_EPS: f64 = 1e-12;
/// `cos θ` is kept this far inside `[-1, 1]` before `acos`.
pub const COS_CLAMP_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    ASoftmax,
    AmSoftmax,
    Arcface,
}

impl LossKind {
    pub fn key(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::ASoftmax => "a_softmax",
            LossKind::AmSoftmax => "am_softmax",
            LossKind::Arcface => "arcface",
        }
    }

    pub fn from_key(key: &str) -> Result<Self> {
        match key {
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            "a_softmax" => Ok(LossKind::ASoftmax),
            "am_softmax" => Ok(LossKind::AmSoftmax),
            "arcface" => Ok(LossKind::Arcface),
            other => Err(Error::config("loss.kind", format!("unknown loss `{other}`"))),
        }
    }
}

/// Margin `m` and scale `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginConfig {
    pub m: f64,
    pub s: f64,
}

impl MarginConfig {
    pub fn default_for(kind: LossKind) -> Self {
        let m = match kind {
            LossKind::CrossEntropy => 0.0,
            LossKind::ASoftmax => 4.0,
            LossKind::AmSoftmax => 0.35,
            LossKind::Arcface => 0.5,
        };
        Self { m, s: 30.0 }
    }
}

/// A loss selection as it appears in run configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub margin: MarginConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::CrossEntropy,
            margin: MarginConfig::default_for(LossKind::CrossEntropy),
        }
    }
}

/// Graph handles for one loss evaluation.
#[derive(Clone, Debug)]
pub struct LossInput<'a> {
    /// `N×d`
    pub embeddings: Var,
    pub labels: &'a [usize],
    /// `d×n`
    pub class_weights: Var,
    /// `n`; read by cross-entropy only.
    pub bias: Option<Var>,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let MarginConfig { m, s } = self.margin;
        match self.kind {
            LossKind::CrossEntropy => Ok(()),
            LossKind::ASoftmax => {
                if m < 1.0 || m.fract() != 0.0 || m > 64.0 {
                    Err(Error::config("loss.margin.m", format!("A-softmax needs an integer m >= 1, got {m}")))
                } else {
                    Ok(())
                }
            }
            LossKind::AmSoftmax | LossKind::Arcface => {
                if !(s > 0.0) {
                    return Err(Error::config("loss.margin.s", format!("scale must be positive, got {s}")));
                }
                if m < 0.0 {
                    return Err(Error::config("loss.margin.m", format!("margin must be >= 0, got {m}")));
                }
                if self.kind == LossKind::Arcface && m >= PI {
                    return Err(Error::config("loss.margin.m", format!("ArcFace margin must be < pi, got {m}")));
                }
                Ok(())
            }
        }
    }

    pub fn loss(&self, g: &mut Graph, input: &LossInput<'_>) -> Result<Var> {
        match self.kind {
            LossKind::CrossEntropy => cross_entropy(g, input),
            LossKind::ASoftmax => a_softmax(g, input, self.margin),
            LossKind::AmSoftmax => am_softmax(g, input, self.margin),
            LossKind::Arcface => arcface(g, input, self.margin),
        }
    }

    /// Per-class scores whose row argmax is the prediction.
    pub fn scores(&self, g: &mut Graph, input: &LossInput<'_>) -> Result<Var> {
        match self.kind {
            LossKind::CrossEntropy => {
                let z = g.matmul(input.embeddings, input.class_weights)?;
                match input.bias {
                    Some(b) => g.add(z, b),
                    None => Ok(z),
                }
            }
            _ => {
                let (cos, _) = cosines(g, input)?;
                Ok(cos)
            }
        }
    }
}

fn check_labels(g: &Graph, input: &LossInput<'_>) -> Result<(usize, usize)> {
    let (es, ws) = (g.shape(input.embeddings), g.shape(input.class_weights));
    if es.len() != 2 || ws.len() != 2 || es[1] != ws[0] {
        return Err(Error::Dimension(format!(
            "embeddings {es:?} and class weights {ws:?} are incompatible"
        )));
    }
    let (n_samples, n_classes) = (es[0], ws[1]);
    if input.labels.len() != n_samples {
        return Err(Error::Contract(format!(
            "{} labels for {n_samples} samples",
            input.labels.len()
        )));
    }
    if let Some(bad) = input.labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::Contract(format!("label {bad} outside 0..{n_classes}")));
    }
    Ok((n_samples, n_classes))
}

/// Mean of `-log_softmax(logits)[i, y_i]`.
fn mean_nll(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let ls = g.log_softmax(logits)?;
    let picked = g.pick(ls, labels)?;
    let m = g.mean(picked);
    Ok(g.neg(m))
}

fn l2_norm_rows(g: &mut Graph, x: Var) -> Result<Var> {
    let rows = g.shape(x)[0];
    let sq = g.mul(x, x)?;
    let ss = g.sum_axis(sq, 1)?;
    let n = g.sqrt(ss)?;
    let n = g.clamp(n, NORM_EPS, f64::INFINITY);
    g.reshape(n, vec![rows, 1])
}

fn l2_norm_cols(g: &mut Graph, w: Var) -> Result<Var> {
    let sq = g.mul(w, w)?;
    let ss = g.sum_axis(sq, 0)?;
    let n = g.sqrt(ss)?;
    Ok(g.clamp(n, NORM_EPS, f64::INFINITY))
}

/// `cos θ_{j,i}` between normalised embeddings and normalised weight
/// columns, plus the `N×1` embedding norms.
fn cosines(g: &mut Graph, input: &LossInput<'_>) -> Result<(Var, Var)> {
    let xn = l2_norm_rows(g, input.embeddings)?;
    let xhat = g.div(input.embeddings, xn)?;
    let wn = l2_norm_cols(g, input.class_weights)?;
    let what = g.div(input.class_weights, wn)?;
    Ok((g.matmul(xhat, what)?, xn))
}

fn one_hot(g: &mut Graph, labels: &[usize], classes: usize) -> Result<Var> {
    let mut v = vec![0.0; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        v[i * classes + y] = 1.0;
    }
    g.constant(vec![labels.len(), classes], v)
}

/// Replaces the target column of `cos` with `target` (an `N` vector).
fn with_target(g: &mut Graph, cos: Var, target: Var, labels: &[usize]) -> Result<Var> {
    let (n, classes) = (labels.len(), g.shape(cos)[1]);
    let cos_y = g.pick(cos, labels)?;
    let delta = g.sub(target, cos_y)?;
    let delta = g.reshape(delta, vec![n, 1])?;
    let hot = one_hot(g, labels, classes)?;
    let shift = g.mul(hot, delta)?;
    g.add(cos, shift)
}

/// Softmax cross-entropy on `x·W + b`, stabilised by log-sum-exp.
pub fn cross_entropy(g: &mut Graph, input: &LossInput<'_>) -> Result<Var> {
    check_labels(g, input)?;
    let z = g.matmul(input.embeddings, input.class_weights)?;
    let z = match input.bias {
        Some(b) => g.add(z, b)?,
        None => z,
    };
    mean_nll(g, z, input.labels)
}

/// `psi(θ) = (-1)^k cos(mθ) - 2k` on `[kπ/m, (k+1)π/m]`.
pub fn angular_psi(m: u32, theta: f64) -> f64 {
    let k = ((theta * m as f64 / PI).floor() as i64).clamp(0, m as i64 - 1);
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    sign * (m as f64 * theta).cos() - 2.0 * k as f64
}

/// Multiplicative angular margin (A-softmax). Logits are `‖x‖ cos θ_j`,
/// with `‖x‖ psi(θ_y)` for the target class.
pub fn a_softmax(g: &mut Graph, input: &LossInput<'_>, cfg: MarginConfig) -> Result<Var> {
    LossConfig {
        kind: LossKind::ASoftmax,
        margin: cfg,
    }
    .validate()?;
    check_labels(g, input)?;
    let (cos, xn) = cosines(g, input)?;
    let cos_y = g.pick(cos, input.labels)?;
    let c = g.clamp(cos_y, -1.0 + COS_CLAMP_EPS, 1.0 - COS_CLAMP_EPS);
    let theta = g.acos(c)?;
    let psi = g.unary(crate::tensor::UnaryKind::AngularPsi(cfg.m as u32), theta)?;
    let logits = with_target(g, cos, psi, input.labels)?;
    let logits = g.mul(logits, xn)?;
    mean_nll(g, logits, input.labels)
}

/// Additive cosine margin (AM-softmax / CosFace): `s (cos θ_y - m)`.
pub fn am_softmax(g: &mut Graph, input: &LossInput<'_>, cfg: MarginConfig) -> Result<Var> {
    LossConfig {
        kind: LossKind::AmSoftmax,
        margin: cfg,
    }
    .validate()?;
    let (_, classes) = check_labels(g, input)?;
    let (cos, _) = cosines(g, input)?;
    let hot = one_hot(g, input.labels, classes)?;
    let margin = g.scale(hot, cfg.m);
    let shifted = g.sub(cos, margin)?;
    let logits = g.scale(shifted, cfg.s);
    mean_nll(g, logits, input.labels)
}

/// Additive angular margin (ArcFace): `s cos(θ_y + m)`.
///
/// `cos θ_y` is clamped to `[-1 + 1e-7, 1 - 1e-7]` and `θ_y` to `[0, π - m]`
/// so `cos(θ + m)` stays monotone and the gradient finite.
pub fn arcface(g: &mut Graph, input: &LossInput<'_>, cfg: MarginConfig) -> Result<Var> {
    LossConfig {
        kind: LossKind::Arcface,
        margin: cfg,
    }
    .validate()?;
    check_labels(g, input)?;
    let (cos, _) = cosines(g, input)?;
    let cos_y = g.pick(cos, input.labels)?;
    let c = g.clamp(cos_y, -1.0 + COS_CLAMP_EPS, 1.0 - COS_CLAMP_EPS);
    let theta = g.acos(c)?;
    let theta = g.clamp(theta, 0.0, PI - cfg.m);
    let shifted = g.add_scalar(theta, cfg.m);
    let target = g.cos(shifted);
    let logits = with_target(g, cos, target, input.labels)?;
    let logits = g.scale(logits, cfg.s);
    mean_nll(g, logits, input.labels)
}
