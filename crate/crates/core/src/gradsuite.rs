//! Finite-difference checks of every differentiable op and loss, repeated
//! over seeded random inputs.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::loss::{LossConfig, LossInput, LossKind, MarginConfig};
use crate::nn::{
    batch_norm, conv2d, depthwise_conv2d, dropblock, global_avg_pool, pool2d, separable_conv, shift_window, BnMode,
    PoolKind, RunningStats,
};
use crate::tensor::{gradient_check, Graph, Tensor, Var};
use crate::util::stream_rng;

pub const OP_TOLERANCE: f64 = 1e-5;
pub const LOSS_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub name: String,
    pub tolerance: f64,
    pub seeds: usize,
    /// Largest error over all seeds.
    pub max_error: f64,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

type Check = fn(&mut ChaCha8Rng) -> Result<f64>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Uniform on `[lo, hi]` with the sign flipped at random.
fn signed(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut t = uniform(rng, shape, lo, hi);
    for v in t.data_mut() {
        if rng.random::<bool>() {
            *v = -*v;
        }
    }
    t
}

/// Random linear functional of `y`, so every output element matters.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let c = uniform(&mut stream_rng(seed, &[]), &shape, -1.0, 1.0);
    let cv = g.tensor(&c);
    let p = g.mul(y, cv)?;
    Ok(g.sum(p))
}

fn unary(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    (lo, hi): (f64, f64),
    f: fn(&mut Graph, Var) -> Result<Var>,
) -> Result<f64> {
    let x = uniform(rng, shape, lo, hi);
    unary_at(rng, x, f)
}

fn unary_at(rng: &mut ChaCha8Rng, x: Tensor, f: fn(&mut Graph, Var) -> Result<Var>) -> Result<f64> {
    let seed = rng.random();
    gradient_check(
        |g, v| {
            let y = f(g, v)?;
            project(g, y, seed)
        },
        &x,
        EPS,
    )
}

fn ops() -> Vec<(&'static str, Check)> {
    vec![
        ("relu", |r| {
            let x = signed(r, &[3, 5], 0.05, 2.0);
            unary_at(r, x, |g, v| Ok(g.relu(v)))
        }),
        ("exp", |r| unary(r, &[3, 5], (-2.0, 2.0), |g, v| Ok(g.exp(v)))),
        ("log", |r| unary(r, &[3, 5], (0.2, 3.0), |g, v| g.log(v))),
        ("cos", |r| unary(r, &[3, 5], (-3.0, 3.0), |g, v| Ok(g.cos(v)))),
        ("sin", |r| unary(r, &[3, 5], (-3.0, 3.0), |g, v| Ok(g.sin(v)))),
        ("asin", |r| unary(r, &[3, 5], (-0.9, 0.9), |g, v| g.asin(v))),
        ("acos", |r| unary(r, &[3, 5], (-0.9, 0.9), |g, v| g.acos(v))),
        ("tanh", |r| unary(r, &[3, 5], (-2.0, 2.0), |g, v| Ok(g.tanh(v)))),
        ("sigmoid", |r| unary(r, &[3, 5], (-3.0, 3.0), |g, v| Ok(g.sigmoid(v)))),
        ("sqrt", |r| unary(r, &[3, 5], (0.2, 3.0), |g, v| g.sqrt(v))),
        ("neg", |r| unary(r, &[3, 5], (-2.0, 2.0), |g, v| Ok(g.neg(v)))),
        ("powf", |r| unary(r, &[3, 5], (0.2, 2.0), |g, v| Ok(g.powf(v, 2.5)))),
        ("scale", |r| unary(r, &[3, 5], (-2.0, 2.0), |g, v| Ok(g.scale(v, -1.7)))),
        ("add_scalar", |r| unary(r, &[3, 5], (-2.0, 2.0), |g, v| Ok(g.add_scalar(v, 0.3)))),
        ("angular_psi", |r| {
            unary(r, &[3, 5], (0.01, PI - 0.01), |g, v| {
                g.unary(crate::tensor::UnaryKind::AngularPsi(4), v)
            })
        }),
        ("clamp", |r| {
            // Keep inputs off the clamp edges, where the derivative jumps.
            let mut x = uniform(r, &[3, 5], -2.0, 2.0);
            for v in x.data_mut() {
                if (v.abs() - 1.0).abs() < 0.05 {
                    *v *= 0.9;
                }
            }
            unary_at(r, x, |g, v| Ok(g.clamp(v, -1.0, 1.0)))
        }),
        ("add_broadcast", |r| binary(r, [4, 3], [3], false, |g, a, b| g.add(a, b))),
        ("sub", |r| binary(r, [4, 3], [4, 3], false, |g, a, b| g.sub(a, b))),
        ("mul_broadcast", |r| binary(r, [4, 3], [4, 1], false, |g, a, b| g.mul(a, b))),
        ("div", |r| binary(r, [4, 3], [4, 3], true, |g, a, b| g.div(a, b))),
        ("matmul", |r| binary(r, [3, 4], [4, 2], false, |g, a, b| g.matmul(a, b))),
        ("sum_axis", |r| {
            unary(r, &[3, 4], (-1.0, 1.0), |g, v| {
                let a = g.sum_axis(v, 0)?;
                let b = g.sum_axis(v, 1)?;
                let a2 = g.mul(a, a)?;
                let b2 = g.mul(b, b)?;
                let (sa, sb) = (g.sum(a2), g.sum(b2));
                g.add(sa, sb)
            })
        }),
        ("mean", |r| unary(r, &[3, 4], (-1.0, 1.0), |g, v| {
            let sq = g.mul(v, v)?;
            Ok(g.mean(sq))
        })),
        ("reshape_concat", |r| {
            unary(r, &[2, 6], (-1.0, 1.0), |g, v| {
                let a = g.reshape(v, vec![2, 2, 3])?;
                let b = g.exp(a);
                g.concat(&[a, b], 1)
            })
        }),
        ("log_softmax", |r| unary(r, &[3, 5], (-3.0, 3.0), |g, v| g.log_softmax(v))),
        ("pick", |r| {
            unary(r, &[4, 3], (-1.0, 1.0), |g, v| {
                let e = g.exp(v);
                g.pick(e, &[2, 0, 1, 2])
            })
        }),
        ("conv2d_input", |r| conv_case(r, 0)),
        ("conv2d_weight", |r| conv_case(r, 1)),
        ("depthwise_input", |r| conv_case(r, 2)),
        ("depthwise_weight", |r| conv_case(r, 3)),
        ("separable_conv", |r| conv_case(r, 4)),
        ("avg_pool", |r| {
            unary(r, &[2, 2, 5, 5], (-1.0, 1.0), |g, v| pool2d(g, v, PoolKind::Avg, 3, 2, 1))
        }),
        ("max_pool", |r| {
            unary(r, &[2, 2, 5, 5], (-1.0, 1.0), |g, v| pool2d(g, v, PoolKind::Max, 3, 1, 1))
        }),
        ("global_avg_pool", |r| {
            unary(r, &[2, 3, 4, 4], (-1.0, 1.0), |g, v| global_avg_pool(g, v))
        }),
        ("shift_window", |r| {
            unary(r, &[1, 2, 4, 5], (-1.0, 1.0), |g, v| shift_window(g, v, 1, 2))
        }),
        ("batch_norm_input", |r| bn_case(r, 0)),
        ("batch_norm_gamma", |r| bn_case(r, 1)),
        ("batch_norm_beta", |r| bn_case(r, 2)),
        ("dropblock", |r| {
            let mask_seed: u64 = r.random();
            let x = uniform(r, &[2, 2, 6, 6], -1.0, 1.0);
            let seed = r.random();
            gradient_check(
                |g, v| {
                    // Same mask on every evaluation.
                    let y = dropblock(g, v, 3, 0.8, true, &mut stream_rng(mask_seed, &[]))?;
                    project(g, y, seed)
                },
                &x,
                EPS,
            )
        }),
    ]
}

fn binary(
    rng: &mut ChaCha8Rng,
    a_shape: [usize; 2],
    b_shape: impl AsRef<[usize]>,
    away_from_zero: bool,
    f: fn(&mut Graph, Var, Var) -> Result<Var>,
) -> Result<f64> {
    let a = uniform(rng, &a_shape, -1.0, 1.0);
    let b = if away_from_zero {
        signed(rng, b_shape.as_ref(), 0.5, 2.0)
    } else {
        uniform(rng, b_shape.as_ref(), -1.0, 1.0)
    };
    let seed = rng.random();
    let ea = gradient_check(
        |g, v| {
            let bv = g.tensor(&b);
            let y = f(g, v, bv)?;
            project(g, y, seed)
        },
        &a,
        EPS,
    )?;
    let eb = gradient_check(
        |g, v| {
            let av = g.tensor(&a);
            let y = f(g, av, v)?;
            project(g, y, seed)
        },
        &b,
        EPS,
    )?;
    Ok(ea.max(eb))
}

fn conv_case(rng: &mut ChaCha8Rng, which: u8) -> Result<f64> {
    let x = uniform(rng, &[2, 2, 5, 5], -1.0, 1.0);
    let full = uniform(rng, &[3, 2, 3, 3], -1.0, 1.0);
    let dw = uniform(rng, &[2, 3, 3], -1.0, 1.0);
    let pw = uniform(rng, &[3, 2, 1, 1], -1.0, 1.0);
    let stride = rng.random_range(1..=2);
    let seed = rng.random();
    match which {
        0 => gradient_check(
            |g, v| {
                let w = g.tensor(&full);
                let y = conv2d(g, v, w, stride, 1)?;
                project(g, y, seed)
            },
            &x,
            EPS,
        ),
        1 => gradient_check(
            |g, v| {
                let xv = g.tensor(&x);
                let y = conv2d(g, xv, v, stride, 1)?;
                project(g, y, seed)
            },
            &full,
            EPS,
        ),
        2 => gradient_check(
            |g, v| {
                let w = g.tensor(&dw);
                let y = depthwise_conv2d(g, v, w, stride, 1)?;
                project(g, y, seed)
            },
            &x,
            EPS,
        ),
        3 => gradient_check(
            |g, v| {
                let xv = g.tensor(&x);
                let y = depthwise_conv2d(g, xv, v, stride, 1)?;
                project(g, y, seed)
            },
            &dw,
            EPS,
        ),
        _ => gradient_check(
            |g, v| {
                let d = g.tensor(&dw);
                let p = g.tensor(&pw);
                let y = separable_conv(g, v, d, p, stride, 1)?;
                project(g, y, seed)
            },
            &x,
            EPS,
        ),
    }
}

fn bn_case(rng: &mut ChaCha8Rng, which: u8) -> Result<f64> {
    let x = uniform(rng, &[3, 2, 3, 3], -1.0, 2.0);
    let gamma = uniform(rng, &[2], 0.5, 1.5);
    let beta = uniform(rng, &[2], -0.5, 0.5);
    let seed = rng.random();
    let run = |g: &mut Graph, x: Var, gm: Var, bt: Var| -> Result<Var> {
        let mut stats = RunningStats::new(2);
        let y = batch_norm(g, x, gm, bt, &mut stats, BnMode::Train)?;
        project(g, y, seed)
    };
    match which {
        0 => gradient_check(
            |g, v| {
                let (gm, bt) = (g.tensor(&gamma), g.tensor(&beta));
                run(g, v, gm, bt)
            },
            &x,
            EPS,
        ),
        1 => gradient_check(
            |g, v| {
                let (xv, bt) = (g.tensor(&x), g.tensor(&beta));
                run(g, xv, v, bt)
            },
            &gamma,
            EPS,
        ),
        _ => gradient_check(
            |g, v| {
                let (xv, gm) = (g.tensor(&x), g.tensor(&gamma));
                run(g, xv, gm, v)
            },
            &beta,
            EPS,
        ),
    }
}

fn loss_case(rng: &mut ChaCha8Rng, kind: LossKind) -> Result<f64> {
    let (n, d, k) = (4, 5, 3);
    let x = uniform(rng, &[n, d], -1.0, 1.0);
    let w = uniform(rng, &[d, k], -1.0, 1.0);
    let b = uniform(rng, &[k], -0.5, 0.5);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let cfg = LossConfig {
        kind,
        margin: MarginConfig::default_for(kind),
    };
    let bias = kind == LossKind::CrossEntropy;
    let eval = |g: &mut Graph, xv: Var, wv: Var| -> Result<Var> {
        let bv = bias.then(|| g.tensor(&b));
        cfg.loss(
            g,
            &LossInput {
                embeddings: xv,
                labels: &labels,
                class_weights: wv,
                bias: bv,
            },
        )
    };
    let ex = gradient_check(
        |g, v| {
            let wv = g.tensor(&w);
            eval(g, v, wv)
        },
        &x,
        EPS,
    )?;
    let ew = gradient_check(
        |g, v| {
            let xv = g.tensor(&x);
            eval(g, xv, v)
        },
        &w,
        EPS,
    )?;
    Ok(ex.max(ew))
}

fn losses() -> Vec<(&'static str, Check)> {
    vec![
        ("loss_cross_entropy", |r| loss_case(r, LossKind::CrossEntropy)),
        ("loss_a_softmax", |r| loss_case(r, LossKind::ASoftmax)),
        ("loss_am_softmax", |r| loss_case(r, LossKind::AmSoftmax)),
        ("loss_arcface", |r| loss_case(r, LossKind::Arcface)),
    ]
}

/// Runs every case for seeds `0..seeds`.
pub fn run_gradient_suite(seeds: usize) -> Result<Vec<CaseReport>> {
    let cases = ops()
        .into_iter()
        .map(|c| (c, OP_TOLERANCE))
        .chain(losses().into_iter().map(|c| (c, LOSS_TOLERANCE)));
    let mut out = Vec::new();
    for (case, ((name, check), tolerance)) in cases.enumerate() {
        let mut max_error = 0.0f64;
        for seed in 0..seeds as u64 {
            let e = check(&mut stream_rng(seed, &[case as u64]))?;
            max_error = max_error.max(e);
        }
        out.push(CaseReport {
            name: name.to_string(),
            tolerance,
            seeds,
            max_error,
        });
    }
    Ok(out)
}
