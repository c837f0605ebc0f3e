use std::f64::consts::PI;

use facenas_core::loss::{angular_psi, LossConfig, LossInput, LossKind, MarginConfig};
use facenas_core::{Graph, Tensor};
use proptest::prelude::*;

fn eval(cfg: LossConfig, x: &Tensor, w: &Tensor, b: Option<&Tensor>, y: &[usize]) -> f64 {
    let mut g = Graph::new();
    let (xv, wv) = (g.tensor(x), g.tensor(w));
    let bv = b.map(|t| g.tensor(t));
    let input = LossInput { embeddings: xv, labels: y, class_weights: wv, bias: bv };
    let l = cfg.loss(&mut g, &input).unwrap();
    g.item(l)
}

fn cfg(kind: LossKind, m: f64, s: f64) -> LossConfig {
    LossConfig { kind, margin: MarginConfig { m, s } }
}

fn all_kinds() -> [LossConfig; 4] {
    [
        cfg(LossKind::CrossEntropy, 0.0, 1.0),
        cfg(LossKind::ASoftmax, 3.0, 1.0),
        cfg(LossKind::AmSoftmax, 0.35, 30.0),
        cfg(LossKind::Arcface, 0.5, 30.0),
    ]
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1.0f64..1.0, rows * cols)
        .prop_map(move |v| Tensor::new(vec![rows, cols], v).unwrap())
}

#[test]
fn cross_entropy_matches_unstabilised_formula() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let (n, d, c) = (8, 16, 10);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-0.5..0.5)).collect();
    let w: Vec<f64> = (0..d * c).map(|_| rng.random_range(-0.5..0.5)).collect();
    let b: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
    let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let mut want = 0.0;
    for i in 0..n {
        let z: Vec<f64> = (0..c)
            .map(|j| b[j] + (0..d).map(|k| x[i * d + k] * w[k * c + j]).sum::<f64>())
            .collect();
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        want -= (z[y[i]].exp() / denom).ln();
    }
    want /= n as f64;
    let got = eval(
        cfg(LossKind::CrossEntropy, 0.0, 1.0),
        &Tensor::new(vec![n, d], x).unwrap(),
        &Tensor::new(vec![d, c], w).unwrap(),
        Some(&Tensor::new(vec![c], b).unwrap()),
        &y,
    );
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
}

#[test]
fn am_softmax_scalar_value() {
    let x = Tensor::new(vec![1, 2], vec![0.3, 0.3]).unwrap();
    let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let got = eval(cfg(LossKind::AmSoftmax, 0.35, 1.0), &x, &w, None, &[1]);
    // ln(1 + e^0.35) to 16 digits
    assert!((got - 0.883_382_155_418_777_0).abs() < 1e-12, "{got}");
}

#[test]
fn psi_is_continuous_at_interval_boundaries() {
    for m in [2u32, 3, 4] {
        for k in 1..m {
            let t = k as f64 * PI / m as f64;
            let (l, r) = (angular_psi(m, t - 1e-12), angular_psi(m, t + 1e-12));
            assert!((l - r).abs() < 1e-9, "m={m} k={k}: {l} vs {r}");
        }
    }
}

#[test]
fn psi_is_monotone_decreasing() {
    for m in 1u32..=4 {
        let mut prev = f64::INFINITY;
        for i in 0..=1000 {
            let v = angular_psi(m, PI * i as f64 / 1000.0);
            assert!(v < prev, "m={m} at step {i}");
            prev = v;
        }
    }
}

fn random_orthogonal(d: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    // Gram-Schmidt on random columns.
    let mut q = vec![0.0; d * d];
    for c in 0..d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for p in 0..c {
            let dot: f64 = (0..d).map(|r| v[r] * q[r * d + p]).sum();
            for r in 0..d {
                v[r] -= dot * q[r * d + p];
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for r in 0..d {
            q[r * d + c] = v[r] / n;
        }
    }
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn losses_are_rotation_invariant(x in matrix(3, 4), w in matrix(4, 5), seed in 0u64..1000) {
        let q = random_orthogonal(4, seed);
        // x' = x Q (rows rotate), W' = Qᵀ W (columns rotate the same way)
        let xr: Vec<f64> = (0..3).flat_map(|i| {
            let x = &x;
            let q = &q;
            (0..4).map(move |j| (0..4).map(|k| x.data()[i * 4 + k] * q[k * 4 + j]).sum())
        }).collect();
        let wr: Vec<f64> = (0..4).flat_map(|i| {
            let w = &w;
            let q = &q;
            (0..5).map(move |j| (0..4).map(|k| q[k * 4 + i] * w.data()[k * 5 + j]).sum())
        }).collect();
        let xr = Tensor::new(vec![3, 4], xr).unwrap();
        let wr = Tensor::new(vec![4, 5], wr).unwrap();
        let y = [0, 4, 2];
        for c in all_kinds() {
            let a = eval(c, &x, &w, None, &y);
            let b = eval(c, &xr, &wr, None, &y);
            prop_assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()), "{:?}: {} vs {}", c.kind, a, b);
        }
    }

    #[test]
    fn losses_ignore_order_of_other_classes(x in matrix(2, 3), w in matrix(3, 4)) {
        // Swap non-target columns 2 and 3 for targets 0 and 1.
        let mut ws = w.data().to_vec();
        for r in 0..3 {
            ws.swap(r * 4 + 2, r * 4 + 3);
        }
        let ws = Tensor::new(vec![3, 4], ws).unwrap();
        let y = [0, 1];
        for c in all_kinds() {
            let a = eval(c, &x, &w, None, &y);
            let b = eval(c, &x, &ws, None, &y);
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn margin_losses_increase_with_margin(theta in 0.2f64..1.2, other in 0.3f64..2.8) {
        // One sample in 2-D; target class at angle 0, other class at `other`.
        let x = Tensor::new(vec![1, 2], vec![theta.cos(), theta.sin()]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![1.0, other.cos(), 0.0, other.sin()]).unwrap();
        let margins = [0.0, 0.1, 0.2, 0.4, 0.8];
        for kind in [LossKind::AmSoftmax, LossKind::Arcface] {
            let vals: Vec<f64> = margins
                .iter()
                .filter(|&&m| theta < PI - m)
                .map(|&m| eval(cfg(kind, m, 4.0), &x, &w, None, &[0]))
                .collect();
            for p in vals.windows(2) {
                prop_assert!(p[1] > p[0], "{:?}: {:?}", kind, vals);
            }
        }
        let vals: Vec<f64> = (1..=4)
            .map(|m| eval(cfg(LossKind::ASoftmax, m as f64, 1.0), &x, &w, None, &[0]))
            .collect();
        for p in vals.windows(2) {
            prop_assert!(p[1] > p[0], "a_softmax: {:?}", vals);
        }
    }
}
