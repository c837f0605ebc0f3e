use facenas_core::arch::OpKind;
use facenas_core::controller::{BaselineKind, Controller, ControllerConfig, SampleTrace};
use facenas_core::{gradient_check, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn perturb_heads(c: &mut Controller, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (k, t) in c.params_mut().iter_mut() {
        if k.starts_with("head.") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
        }
    }
}

#[test]
fn five_node_trace_has_fifteen_decisions() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = Controller::new(5, ControllerConfig::default(), &mut rng).unwrap();
    let t = c.sample(&mut rng).unwrap();
    assert_eq!(t.decisions.len(), 15);
    assert_eq!(c.decision_count(), 15);
    assert!(t.log_prob <= 0.0 && t.entropy >= 0.0);
    assert_eq!(t.arch.len(), 5);
    // Uniform heads: every decision has probability 1/4 or 1/2.
    let want = 5.0 * 0.25f64.ln() + 10.0 * 0.5f64.ln();
    assert!((t.log_prob - want).abs() < 1e-12);
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let c = Controller::new(5, ControllerConfig::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let a: Vec<SampleTrace> = {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        (0..5).map(|_| c.sample(&mut r).unwrap()).collect()
    };
    let b: Vec<SampleTrace> = {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        (0..5).map(|_| c.sample(&mut r).unwrap()).collect()
    };
    assert_eq!(a, b);
}

#[test]
fn fresh_controller_decodes_op_zero_everywhere() {
    let c = Controller::new(5, ControllerConfig::default(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let a = c.argmax_decode().unwrap();
    assert_eq!(a.encode(), "0|0|0|0|0");
    assert_eq!(c.argmax_decode().unwrap(), a);
}

#[test]
fn head_probabilities_are_distributions() {
    let mut c = Controller::new(3, ControllerConfig::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    perturb_heads(&mut c, 4, 3.0);
    let p = c.first_op_probs().unwrap();
    assert_eq!(p.len(), 4);
    assert!(p.iter().all(|&v| v >= 0.0));
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn zero_advantage_without_entropy_leaves_parameters_alone() {
    let cfg = ControllerConfig { entropy_weight: 0.0, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut c = Controller::new(3, cfg, &mut rng).unwrap();
    perturb_heads(&mut c, 5, 1.0);
    let traces: Vec<_> = (0..4).map(|_| c.sample(&mut rng).unwrap()).collect();
    let before = c.params().clone();
    // No baseline yet: it starts at the batch mean, so equal rewards give
    // zero advantage.
    c.reinforce_update(&traces, &[0.7; 4], 0.1).unwrap();
    assert_eq!(c.params(), &before);
    assert_eq!(c.baseline(), Some(0.7));
    c.reinforce_update(&traces, &[0.7; 4], 0.1).unwrap();
    assert_eq!(c.params(), &before);
}

#[test]
fn length_mismatch_is_a_contract_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut c = Controller::new(2, ControllerConfig::default(), &mut rng).unwrap();
    let t = c.sample(&mut rng).unwrap();
    assert!(matches!(c.reinforce_update(&[t], &[1.0, 2.0], 0.1), Err(facenas_core::Error::Contract(_))));
    assert!(c.reinforce_update(&[], &[], 0.1).is_err());
}

#[test]
fn constant_reward_shift_does_not_change_the_update() {
    let cfg = ControllerConfig { baseline: BaselineKind::BatchMean, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut c = Controller::new(3, cfg, &mut rng).unwrap();
    perturb_heads(&mut c, 7, 1.0);
    let traces: Vec<_> = (0..6).map(|_| c.sample(&mut rng).unwrap()).collect();
    let r: Vec<f64> = (0..6).map(|i| 0.1 * i as f64).collect();
    let shifted: Vec<f64> = r.iter().map(|v| v + 0.75).collect();
    let (mut a, mut b) = (c.clone(), c.clone());
    a.reinforce_update(&traces, &r, 0.1).unwrap();
    b.reinforce_update(&traces, &shifted, 0.1).unwrap();
    for (k, ta) in a.params() {
        let tb = &b.params()[k];
        for (x, y) in ta.data().iter().zip(tb.data()) {
            assert!((x - y).abs() < 1e-12, "{k}");
        }
    }
    assert_ne!(a.params(), c.params());
}

#[test]
fn log_prob_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut c = Controller::new(3, ControllerConfig::default(), &mut rng).unwrap();
    perturb_heads(&mut c, 8, 0.5);
    let trace = c.sample(&mut rng).unwrap();
    for name in ["head.op.w", "head.skip1.b", "lstm.forget.wh", "lstm.cell.wx", "embed.op", "embed.start"] {
        let x: Tensor = c.params()[name].clone();
        let err = gradient_check(
            |g, v| {
                let (lp, ent) = c.replay(g, &trace.decisions, &[(name.to_string(), v)])?;
                let e = g.scale(ent, 0.3);
                g.add(lp, e)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{name}: {err}");
    }
}

#[test]
fn replay_reproduces_sampled_log_prob() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut c = Controller::new(4, ControllerConfig::default(), &mut rng).unwrap();
    perturb_heads(&mut c, 10, 2.0);
    let t = c.sample(&mut rng).unwrap();
    let mut g = facenas_core::Graph::new();
    let (lp, ent) = c.replay(&mut g, &t.decisions, &[]).unwrap();
    assert_eq!(g.item(lp), t.log_prob);
    assert_eq!(g.item(ent), t.entropy);
}

/// Rewards 1 for `best` as the single op, 0 otherwise; returns P(best)
/// after each update.
pub fn run_bandit(seed: u64, updates: usize, q: usize, lr: f64, best: OpKind) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Controller::new(1, ControllerConfig::default(), &mut rng).unwrap();
    let mut out = Vec::with_capacity(updates);
    for _ in 0..updates {
        let traces: Vec<_> = (0..q).map(|_| c.sample(&mut rng).unwrap()).collect();
        let rewards: Vec<f64> = traces
            .iter()
            .map(|t| if t.arch.nodes()[0].op == best { 1.0 } else { 0.0 })
            .collect();
        c.reinforce_update(&traces, &rewards, lr).unwrap();
        out.push(c.first_op_probs().unwrap()[best.id()]);
    }
    out
}

#[test]
fn bandit_converges_to_the_rewarded_arch() {
    let probs = run_bandit(11, 500, 4, 0.1, OpKind::AvgPool);
    let last = *probs.last().unwrap();
    assert!(last > 0.9, "P(best) = {last}");
}


#[test]
fn bandit_policy_decodes_the_rewarded_arch() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut c = Controller::new(1, ControllerConfig::default(), &mut rng).unwrap();
    for _ in 0..300 {
        let traces: Vec<_> = (0..4).map(|_| c.sample(&mut rng).unwrap()).collect();
        let rewards: Vec<f64> = traces.iter().map(|t| (t.arch.encode() == "3") as u8 as f64).collect();
        c.reinforce_update(&traces, &rewards, 0.1).unwrap();
    }
    assert_eq!(c.argmax_decode().unwrap().encode(), "3");
}

#[test]
fn hot_temperature_flattens_op_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut c = Controller::new(1, ControllerConfig::default(), &mut rng).unwrap();
    perturb_heads(&mut c, 13, 3.0);
    assert!(c.first_op_probs().unwrap().iter().any(|&p| (p - 0.25).abs() > 0.05));
    c.set_temperature(1e6).unwrap();
    let n = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[c.sample(&mut rng).unwrap().decisions[0]] += 1;
    }
    for k in counts {
        assert!((k as f64 / n as f64 - 0.25).abs() < 0.03, "{counts:?}");
    }
}

#[test]
fn sampled_frequencies_fit_head_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut c = Controller::new(1, ControllerConfig::default(), &mut rng).unwrap();
    perturb_heads(&mut c, 14, 1.5);
    let p = c.first_op_probs().unwrap();
    let n = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[c.sample(&mut rng).unwrap().decisions[0]] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(&p)
        .map(|(&o, &pk)| {
            let e = pk * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    // Upper 0.001 quantile of chi-square with 3 degrees of freedom.
    assert!(chi2 < 16.266, "chi2 = {chi2}, counts {counts:?}, p {p:?}");
}
