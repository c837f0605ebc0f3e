use std::collections::BTreeMap;

use rand::Rng;

use crate::arch::{NetworkPlan, SharedParams};
use crate::data::{Split, SplitDataset};
use crate::error::{Error, Result};
use crate::loss::{LossConfig, LossInput};
use crate::nn::BnMode;
use crate::schedule::OptimState;
use crate::tensor::{Graph, Tensor};

/// One momentum step of `plan`'s parameters on a labelled batch. Returns
/// the batch loss.
#[allow(clippy::too_many_arguments)]
pub fn train_step<R: Rng + ?Sized>(
    plan: &NetworkPlan,
    store: &mut SharedParams,
    optim: &mut OptimState,
    x: &Tensor,
    labels: &[usize],
    loss: &LossConfig,
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    let mut g = Graph::new();
    let xv = g.tensor(x);
    let out = plan.forward(store, &mut g, xv, BnMode::Train, rng)?;
    let l = loss.loss(
        &mut g,
        &LossInput {
            embeddings: out.embeddings,
            labels,
            class_weights: out.fc_weight,
            bias: Some(out.fc_bias),
        },
    )?;
    let value = g.item(l);
    if !value.is_finite() {
        return Err(Error::Evaluation(format!("training loss is {value}")));
    }
    g.backward(l)?;
    let mut grads: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (key, v) in &out.bound {
        let gr = g
            .grad(*v)
            .ok_or_else(|| Error::Contract(format!("no gradient reached `{key}`")))?;
        match grads.get_mut(key.as_str()) {
            Some(acc) => acc.iter_mut().zip(gr).for_each(|(a, b)| *a += b),
            None => {
                grads.insert(key, gr.to_vec());
            }
        }
    }
    for (key, grad) in grads {
        let w = store.param_mut(key)?;
        optim.step(key, w.data_mut(), &grad, lr)?;
    }
    Ok(value)
}

/// Predicted class per row of `x`.
pub fn predict<R: Rng + ?Sized>(
    plan: &NetworkPlan,
    store: &mut SharedParams,
    x: &Tensor,
    loss: &LossConfig,
    mode: BnMode,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if mode == BnMode::Train {
        return Err(Error::Contract("prediction must not update batch-norm statistics".into()));
    }
    let mut g = Graph::new();
    let xv = g.tensor(x);
    let out = plan.forward(store, &mut g, xv, mode, rng)?;
    let scores = loss.scores(
        &mut g,
        &LossInput {
            embeddings: out.embeddings,
            labels: &[],
            class_weights: out.fc_weight,
            bias: Some(out.fc_bias),
        },
    )?;
    let n = g.shape(scores)[1];
    Ok(g.value(scores)
        .chunks_exact(n)
        .map(|row| {
            // First maximum wins.
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect())
}

/// Fraction of correct predictions over `indices`, in chunks of `batch`.
#[allow(clippy::too_many_arguments)]
pub fn accuracy_on<R: Rng + ?Sized>(
    plan: &NetworkPlan,
    store: &mut SharedParams,
    data: &SplitDataset,
    split: &Split,
    indices: &[usize],
    batch: usize,
    loss: &LossConfig,
    mode: BnMode,
    rng: &mut R,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Contract("accuracy over zero samples".into()));
    }
    let mut correct = 0;
    for chunk in indices.chunks(batch.max(1)) {
        let (x, labels) = data.batch::<R>(split, chunk, None)?;
        let pred = predict(plan, store, &x, loss, mode, rng)?;
        correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Accuracy over a whole split.
pub fn evaluate<R: Rng + ?Sized>(
    plan: &NetworkPlan,
    store: &mut SharedParams,
    data: &SplitDataset,
    split: &Split,
    batch: usize,
    loss: &LossConfig,
    rng: &mut R,
) -> Result<f64> {
    let idx: Vec<usize> = (0..split.len()).collect();
    accuracy_on(plan, store, data, split, &idx, batch, loss, BnMode::Eval, rng)
}
