use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of `f` at `x` with central differences.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
/// `f` must build a scalar on the graph it is handed, starting from the
/// leaf that carries `x`.
pub fn gradient_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Contract(format!("eps {eps} outside (0, 1e-2]")));
    }
    let eval = |data: Vec<f64>, requires_grad: bool| -> Result<(Graph, Var, Var)> {
        let mut g = Graph::new();
        let leaf = g.leaf(x.shape().to_vec(), data, requires_grad)?;
        let out = f(&mut g, leaf)?;
        if g.value(out).len() != 1 {
            return Err(Error::Contract("gradient_check needs a scalar function".into()));
        }
        if !g.item(out).is_finite() {
            return Err(Error::Evaluation(format!(
                "function value {} is not finite",
                g.item(out)
            )));
        }
        Ok((g, leaf, out))
    };

    let (mut g, leaf, out) = eval(x.data().to_vec(), true)?;
    g.backward(out)?;
    let analytic = g
        .grad(leaf)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.data().to_vec();
        plus[i] += eps;
        let mut minus = x.data().to_vec();
        minus[i] -= eps;
        let (plus_x, minus_x) = (plus[i], minus[i]);
        let (gp, _, op) = eval(plus, false)?;
        let (gm, _, om) = eval(minus, false)?;
        // Divide by the step actually represented after rounding.
        let numeric = (gp.item(op) - gm.item(om)) / (plus_x - minus_x);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
