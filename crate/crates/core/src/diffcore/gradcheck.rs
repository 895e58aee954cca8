use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Analytic vs. central-difference gradient of a scalar function of `point`.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

fn evaluate<F>(loss_fn: &F, point: &[f64], requires_grad: bool) -> Result<(Graph, Var, Var)>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::vector(point.to_vec()).with_requires_grad(requires_grad));
    let loss = loss_fn(&mut g, x)?;
    if !g.value(loss).is_scalar() {
        return Err(Error::contract(format!(
            "loss function returned shape {:?}",
            g.shape(loss)
        )));
    }
    Ok((g, x, loss))
}

/// Compare reverse-mode gradients against central differences with step `step`.
///
/// The error per coordinate is `|analytic - numeric| / max(1, |numeric|)`.
/// Fails with [`Error::Kink`] when `point` sits on a hinge or norm kink, or
/// when a perturbation flips any hinge, since the difference quotient is
/// meaningless there. Callers should nudge the point and retry.
pub fn finite_diff_check<F>(loss_fn: F, point: &[f64], step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let (g, x, loss) = evaluate(&loss_fn, point, true)?;
    let (pattern, on_kink) = g.kink_pattern();
    if on_kink {
        return Err(Error::Kink("a hinge input is exactly zero".into()));
    }
    let grads = g.backward(loss)?;
    let analytic = grads
        .wrt(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; point.len()]);

    let mut numeric = Vec::with_capacity(point.len());
    let mut max_rel_error: f64 = 0.0;
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        let mut side = |delta: f64| -> Result<f64> {
            probe[i] = point[i] + delta;
            let (g, _, loss) = evaluate(&loss_fn, &probe, true)?;
            probe[i] = point[i];
            if g.kink_pattern().0 != pattern {
                return Err(Error::Kink(format!(
                    "perturbing coordinate {i} by {delta:e} crosses a hinge"
                )));
            }
            g.value(loss).item()
        };
        let plus = side(step)?;
        let minus = side(-step)?;
        let n = (plus - minus) / (2.0 * step);
        max_rel_error = max_rel_error.max((analytic[i] - n).abs() / n.abs().max(1.0));
        numeric.push(n);
    }
    Ok(GradCheck {
        max_rel_error,
        analytic,
        numeric,
    })
}
