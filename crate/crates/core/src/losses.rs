//! Metric-learning and classification losses as graph builders.
//!
//! Every metric loss takes `[n, D]` row blocks and returns the `[n]` vector
//! of per-unit losses; [`batch_mean`] reduces it. Distances are true L_p
//! norms, not squared. The center variants gather rows of a `[K, D]` center
//! matrix by class id, so trainable centers receive gradients through the
//! same graph.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Margins and distance order shared by all metric losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossHyper {
    /// Margin of the triplet inequality.
    pub alpha: f64,
    /// Secondary margin on the negative-negative distance of quadruplet losses.
    pub beta: f64,
    pub p_norm: u32,
}

impl Default for LossHyper {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.25,
            p_norm: 2,
        }
    }
}

impl LossHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::contract(format!(
                "margins must be nonnegative (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        if self.p_norm == 0 {
            return Err(Error::contract("p_norm must be a positive integer"));
        }
        Ok(())
    }

    /// Quadruplet losses additionally need `beta < alpha`.
    pub fn validate_quadruplet(&self) -> Result<()> {
        self.validate()?;
        if self.beta >= self.alpha {
            return Err(Error::contract(format!(
                "quadruplet losses need beta < alpha (beta={}, alpha={})",
                self.beta, self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairLabel {
    pub same_class: bool,
}

/// Row-wise `||a_i - b_i||_p`.
pub fn distances(g: &mut Graph, a: Var, b: Var, p_norm: u32) -> Result<Var> {
    let diff = g.sub(a, b)?;
    g.row_norm(diff, p_norm)
}

/// `[d(a,p) + alpha - d(a,n)]_+` per row.
pub fn triplet(
    g: &mut Graph,
    anchors: Var,
    positives: Var,
    negatives: Var,
    hyper: &LossHyper,
) -> Result<Var> {
    let d_ap = distances(g, anchors, positives, hyper.p_norm)?;
    let d_an = distances(g, anchors, negatives, hyper.p_norm)?;
    hinge_gap(g, d_ap, d_an, hyper.alpha)
}

/// `[d_close + margin - d_far]_+`
fn hinge_gap(g: &mut Graph, d_close: Var, d_far: Var, margin: f64) -> Result<Var> {
    let gap = g.sub(d_close, d_far)?;
    let shifted = g.shift(gap, margin);
    Ok(g.relu(shifted))
}

/// `[alpha - d]_+`
fn hinge_below(g: &mut Graph, d: Var, margin: f64) -> Var {
    let neg = g.scale(d, -1.0);
    let shifted = g.shift(neg, margin);
    g.relu(shifted)
}

/// Class-center triplet: `[d(f_a, c_{y_a}) + alpha - d(f_a, c_{y_n})]_+`.
///
/// `centers` is the `[K, D]` table; `negative_classes[i]` must differ from
/// `anchor_classes[i]`.
pub fn center_triplet(
    g: &mut Graph,
    anchors: Var,
    centers: Var,
    anchor_classes: &[usize],
    negative_classes: &[usize],
    hyper: &LossHyper,
) -> Result<Var> {
    check_rows(g, anchors, anchor_classes.len(), "center_triplet")?;
    check_len(anchor_classes, negative_classes, "center_triplet")?;
    if let Some(i) = (0..anchor_classes.len()).find(|&i| anchor_classes[i] == negative_classes[i])
    {
        return Err(Error::contract(format!(
            "center triplet {i}: negative class equals anchor class {}",
            anchor_classes[i]
        )));
    }
    let c_pos = g.gather(centers, anchor_classes)?;
    let c_neg = g.gather(centers, negative_classes)?;
    triplet(g, anchors, c_pos, c_neg, hyper)
}

/// Contrastive pair loss: `d` for same-class pairs, `[alpha - d]_+` otherwise.
pub fn pairwise(
    g: &mut Graph,
    a: Var,
    b: Var,
    same_class: &[bool],
    hyper: &LossHyper,
) -> Result<Var> {
    check_rows(g, a, same_class.len(), "pairwise")?;
    let d = distances(g, a, b, hyper.p_norm)?;
    let pull = g.constant(Tensor::vector(
        same_class.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect(),
    ));
    let push = g.constant(Tensor::vector(
        same_class.iter().map(|&s| if s { 0.0 } else { 1.0 }).collect(),
    ));
    let pulled = g.mul(pull, d)?;
    let hinge = hinge_below(g, d, hyper.alpha);
    let pushed = g.mul(push, hinge)?;
    g.add(pulled, pushed)
}

/// Pair loss against class centers; the label is `anchor class == partner class`.
pub fn center_pairwise(
    g: &mut Graph,
    anchors: Var,
    centers: Var,
    anchor_classes: &[usize],
    partner_classes: &[usize],
    hyper: &LossHyper,
) -> Result<Var> {
    check_len(anchor_classes, partner_classes, "center_pairwise")?;
    let c = g.gather(centers, partner_classes)?;
    let same: Vec<bool> = anchor_classes
        .iter()
        .zip(partner_classes)
        .map(|(a, b)| a == b)
        .collect();
    pairwise(g, anchors, c, &same, hyper)
}

/// `[d(a,p) + alpha - d(a,n1)]_+ + [d(a,p) + beta - d(n1,n2)]_+` per row.
pub fn quadruplet(
    g: &mut Graph,
    anchors: Var,
    positives: Var,
    negatives1: Var,
    negatives2: Var,
    hyper: &LossHyper,
) -> Result<Var> {
    let d_ap = distances(g, anchors, positives, hyper.p_norm)?;
    let d_an = distances(g, anchors, negatives1, hyper.p_norm)?;
    let d_nn = distances(g, negatives1, negatives2, hyper.p_norm)?;
    let first = hinge_gap(g, d_ap, d_an, hyper.alpha)?;
    let second = hinge_gap(g, d_ap, d_nn, hyper.beta)?;
    g.add(first, second)
}

/// Quadruplet loss with positive and both negatives replaced by class centers.
pub fn center_quadruplet(
    g: &mut Graph,
    anchors: Var,
    centers: Var,
    anchor_classes: &[usize],
    negative1_classes: &[usize],
    negative2_classes: &[usize],
    hyper: &LossHyper,
) -> Result<Var> {
    check_rows(g, anchors, anchor_classes.len(), "center_quadruplet")?;
    check_len(anchor_classes, negative1_classes, "center_quadruplet")?;
    check_len(anchor_classes, negative2_classes, "center_quadruplet")?;
    for i in 0..anchor_classes.len() {
        let (a, n1, n2) = (anchor_classes[i], negative1_classes[i], negative2_classes[i]);
        if a == n1 || a == n2 || n1 == n2 {
            return Err(Error::contract(format!(
                "center quadruplet {i}: classes ({a}, {n1}, {n2}) are not distinct"
            )));
        }
    }
    let c_p = g.gather(centers, anchor_classes)?;
    let c_n1 = g.gather(centers, negative1_classes)?;
    let c_n2 = g.gather(centers, negative2_classes)?;
    quadruplet(g, anchors, c_p, c_n1, c_n2, hyper)
}

/// Per-row `-w_y log softmax(z)_y`. Unit weights when `class_weights` is `None`.
pub fn cross_entropy(
    g: &mut Graph,
    logits: Var,
    labels: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<Var> {
    focal(g, logits, labels, 0.0, class_weights)
}

/// Per-row focal loss `-w_y (1 - p_y)^gamma log p_y`.
pub fn focal(
    g: &mut Graph,
    logits: Var,
    labels: &[usize],
    gamma: f64,
    class_weights: Option<&[f64]>,
) -> Result<Var> {
    let k = *g.shape(logits).last().unwrap_or(&0);
    let weights = match class_weights {
        Some(w) => {
            if w.len() != k {
                return Err(Error::dim(format!("{} class weights for {k} classes", w.len())));
            }
            labels
                .iter()
                .map(|&y| w.get(y).copied().unwrap_or(1.0))
                .collect()
        }
        None => vec![1.0; labels.len()],
    };
    g.focal_cross_entropy(logits, labels, &weights, gamma)
}

/// Mean of per-unit losses. A batch that formed no units is a contract error.
pub fn batch_mean(g: &mut Graph, unit_losses: Var) -> Result<Var> {
    g.mean(unit_losses)
}

/// Inverse-frequency class weights `N / (K * N_k)`, mean 1 over a balanced set.
pub fn inverse_frequency_weights(class_sizes: &[usize]) -> Result<Vec<f64>> {
    if let Some(k) = class_sizes.iter().position(|&n| n == 0) {
        return Err(Error::contract(format!("class {k} has no samples")));
    }
    let total: usize = class_sizes.iter().sum();
    let k = class_sizes.len() as f64;
    Ok(class_sizes
        .iter()
        .map(|&n| total as f64 / (k * n as f64))
        .collect())
}

fn check_rows(g: &Graph, v: Var, n: usize, what: &str) -> Result<()> {
    if g.shape(v).first() != Some(&n) {
        return Err(Error::dim(format!(
            "{what}: {n} labels for a block of shape {:?}",
            g.shape(v)
        )));
    }
    Ok(())
}

fn check_len(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(format!(
            "{what}: {} anchors but {} partners",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Single-unit evaluation on plain vectors, going through the same graph code.
pub mod unit {
    use super::*;

    fn row(g: &mut Graph, v: &[f64]) -> Result<Var> {
        Ok(g.constant(Tensor::new(vec![1, v.len()], v.to_vec())?))
    }

    fn rows(g: &mut Graph, vs: &[&[f64]]) -> Result<Var> {
        Ok(g.constant(Tensor::from_rows(vs)?))
    }

    fn scalar(g: &Graph, v: Var) -> f64 {
        g.value(v).data()[0]
    }

    pub fn lp_distance(x: &[f64], y: &[f64], p_norm: u32) -> Result<f64> {
        let mut g = Graph::new();
        let (a, b) = (row(&mut g, x)?, row(&mut g, y)?);
        let d = distances(&mut g, a, b, p_norm)?;
        Ok(scalar(&g, d))
    }

    pub fn triplet(fa: &[f64], fp: &[f64], fn_: &[f64], hyper: &LossHyper) -> Result<f64> {
        let mut g = Graph::new();
        let (a, p, n) = (row(&mut g, fa)?, row(&mut g, fp)?, row(&mut g, fn_)?);
        let l = super::triplet(&mut g, a, p, n, hyper)?;
        Ok(scalar(&g, l))
    }

    pub fn center_triplet(
        fa: &[f64],
        c_anchor: &[f64],
        c_negative: &[f64],
        classes: (usize, usize),
        hyper: &LossHyper,
    ) -> Result<f64> {
        if classes.0 == classes.1 {
            return Err(Error::contract("negative class equals anchor class"));
        }
        let mut g = Graph::new();
        let a = row(&mut g, fa)?;
        let c = rows(&mut g, &[c_anchor, c_negative])?;
        let l = super::center_triplet(&mut g, a, c, &[0], &[1], hyper)?;
        Ok(scalar(&g, l))
    }

    pub fn pairwise(fa: &[f64], fb: &[f64], label: PairLabel, hyper: &LossHyper) -> Result<f64> {
        let mut g = Graph::new();
        let (a, b) = (row(&mut g, fa)?, row(&mut g, fb)?);
        let l = super::pairwise(&mut g, a, b, &[label.same_class], hyper)?;
        Ok(scalar(&g, l))
    }

    pub fn center_pairwise(
        fa: &[f64],
        c_b: &[f64],
        label: PairLabel,
        hyper: &LossHyper,
    ) -> Result<f64> {
        pairwise(fa, c_b, label, hyper)
    }

    pub fn quadruplet(
        fa: &[f64],
        fp: &[f64],
        fn1: &[f64],
        fn2: &[f64],
        hyper: &LossHyper,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let (a, p) = (row(&mut g, fa)?, row(&mut g, fp)?);
        let (n1, n2) = (row(&mut g, fn1)?, row(&mut g, fn2)?);
        let l = super::quadruplet(&mut g, a, p, n1, n2, hyper)?;
        Ok(scalar(&g, l))
    }

    /// `classes` = (anchor, negative 1, negative 2) class ids.
    pub fn center_quadruplet(
        fa: &[f64],
        c_p: &[f64],
        c_n1: &[f64],
        c_n2: &[f64],
        classes: (usize, usize, usize),
        hyper: &LossHyper,
    ) -> Result<f64> {
        let (a, n1, n2) = classes;
        if a == n1 || a == n2 || n1 == n2 {
            return Err(Error::contract(format!(
                "classes ({a}, {n1}, {n2}) are not distinct"
            )));
        }
        let mut g = Graph::new();
        let anchor = row(&mut g, fa)?;
        let c = rows(&mut g, &[c_p, c_n1, c_n2])?;
        let l = super::center_quadruplet(&mut g, anchor, c, &[0], &[1], &[2], hyper)?;
        Ok(scalar(&g, l))
    }

    pub fn cross_entropy(logits: &[f64], label: usize, weights: Option<&[f64]>) -> Result<f64> {
        focal(logits, label, 0.0, weights)
    }

    pub fn focal(
        logits: &[f64],
        label: usize,
        gamma: f64,
        weights: Option<&[f64]>,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let z = row(&mut g, logits)?;
        let l = super::focal(&mut g, z, &[label], gamma, weights)?;
        Ok(scalar(&g, l))
    }

    pub fn batch_mean(losses: &[f64]) -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(Tensor::vector(losses.to_vec()));
        let m = super::batch_mean(&mut g, v)?;
        Ok(scalar(&g, m))
    }
}
