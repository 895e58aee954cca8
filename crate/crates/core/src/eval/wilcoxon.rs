use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest `n` for which the exact null distribution is used.
pub const EXACT_MAX_N: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Wilcoxon {
    /// Every paired difference is zero.
    Undefined,
    Test {
        /// Sum of ranks of positive differences `a - b`.
        w: f64,
        /// Two-sided.
        p_value: f64,
        /// Pairs left after dropping zero differences.
        n: usize,
        exact: bool,
    },
}

impl Wilcoxon {
    pub fn significant(&self, level: f64) -> bool {
        matches!(*self, Wilcoxon::Test { p_value, .. } if p_value < level)
    }

    pub fn p_value(&self) -> Option<f64> {
        match *self {
            Wilcoxon::Test { p_value, .. } => Some(p_value),
            Wilcoxon::Undefined => None,
        }
    }
}

/// Signed-rank test of paired samples. Zero differences are dropped and
/// tied magnitudes share their average rank.
///
/// For `n <= 25` the two-sided p-value is exact, counting sign assignments
/// over the observed ranks; above that a normal approximation with tie and
/// continuity corrections is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<Wilcoxon> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("{} vs {} paired scores", a.len(), b.len())));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|&d| d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::contract("paired scores must be finite"));
    }
    if diffs.is_empty() {
        return Ok(Wilcoxon::Undefined);
    }
    let n = diffs.len();
    if n < 5 {
        return Err(Error::contract(format!(
            "signed-rank test needs at least 5 nonzero differences, got {n}"
        )));
    }
    let (doubled, ties) = doubled_ranks(&diffs);
    let w2: u64 = diffs
        .iter()
        .zip(&doubled)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let w = w2 as f64 / 2.0;
    if n <= EXACT_MAX_N {
        return Ok(Wilcoxon::Test {
            w,
            p_value: exact_two_sided(&doubled, w2),
            n,
            exact: true,
        });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let dev = (w - mean).abs();
    let z = (dev - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p_value = (2.0 * normal.sf(z)).min(1.0);
    Ok(Wilcoxon::Test {
        w,
        p_value,
        n,
        exact: false,
    })
}

/// Twice the average rank of each `|d|`, and the sizes of tie groups.
fn doubled_ranks(diffs: &[f64]) -> (Vec<u64>, Vec<u64>) {
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut ranks = vec![0u64; diffs.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && diffs[order[end]].abs() == diffs[order[start]].abs() {
            end += 1;
        }
        // ranks start+1..=end, doubled average = start + 1 + end
        for &i in &order[start..end] {
            ranks[i] = (start + 1 + end) as u64;
        }
        ties.push((end - start) as u64);
        start = end;
    }
    (ranks, ties)
}

/// `min(1, 2 * min(P[W <= w], P[W >= w]))` under equally likely signs.
fn exact_two_sided(doubled: &[u64], w2: u64) -> f64 {
    let total: u64 = doubled.iter().sum();
    // counts[s] = number of sign assignments whose positive doubled-rank sum is s
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all = 2f64.powi(doubled.len() as i32);
    let lower: u64 = counts[..=w2 as usize].iter().sum();
    let upper: u64 = counts[w2 as usize..].iter().sum();
    (2.0 * lower.min(upper) as f64 / all).min(1.0)
}
