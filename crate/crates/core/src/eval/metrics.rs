use serde::Serialize;

use crate::error::{Error, Result};
use crate::sampling::DatasetIndex;

/// `K x K` counts, rows = true class, columns = predicted class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::dim("confusion matrix must be square and non-empty"));
        }
        Ok(Self {
            k,
            counts: rows.concat(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k).map(<[u64]>::to_vec).collect()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::dim("confusion matrices of different sizes"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

pub fn confusion(truth: &[usize], predicted: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::dim(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if k == 0 {
        return Err(Error::contract("a confusion matrix needs K >= 1"));
    }
    let mut counts = vec![0u64; k * k];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= k || p >= k {
            return Err(Error::contract(format!("label pair ({t}, {p}) outside [0, {k})")));
        }
        counts[t * k + p] += 1;
    }
    Ok(ConfusionMatrix { k, counts })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: usize,
    /// Percent.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of true samples of the class in the evaluated set.
    pub support: u64,
    /// Set when a ratio had a zero denominator and was defined as 0.
    pub zero_division: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MacroScores {
    pub mcp: f64,
    pub mcr: f64,
    pub mf1: f64,
}

/// Per-class and macro scores in percent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub macro_scores: MacroScores,
}

impl MetricsReport {
    pub fn mf1(&self) -> f64 {
        self.macro_scores.mf1
    }

    pub fn flagged_classes(&self) -> Vec<usize> {
        self.classes.iter().filter(|c| c.zero_division).map(|c| c.class).collect()
    }

    /// Same report restricted to `classes`, macros recomputed over them.
    pub fn restrict(&self, classes: &[usize]) -> Option<MetricsReport> {
        let selected: Vec<ClassMetrics> = self
            .classes
            .iter()
            .filter(|c| classes.contains(&c.class))
            .cloned()
            .collect();
        if selected.is_empty() {
            return None;
        }
        Some(MetricsReport {
            macro_scores: macro_of(&selected),
            classes: selected,
        })
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn macro_of(classes: &[ClassMetrics]) -> MacroScores {
    let n = classes.len() as f64;
    MacroScores {
        mcp: classes.iter().map(|c| c.precision).sum::<f64>() / n,
        mcr: classes.iter().map(|c| c.recall).sum::<f64>() / n,
        mf1: classes.iter().map(|c| c.f1).sum::<f64>() / n,
    }
}

/// `P = TP/(TP+FP)`, `R = TP/(TP+FN)`, `F1 = 2PR/(P+R)` per class; macro
/// scores are unweighted means over all `K` classes. A zero denominator
/// yields 0 and flags the class.
pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    if cm.total() == 0 {
        return Err(Error::contract("confusion matrix is empty"));
    }
    let k = cm.num_classes();
    let classes: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.get(c, c);
            let predicted: u64 = (0..k).map(|t| cm.get(t, c)).sum();
            let support: u64 = (0..k).map(|p| cm.get(c, p)).sum();
            let (p, p_flag) = ratio(tp, predicted);
            let (r, r_flag) = ratio(tp, support);
            let (f1, f_flag) = if p + r > 0.0 {
                (2.0 * p * r / (p + r), false)
            } else {
                (0.0, true)
            };
            ClassMetrics {
                class: c,
                precision: 100.0 * p,
                recall: 100.0 * r,
                f1: 100.0 * f1,
                support,
                zero_division: p_flag || r_flag || f_flag,
            }
        })
        .collect();
    Ok(MetricsReport {
        macro_scores: macro_of(&classes),
        classes,
    })
}

/// Default class-size bound of the small-class report.
pub const SMALL_CLASS_THRESHOLD: usize = 20;

/// Macro scores over classes with `N_k <= threshold` in `index`. `None`
/// when no class qualifies.
pub fn small_class_report(
    report: &MetricsReport,
    index: &DatasetIndex,
    threshold: usize,
) -> Result<Option<MetricsReport>> {
    if threshold == 0 {
        return Err(Error::contract("small-class threshold must be >= 1"));
    }
    let small: Vec<usize> = index
        .class_sizes()
        .iter()
        .enumerate()
        .filter(|&(_, &n)| n <= threshold)
        .map(|(k, _)| k)
        .collect();
    Ok(report.restrict(&small))
}
