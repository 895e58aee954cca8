//! Text and CSV renderings of metrics reports.
//!
//! The text form is TOML with percentages printed to two decimals. The CSV
//! form has one row per class plus macro rows:
//! `scope,class,precision,recall,f1,support,zero_division`.

use std::fmt::Write as _;

use serde::Serialize;

use super::metrics::{macro_metrics, small_class_report, ConfusionMatrix, MacroScores, MetricsReport};
use crate::error::{Error, Result};
use crate::sampling::DatasetIndex;

/// Full and small-class metrics for one evaluated split.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: u64,
    pub confusion: Vec<Vec<u64>>,
    pub full: MetricsReport,
    pub small_threshold: usize,
    /// `None` when no class has at most `small_threshold` samples.
    pub small: Option<MetricsReport>,
}

impl EvalReport {
    /// Small classes are decided by the sizes in `size_index`, normally the
    /// whole dataset rather than the test split.
    pub fn new(cm: &ConfusionMatrix, size_index: &DatasetIndex, small_threshold: usize) -> Result<Self> {
        if size_index.num_classes() != cm.num_classes() {
            return Err(Error::dim(format!(
                "index has {} classes, confusion matrix {}",
                size_index.num_classes(),
                cm.num_classes()
            )));
        }
        let full = macro_metrics(cm)?;
        let small = small_class_report(&full, size_index, small_threshold)?;
        Ok(Self {
            samples: cm.total(),
            confusion: cm.rows(),
            full,
            small_threshold,
            small,
        })
    }

    pub fn mf1(&self) -> f64 {
        self.full.mf1()
    }

    pub fn small_mf1(&self) -> Option<f64> {
        self.small.as_ref().map(MetricsReport::mf1)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let m = &self.full.macro_scores;
        writeln!(s, "[summary]").unwrap();
        writeln!(s, "samples = {}", self.samples).unwrap();
        writeln!(s, "classes = {}", self.full.classes.len()).unwrap();
        write_macro(&mut s, m, "");
        writeln!(s, "zero_division_classes = {:?}", self.full.flagged_classes()).unwrap();
        writeln!(s).unwrap();
        write_small(&mut s, self.small_threshold, self.small.as_ref());
        writeln!(s, "[confusion]").unwrap();
        for (i, row) in self.confusion.iter().enumerate() {
            writeln!(s, "true_{i} = {row:?}").unwrap();
        }
        for c in &self.full.classes {
            writeln!(s).unwrap();
            writeln!(s, "[class.{}]", c.class).unwrap();
            writeln!(s, "precision = {:.2}", c.precision).unwrap();
            writeln!(s, "recall = {:.2}", c.recall).unwrap();
            writeln!(s, "f1 = {:.2}", c.f1).unwrap();
            writeln!(s, "support = {}", c.support).unwrap();
            writeln!(s, "zero_division = {}", c.zero_division).unwrap();
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        for c in &self.full.classes {
            writeln!(
                s,
                "class,{},{:.2},{:.2},{:.2},{},{}",
                c.class, c.precision, c.recall, c.f1, c.support, c.zero_division
            )
            .unwrap();
        }
        csv_macro(&mut s, "macro", &self.full.macro_scores, self.samples);
        if let Some(small) = &self.small {
            let support = small.classes.iter().map(|c| c.support).sum();
            csv_macro(&mut s, "small_macro", &small.macro_scores, support);
        }
        s
    }
}

const CSV_HEADER: &str = "scope,class,precision,recall,f1,support,zero_division\n";

fn write_macro(s: &mut String, m: &MacroScores, suffix: &str) {
    writeln!(s, "mcp{suffix} = {:.2}", m.mcp).unwrap();
    writeln!(s, "mcr{suffix} = {:.2}", m.mcr).unwrap();
    writeln!(s, "mf1{suffix} = {:.2}", m.mf1).unwrap();
}

fn write_small(s: &mut String, threshold: usize, small: Option<&MetricsReport>) {
    writeln!(s, "[small_classes]").unwrap();
    writeln!(s, "threshold = {threshold}").unwrap();
    match small {
        Some(r) => {
            writeln!(s, "status = \"ok\"").unwrap();
            let ids: Vec<usize> = r.classes.iter().map(|c| c.class).collect();
            writeln!(s, "classes = {ids:?}").unwrap();
            write_macro(s, &r.macro_scores, "");
        }
        None => writeln!(s, "status = \"empty\"").unwrap(),
    }
    writeln!(s).unwrap();
}

fn csv_macro(s: &mut String, scope: &str, m: &MacroScores, support: u64) {
    writeln!(s, "{scope},,{:.2},{:.2},{:.2},{support},", m.mcp, m.mcr, m.mf1).unwrap();
}

/// Mean and sample standard deviation of fold scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct FoldStats {
    pub mean: MacroScores,
    pub std: MacroScores,
}

impl FoldStats {
    pub fn of(scores: &[MacroScores]) -> Self {
        let pick = |f: fn(&MacroScores) -> f64| -> (f64, f64) {
            let v: Vec<f64> = scores.iter().map(f).collect();
            mean_std(&v)
        };
        let (mcp, mcp_sd) = pick(|m| m.mcp);
        let (mcr, mcr_sd) = pick(|m| m.mcr);
        let (mf1, mf1_sd) = pick(|m| m.mf1);
        Self {
            mean: MacroScores { mcp, mcr, mf1 },
            std: MacroScores {
                mcp: mcp_sd,
                mcr: mcr_sd,
                mf1: mf1_sd,
            },
        }
    }
}

/// Arithmetic mean and `n - 1` standard deviation (0 for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossValReport {
    pub folds: Vec<EvalReport>,
    pub stats: FoldStats,
    /// Over folds whose small-class report is non-empty.
    pub small_stats: Option<FoldStats>,
}

impl CrossValReport {
    pub fn aggregate(folds: Vec<EvalReport>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::contract("no folds to aggregate"));
        }
        let stats = FoldStats::of(&folds.iter().map(|f| f.full.macro_scores).collect::<Vec<_>>());
        let small: Vec<MacroScores> = folds
            .iter()
            .filter_map(|f| f.small.as_ref().map(|r| r.macro_scores))
            .collect();
        let small_stats = (!small.is_empty()).then(|| FoldStats::of(&small));
        Ok(Self {
            folds,
            stats,
            small_stats,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "[summary]").unwrap();
        writeln!(s, "folds = {}", self.folds.len()).unwrap();
        write_macro(&mut s, &self.stats.mean, "");
        write_macro(&mut s, &self.stats.std, "_std");
        writeln!(s).unwrap();
        writeln!(s, "[small_classes]").unwrap();
        writeln!(s, "threshold = {}", self.folds[0].small_threshold).unwrap();
        match &self.small_stats {
            Some(st) => {
                writeln!(s, "status = \"ok\"").unwrap();
                write_macro(&mut s, &st.mean, "");
                write_macro(&mut s, &st.std, "_std");
            }
            None => writeln!(s, "status = \"empty\"").unwrap(),
        }
        for (i, f) in self.folds.iter().enumerate() {
            writeln!(s).unwrap();
            writeln!(s, "[fold.{i}]").unwrap();
            writeln!(s, "samples = {}", f.samples).unwrap();
            write_macro(&mut s, &f.full.macro_scores, "");
            if let Some(mf1) = f.small_mf1() {
                writeln!(s, "small_mf1 = {mf1:.2}").unwrap();
            }
            writeln!(s, "zero_division_classes = {:?}", f.full.flagged_classes()).unwrap();
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        for (i, f) in self.folds.iter().enumerate() {
            for c in &f.full.classes {
                writeln!(
                    s,
                    "fold{i}_class,{},{:.2},{:.2},{:.2},{},{}",
                    c.class, c.precision, c.recall, c.f1, c.support, c.zero_division
                )
                .unwrap();
            }
            csv_macro(&mut s, &format!("fold{i}_macro"), &f.full.macro_scores, f.samples);
        }
        let total = self.folds.iter().map(|f| f.samples).sum();
        csv_macro(&mut s, "mean_macro", &self.stats.mean, total);
        csv_macro(&mut s, "std_macro", &self.stats.std, total);
        if let Some(st) = &self.small_stats {
            csv_macro(&mut s, "mean_small_macro", &st.mean, total);
            csv_macro(&mut s, "std_small_macro", &st.std, total);
        }
        s
    }
}
