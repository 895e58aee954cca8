//! Cross-validated runs and hyperparameter sweeps.
//!
//! Fold `i` trains with seed `seed + i`; the split itself uses `seed`.

use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{compactness, stratified_kfold, CrossValReport, EvalReport};
use crate::trainer::{evaluate, train, CompactnessRecord, EpochRecord, Model, Stage, RunRecord, TrainConfig, TrainedRun};

/// One fold: the run record with test metrics attached.
#[derive(Clone, Debug, Serialize)]
pub struct FoldRun {
    pub fold: usize,
    pub record: RunRecord,
    /// Test metrics of the post-stage-1 model, for two-stage methods.
    pub stage1_metrics: Option<EvalReport>,
    /// Test-set compactness under the training centers (`after-stage1`, `final`).
    pub test_compactness: Vec<CompactnessRecord>,
    /// Wall seconds of every epoch as `(stage, epoch, seconds)`.
    #[serde(skip)]
    pub epoch_seconds: Vec<(Stage, usize, f64)>,
}

impl FoldRun {
    /// Mean wall seconds per epoch of `stage`; `None` if it never ran.
    pub fn mean_epoch_seconds(&self, stage: Stage) -> Option<f64> {
        let secs: Vec<f64> = self
            .epoch_seconds
            .iter()
            .filter(|e| e.0 == stage)
            .map(|e| e.2)
            .collect();
        (!secs.is_empty()).then(|| secs.iter().sum::<f64>() / secs.len() as f64)
    }
}

#[derive(Clone, Debug)]
pub struct CrossValOutcome {
    pub report: CrossValReport,
    pub folds: Vec<FoldRun>,
}

fn test_compactness(model: &Model, test: &Dataset, at: &str) -> Result<Option<CompactnessRecord>> {
    let Some(centers) = &model.centers else {
        return Ok(None);
    };
    let emb = model.embed(test.features())?;
    Ok(Some(CompactnessRecord::new(
        at,
        compactness(&emb, test.labels(), centers, model.p_norm)?,
    )))
}

/// Train on `train`, evaluate on `test`, attaching metrics to the record.
pub fn train_and_evaluate(
    config: &TrainConfig,
    train_set: &Dataset,
    test: &Dataset,
    size_index: &crate::sampling::DatasetIndex,
    fold: usize,
    hook: &mut dyn FnMut(&EpochRecord, std::time::Duration),
) -> Result<(FoldRun, TrainedRun)> {
    let run = train(config, train_set, hook)?;
    let threshold = config.eval.small_class_threshold;
    let mut record = run.record.clone();
    record.metrics = Some(evaluate(&run.model, test, size_index, threshold)?);
    let stage1 = run.stage1_model();
    let stage1_metrics = stage1
        .as_ref()
        .map(|m| evaluate(m, test, size_index, threshold))
        .transpose()?;
    let mut comp = Vec::new();
    if let Some(m) = &stage1 {
        comp.extend(test_compactness(m, test, "after-stage1")?);
    }
    if run.model.head.is_none() {
        comp.extend(test_compactness(&run.model, test, "final")?);
    }
    Ok((
        FoldRun {
            fold,
            record,
            stage1_metrics,
            test_compactness: comp,
            epoch_seconds: run.epoch_seconds.clone(),
        },
        run,
    ))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::contract(format!("thread pool: {e}")))
}

/// Stratified `config.eval.folds`-fold cross-validation, up to `jobs`
/// folds in parallel. Results are ordered by fold and independent of `jobs`.
pub fn crossval(config: &TrainConfig, data: &Dataset, jobs: usize) -> Result<CrossValOutcome> {
    let mut out = crossval_many(std::slice::from_ref(config), data, jobs)?;
    Ok(out.remove(0))
}

/// Cross-validate several configurations, sharing one pool of `jobs`
/// workers across all their folds.
pub fn crossval_many(configs: &[TrainConfig], data: &Dataset, jobs: usize) -> Result<Vec<CrossValOutcome>> {
    let mut tasks = Vec::new();
    for (c, config) in configs.iter().enumerate() {
        config.validate()?;
        let folds = stratified_kfold(data.index(), config.eval.folds, config.seed)?;
        tasks.extend(folds.into_iter().enumerate().map(|(i, f)| (c, i, f)));
    }
    let runs: Vec<Result<FoldRun>> = pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|(c, i, f)| {
                let mut cfg = configs[*c].clone();
                cfg.seed = cfg.seed.wrapping_add(*i as u64);
                let train_set = data.subset(&f.train)?;
                let test = data.subset(&f.test)?;
                let mut hook = |_: &EpochRecord, _: std::time::Duration| {};
                train_and_evaluate(&cfg, &train_set, &test, data.index(), *i, &mut hook).map(|r| r.0)
            })
            .collect()
    });
    let mut grouped: Vec<Vec<FoldRun>> = vec![Vec::new(); configs.len()];
    for ((c, _, _), run) in tasks.iter().zip(runs) {
        grouped[*c].push(run?);
    }
    grouped
        .into_iter()
        .map(|folds| {
            let report = CrossValReport::aggregate(
                folds
                    .iter()
                    .map(|f| f.record.metrics.clone().expect("metrics attached"))
                    .collect(),
            )?;
            Ok(CrossValOutcome { report, folds })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// `hyper.alpha`
    Margin,
    /// `model.embedding_dim`
    Dimension,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "margin" => Ok(SweepAxis::Margin),
            "dimension" => Ok(SweepAxis::Dimension),
            other => Err(Error::contract(format!(
                "unknown sweep axis {other:?} (known: margin, dimension)"
            ))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Margin => "margin",
            SweepAxis::Dimension => "dimension",
        }
    }

    pub fn apply(self, config: &TrainConfig, value: f64) -> Result<TrainConfig> {
        let mut c = config.clone();
        match self {
            SweepAxis::Margin => c.hyper.alpha = value,
            SweepAxis::Dimension => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::contract(format!("embedding dimension {value} is not a positive integer")));
                }
                c.model.embedding_dim = value as usize;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub mf1: f64,
    pub mcp: f64,
    pub mcr: f64,
    pub mf1_std: f64,
}

/// One cross-validated run per value, rows sorted by value.
pub fn sweep(
    axis: SweepAxis,
    values: &[f64],
    config: &TrainConfig,
    data: &Dataset,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::contract("a sweep needs at least one value"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let configs = sorted
        .iter()
        .map(|&v| axis.apply(config, v))
        .collect::<Result<Vec<_>>>()?;
    let outcomes = crossval_many(&configs, data, jobs)?;
    Ok(sorted
        .into_iter()
        .zip(outcomes)
        .map(|(value, o)| {
            let st = o.report.stats;
            SweepRow {
                value,
                mf1: st.mean.mf1,
                mcp: st.mean.mcp,
                mcr: st.mean.mcr,
                mf1_std: st.std.mf1,
            }
        })
        .collect())
}

pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut s = format!("{},mf1,mcp,mcr,mf1_std\n", axis.name());
    for r in rows {
        s.push_str(&format!("{},{:.2},{:.2},{:.2},{:.2}\n", r.value, r.mf1, r.mcp, r.mcr, r.mf1_std));
    }
    s
}
