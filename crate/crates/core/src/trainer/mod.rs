//! Training recipes: balanced-batch metric learning, center-loss
//! fine-tuning, their combinations and classifier baselines.

mod config;
mod model;
mod record;
mod run;

pub use config::{
    BaselineConfig, BaselineKind, BENCHMARK_STAGE2_EPOCHS, DataConfig, EarlyStopConfig, EvalConfig, FinalCenters, Method,
    ModelConfig, Stage1Config, Stage1Loss, Stage2Config, Stage2Loss, TrainConfig,
};
pub use model::Model;
pub use record::{CenterRefresh, CompactnessRecord, EpochRecord, RunRecord, Stage};
pub use run::{
    initial_extractor, run_baseline, run_extension, run_pcct, run_stage1, run_stage2, train,
    EpochHook, Stage1Output, Stage2Output, TrainedRun,
};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{confusion, EvalReport};
use crate::sampling::DatasetIndex;

/// Metrics of `model` on `test`; small classes are judged by `size_index`.
pub fn evaluate(model: &Model, test: &Dataset, size_index: &DatasetIndex, small_threshold: usize) -> Result<EvalReport> {
    let k = size_index.num_classes();
    if let Some(mk) = model.num_classes() {
        if mk != k {
            return Err(Error::dim(format!("model predicts {mk} classes, data has {k}")));
        }
    }
    if model.extractor.input_dim() != test.dim() {
        return Err(Error::dim(format!(
            "model expects {} features, data has {}",
            model.extractor.input_dim(),
            test.dim()
        )));
    }
    let predicted = model.predict(test.features())?;
    let cm = confusion(test.labels(), &predicted, k)?;
    EvalReport::new(&cm, size_index, small_threshold)
}
