use serde::Serialize;

use super::config::Method;
use crate::eval::{Compactness, EvalReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Stage1,
    Stage2,
    Baseline,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
            Stage::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub stage: Stage,
    /// Zero-based within the stage.
    pub epoch: usize,
    /// Mean over the batches that formed at least one unit; 0 when none did.
    pub mean_loss: f64,
    /// Loss units (triplets, pairs, center pairs, samples) summed over batches.
    pub units: usize,
    /// Optimizer steps taken.
    pub steps: usize,
    /// Anchors without an in-batch positive.
    pub skipped_anchors: usize,
    /// Extractor parameter fingerprint when the epoch began.
    pub params_at_start: String,
}

/// A computed-center refresh at the start of a stage-2 epoch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CenterRefresh {
    pub epoch: usize,
    /// Fingerprint of the extractor parameters the centers were computed from.
    pub source_params: String,
    pub centers: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompactnessRecord {
    /// `after-stage1` or `final`.
    pub at: String,
    pub within: f64,
    pub inter: f64,
    pub ratio: f64,
}

impl CompactnessRecord {
    pub fn new(at: &str, c: Compactness) -> Self {
        Self {
            at: at.into(),
            within: c.within,
            inter: c.inter,
            ratio: c.ratio(),
        }
    }
}

/// Everything a run did, free of wall-clock data so that reruns compare equal.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    pub config_fingerprint: String,
    pub train_samples: usize,
    pub initial_params: String,
    pub stage1_final_params: Option<String>,
    pub stage2_initial_params: Option<String>,
    pub final_params: String,
    /// Stage-2 epoch after which no center loss unit remained.
    pub stage2_converged_at: Option<usize>,
    /// `(stage, epoch)` where the plateau rule stopped a stage.
    pub early_stopped: Vec<(Stage, usize)>,
    pub epochs: Vec<EpochRecord>,
    pub center_refreshes: Vec<CenterRefresh>,
    /// Training-set compactness under the centers used for inference.
    pub compactness: Vec<CompactnessRecord>,
    pub metrics: Option<EvalReport>,
}

impl RunRecord {
    pub fn epochs_of(&self, stage: Stage) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(move |e| e.stage == stage)
    }

    pub fn compactness_at(&self, at: &str) -> Option<&CompactnessRecord> {
        self.compactness.iter().find(|c| c.at == at)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("run record serializes")
    }
}
