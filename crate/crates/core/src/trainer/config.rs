use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::centers::{CenterInit, CenterMode};
use crate::diffcore::{Activation, AdamConfig};
use crate::error::{Error, Result};
use crate::eval::SMALL_CLASS_THRESHOLD;
use crate::fingerprint;
use crate::losses::LossHyper;
use crate::sampling::Mining;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    /// Plain cross-entropy.
    Bce,
    /// Inverse-frequency weighted cross-entropy.
    Wce,
    /// Cross-entropy on an oversampled stream.
    Oce,
    /// Inverse-frequency weighted focal loss.
    Wfce,
}

/// Which training recipe a run follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// Balanced triplet stage, then center-triplet stage.
    Pcct,
    /// [`Method::Pcct`] with trainable centers in the second stage.
    EfficientPcct,
    OnlyFirstStage,
    /// Center-triplet stage from a random initialization.
    OnlySecondStage,
    Pairwise,
    CenterPairwise,
    Quadruplet,
    CenterQuadruplet,
    Baseline(BaselineKind),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage1Loss {
    Triplet,
    Pairwise,
    Quadruplet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage2Loss {
    CenterTriplet,
    CenterPairwise,
    CenterQuadruplet,
}

impl Method {
    pub const ALL: [Method; 12] = [
        Method::Pcct,
        Method::EfficientPcct,
        Method::OnlyFirstStage,
        Method::OnlySecondStage,
        Method::Pairwise,
        Method::CenterPairwise,
        Method::Quadruplet,
        Method::CenterQuadruplet,
        Method::Baseline(BaselineKind::Bce),
        Method::Baseline(BaselineKind::Wce),
        Method::Baseline(BaselineKind::Oce),
        Method::Baseline(BaselineKind::Wfce),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pcct => "pcct",
            Method::EfficientPcct => "efficient-pcct",
            Method::OnlyFirstStage => "only-first-stage",
            Method::OnlySecondStage => "only-second-stage",
            Method::Pairwise => "pairwise",
            Method::CenterPairwise => "center-pairwise",
            Method::Quadruplet => "quadruplet",
            Method::CenterQuadruplet => "center-quadruplet",
            Method::Baseline(BaselineKind::Bce) => "baseline:bce",
            Method::Baseline(BaselineKind::Wce) => "baseline:wce",
            Method::Baseline(BaselineKind::Oce) => "baseline:oce",
            Method::Baseline(BaselineKind::Wfce) => "baseline:wfce",
        }
    }

    /// Metric loss of the balanced-batch stage, `None` when it is skipped.
    pub fn stage1_loss(self) -> Option<Stage1Loss> {
        match self {
            Method::Pcct | Method::EfficientPcct | Method::OnlyFirstStage => Some(Stage1Loss::Triplet),
            Method::Pairwise | Method::CenterPairwise => Some(Stage1Loss::Pairwise),
            Method::Quadruplet | Method::CenterQuadruplet => Some(Stage1Loss::Quadruplet),
            Method::OnlySecondStage | Method::Baseline(_) => None,
        }
    }

    /// Center loss of the second stage, `None` when it is skipped.
    pub fn stage2_loss(self) -> Option<Stage2Loss> {
        match self {
            Method::Pcct | Method::EfficientPcct | Method::OnlySecondStage => Some(Stage2Loss::CenterTriplet),
            Method::CenterPairwise => Some(Stage2Loss::CenterPairwise),
            Method::CenterQuadruplet => Some(Stage2Loss::CenterQuadruplet),
            _ => None,
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Method::Baseline(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::contract(format!("unknown method {s:?} (known: {})", names.join(", ")))
            })
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            embedding_dim: 128,
            activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    pub epochs: usize,
    pub m_per_class: usize,
    pub mining: Mining,
    /// Weight of an auxiliary cross-entropy head; 0 disables it.
    pub lambda_ce: f64,
    /// Balanced batches per epoch; by default `ceil(N / (K * m_per_class))`.
    pub batches_per_epoch: Option<usize>,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            epochs: 200,
            m_per_class: 10,
            mining: Mining::RandomHard,
            lambda_ce: 0.0,
            batches_per_epoch: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalCenters {
    /// Recompute from the final extractor, except with trainable centers.
    #[default]
    Auto,
    Computed,
    /// Keep the trainable rows (falls back to computed for computed mode).
    Learned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Config {
    pub epochs: usize,
    pub batch_size: usize,
    pub center_mode: CenterMode,
    pub center_init: CenterInit,
    /// Overrides the optimizer learning rate for this stage.
    pub learning_rate: Option<f64>,
    /// Layers of the extractor, counted from the input, kept fixed.
    pub freeze_leading_layers: usize,
    pub final_centers: FinalCenters,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            center_mode: CenterMode::Computed,
            center_init: CenterInit::FromComputed,
            learning_rate: None,
            freeze_leading_layers: 0,
            final_centers: FinalCenters::Auto,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub focal_gamma: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            focal_gamma: 2.0,
        }
    }
}

/// Stop a stage once the epoch mean loss has not improved by `min_delta`
/// for `patience` epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EarlyStopConfig {
    pub enabled: bool,
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            patience: 10,
            min_delta: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub folds: usize,
    pub small_class_threshold: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            small_class_threshold: SMALL_CLASS_THRESHOLD,
        }
    }
}

/// Where the CLI finds its data when no `--data` path is given.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub preset: Option<String>,
    pub path: Option<String>,
    /// Generation seed for presets.
    pub seed: u64,
}

/// Stage-2 epochs of [`TrainConfig::benchmark`]. Longer computed-center
/// runs inflate the embedding and lose MF1 on the synthetic presets.
pub const BENCHMARK_STAGE2_EPOCHS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: Method,
    /// Every random stream of a run derives from this value.
    pub seed: u64,
    pub output_dir: Option<String>,
    pub model: ModelConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub baseline: BaselineConfig,
    pub hyper: LossHyper,
    pub optimizer: AdamConfig,
    pub early_stop: EarlyStopConfig,
    pub eval: EvalConfig,
    pub data: DataConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Pcct,
            seed: 0,
            output_dir: None,
            model: ModelConfig::default(),
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            baseline: BaselineConfig::default(),
            hyper: LossHyper::default(),
            optimizer: AdamConfig::default(),
            early_stop: EarlyStopConfig::default(),
            eval: EvalConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// The effective configuration, all defaults spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint::of_bytes(self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if matches!(self.method.stage1_loss(), Some(Stage1Loss::Quadruplet))
            || matches!(self.method.stage2_loss(), Some(Stage2Loss::CenterQuadruplet))
        {
            self.hyper.validate_quadruplet()?;
        }
        self.optimizer.validate()?;
        if let Some(lr) = self.stage2.learning_rate {
            AdamConfig {
                learning_rate: lr,
                ..self.optimizer
            }
            .validate()?;
        }
        if self.model.embedding_dim == 0 || self.model.hidden.contains(&0) {
            return Err(Error::contract("layer widths must be positive"));
        }
        if self.stage1.m_per_class == 0 || self.stage2.batch_size == 0 || self.baseline.batch_size == 0 {
            return Err(Error::contract("batch sizes must be positive"));
        }
        if self.stage1.batches_per_epoch == Some(0) {
            return Err(Error::contract("stage1.batches_per_epoch must be positive"));
        }
        if !(self.stage1.lambda_ce >= 0.0) || !(self.baseline.focal_gamma >= 0.0) {
            return Err(Error::contract("lambda_ce and focal_gamma must be nonnegative"));
        }
        if self.stage2.freeze_leading_layers > self.model.hidden.len() {
            return Err(Error::contract(format!(
                "cannot freeze {} of {} layers",
                self.stage2.freeze_leading_layers,
                self.model.hidden.len() + 1
            )));
        }
        if self.eval.folds < 2 || self.eval.small_class_threshold == 0 {
            return Err(Error::contract("eval.folds must be >= 2 and the small-class threshold >= 1"));
        }
        if self.data.preset.is_some() && self.data.path.is_some() {
            return Err(Error::contract("data.preset and data.path are mutually exclusive"));
        }
        Ok(())
    }

    /// Extractor layer widths for `in_dim` inputs.
    /// Defaults on the `skin7-like` preset with a short stage-2 fine-tune;
    /// see `docs/benchmark.md` for the pilot runs behind it.
    pub fn benchmark() -> Self {
        let mut c = Self::default();
        c.stage2.epochs = BENCHMARK_STAGE2_EPOCHS;
        c.data.preset = Some("skin7-like".into());
        c
    }

    pub fn layer_sizes(&self, in_dim: usize) -> Vec<usize> {
        let mut sizes = vec![in_dim];
        sizes.extend(&self.model.hidden);
        sizes.push(self.model.embedding_dim);
        sizes
    }

    /// Center mode of the second stage after applying the method.
    pub fn effective_center_mode(&self) -> CenterMode {
        match self.method {
            Method::EfficientPcct => CenterMode::Trainable,
            _ => self.stage2.center_mode,
        }
    }

    pub fn stage1_epochs(&self) -> usize {
        if self.method.stage1_loss().is_some() {
            self.stage1.epochs
        } else {
            0
        }
    }

    pub fn stage2_epochs(&self) -> usize {
        if self.method.stage2_loss().is_some() {
            self.stage2.epochs
        } else {
            0
        }
    }
}
