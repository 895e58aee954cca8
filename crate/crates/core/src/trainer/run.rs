use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{BaselineKind, FinalCenters, Method, Stage1Loss, Stage2Loss, TrainConfig};
use super::model::Model;
use super::record::{CenterRefresh, CompactnessRecord, EpochRecord, RunRecord, Stage};
use crate::centers::{compute_centers, init_trainable_centers, CenterMode, CenterTable};
use crate::data::Dataset;
use crate::diffcore::{Activation, AdamConfig, AdamState, Checkpoint, Graph, Mlp, Tensor, Var};
use crate::error::{Error, Result};
use crate::eval::compactness;
use crate::fingerprint;
use crate::losses;
use crate::sampling::{
    build_balanced_batch, flat_batches, form_center_pairs, form_center_quadruplets,
    form_center_triplets, form_pairs, form_quadruplets, form_triplets, oversample_indices,
    BatchPlan,
};

/// Called after every epoch with the record and its wall time.
pub type EpochHook<'a> = &'a mut dyn FnMut(&EpochRecord, Duration);

/// Random streams derived from the run seed.
#[derive(Clone, Copy)]
enum Stream {
    Init = 0,
    Stage1 = 1,
    Stage2 = 2,
    Baseline = 3,
    Centers = 4,
    Head = 5,
}

fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

fn hex_params(extractor: &Mlp) -> String {
    fingerprint::hex(fingerprint::of_tensors(extractor.params()))
}

/// Seeded Glorot initialization of the configured extractor.
pub fn initial_extractor(config: &TrainConfig, in_dim: usize) -> Result<Mlp> {
    Mlp::new(
        &config.layer_sizes(in_dim),
        config.model.activation,
        &mut rng_for(config.seed, Stream::Init),
    )
}

fn linear_head(config: &TrainConfig, k: usize) -> Result<Mlp> {
    Mlp::new(
        &[config.model.embedding_dim, k],
        Activation::Relu,
        &mut rng_for(config.seed, Stream::Head),
    )
}

struct Plateau {
    enabled: bool,
    patience: usize,
    min_delta: f64,
    best: f64,
    stale: usize,
}

impl Plateau {
    fn new(config: &TrainConfig) -> Self {
        Self {
            enabled: config.early_stop.enabled,
            patience: config.early_stop.patience,
            min_delta: config.early_stop.min_delta,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// True when the stage should stop after this epoch.
    fn update(&mut self, loss: f64) -> bool {
        if !self.enabled {
            return false;
        }
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }
}

/// Per-epoch accumulator.
struct EpochStats {
    loss_sum: f64,
    steps: usize,
    units: usize,
    skipped: usize,
}

impl EpochStats {
    fn new() -> Self {
        Self {
            loss_sum: 0.0,
            steps: 0,
            units: 0,
            skipped: 0,
        }
    }

    fn mean(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.loss_sum / self.steps as f64
        }
    }
}

fn check_finite(stage: &'static str, epoch: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { stage, epoch, loss })
    }
}

fn require_classes(data: &Dataset, min: usize, what: &str) -> Result<()> {
    data.index().require_nonempty_classes()?;
    if data.num_classes() < min {
        return Err(Error::contract(format!(
            "{what} needs at least {min} classes, dataset has {}",
            data.num_classes()
        )));
    }
    Ok(())
}

fn gather(g: &mut Graph, src: Var, rows: impl Iterator<Item = usize>) -> Result<Var> {
    let rows: Vec<usize> = rows.collect();
    g.gather(src, &rows)
}

pub struct Stage1Output {
    pub extractor: Mlp,
    /// Auxiliary cross-entropy head, present when `lambda_ce > 0`.
    pub head: Option<Mlp>,
    pub epochs: Vec<EpochRecord>,
    pub early_stopped: Option<usize>,
    pub epoch_seconds: Vec<f64>,
}

/// Balanced-batch metric learning from `extractor`.
pub fn run_stage1(
    config: &TrainConfig,
    data: &Dataset,
    mut extractor: Mlp,
    loss_kind: Stage1Loss,
    epochs: usize,
    hook: EpochHook<'_>,
) -> Result<Stage1Output> {
    let min_classes = if loss_kind == Stage1Loss::Quadruplet { 3 } else { 2 };
    require_classes(data, min_classes, "the balanced-batch stage")?;
    let c = &config.stage1;
    let k = data.num_classes();
    let n_batches = c
        .batches_per_epoch
        .unwrap_or_else(|| data.len().div_ceil(k * c.m_per_class))
        .max(1);
    let mut head = if c.lambda_ce > 0.0 {
        Some(linear_head(config, k)?)
    } else {
        None
    };
    let mut adam = {
        let mut ps = extractor.params();
        if let Some(h) = &head {
            ps.extend(h.params());
        }
        AdamState::new(config.optimizer, &ps)?
    };
    let mut rng = rng_for(config.seed, Stream::Stage1);
    let mut plateau = Plateau::new(config);
    let mut out = Stage1Output {
        extractor: extractor.clone(),
        head: None,
        epochs: Vec::new(),
        early_stopped: None,
        epoch_seconds: Vec::new(),
    };

    for epoch in 0..epochs {
        let started = Instant::now();
        let params_at_start = hex_params(&extractor);
        let mut stats = EpochStats::new();
        for _ in 0..n_batches {
            let plan = build_balanced_batch(data.index(), c.m_per_class, &mut rng)?;
            let mut g = Graph::new();
            let x = g.constant(data.gather(&plan.indices));
            let (emb, bound) = extractor.forward(&mut g, x)?;
            let Some((unit_losses, units, skipped)) =
                stage1_units(&mut g, &plan, emb, loss_kind, config, &mut rng)?
            else {
                stats.skipped += plan.len();
                continue;
            };
            let mut loss = losses::batch_mean(&mut g, unit_losses)?;
            let head_bound = match &head {
                Some(h) => {
                    let hb = h.bind(&mut g);
                    let logits = h.apply(&mut g, &hb, emb)?;
                    let ce = losses::cross_entropy(&mut g, logits, &plan.labels, None)?;
                    let ce = g.mean(ce)?;
                    let weighted = g.scale(ce, c.lambda_ce);
                    loss = g.add(loss, weighted)?;
                    Some(hb)
                }
                None => None,
            };
            let value = g.value(loss).item()?;
            check_finite("stage1", epoch, value)?;
            let grads = g.backward(loss)?;
            extractor.zero_grad();
            extractor.accumulate_grads(&bound, &grads)?;
            let mut params = extractor.params_mut();
            if let (Some(h), Some(hb)) = (head.as_mut(), &head_bound) {
                h.zero_grad();
                h.accumulate_grads(hb, &grads)?;
                params.extend(h.params_mut());
            }
            adam.step(&mut params)?;
            stats.loss_sum += value;
            stats.steps += 1;
            stats.units += units;
            stats.skipped += skipped;
        }
        let record = EpochRecord {
            stage: Stage::Stage1,
            epoch,
            mean_loss: stats.mean(),
            units: stats.units,
            steps: stats.steps,
            skipped_anchors: stats.skipped,
            params_at_start,
        };
        check_finite("stage1", epoch, record.mean_loss)?;
        let elapsed = started.elapsed();
        hook(&record, elapsed);
        out.epoch_seconds.push(elapsed.as_secs_f64());
        let stop = plateau.update(record.mean_loss);
        out.epochs.push(record);
        if stop {
            out.early_stopped = Some(epoch);
            break;
        }
    }
    extractor.zero_grad();
    if let Some(h) = head.as_mut() {
        h.zero_grad();
    }
    out.extractor = extractor;
    out.head = head;
    Ok(out)
}

/// Per-unit losses of one balanced batch, with unit and skipped-anchor
/// counts; `None` when the batch formed no unit.
fn stage1_units(
    g: &mut Graph,
    plan: &BatchPlan,
    emb: Var,
    kind: Stage1Loss,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(Var, usize, usize)>> {
    let hyper = &config.hyper;
    match kind {
        Stage1Loss::Triplet => {
            let emb_val = g.value(emb).clone();
            let t = form_triplets(plan, &emb_val, config.stage1.mining, hyper, rng)?;
            if t.is_empty() {
                return Ok(None);
            }
            let a = gather(g, emb, t.iter().map(|u| u.anchor))?;
            let p = gather(g, emb, t.iter().map(|u| u.positive))?;
            let n = gather(g, emb, t.iter().map(|u| u.negative))?;
            let l = losses::triplet(g, a, p, n, hyper)?;
            Ok(Some((l, t.len(), plan.len() - t.len())))
        }
        Stage1Loss::Pairwise => {
            let pairs = form_pairs(plan, rng)?;
            let same: Vec<bool> = pairs.iter().map(|p| p.same_class).collect();
            let a = gather(g, emb, pairs.iter().map(|p| p.a))?;
            let b = gather(g, emb, pairs.iter().map(|p| p.b))?;
            let l = losses::pairwise(g, a, b, &same, hyper)?;
            let with_positive = same.iter().filter(|&&s| s).count();
            Ok(Some((l, pairs.len(), plan.len() - with_positive)))
        }
        Stage1Loss::Quadruplet => {
            let q = form_quadruplets(plan, rng)?;
            if q.is_empty() {
                return Ok(None);
            }
            let a = gather(g, emb, q.iter().map(|u| u.anchor))?;
            let p = gather(g, emb, q.iter().map(|u| u.positive))?;
            let n1 = gather(g, emb, q.iter().map(|u| u.negative1))?;
            let n2 = gather(g, emb, q.iter().map(|u| u.negative2))?;
            let l = losses::quadruplet(g, a, p, n1, n2, hyper)?;
            Ok(Some((l, q.len(), plan.len() - q.len())))
        }
    }
}

pub struct Stage2Output {
    pub extractor: Mlp,
    /// Centers used for inference, per the `final_centers` setting.
    pub centers: CenterTable,
    pub epochs: Vec<EpochRecord>,
    pub refreshes: Vec<CenterRefresh>,
    pub converged_at: Option<usize>,
    pub early_stopped: Option<usize>,
    pub epoch_seconds: Vec<f64>,
}

/// Center-loss fine-tuning from `extractor` over flat batches.
pub fn run_stage2(
    config: &TrainConfig,
    data: &Dataset,
    mut extractor: Mlp,
    loss_kind: Stage2Loss,
    epochs: usize,
    hook: EpochHook<'_>,
) -> Result<Stage2Output> {
    let min_classes = if loss_kind == Stage2Loss::CenterQuadruplet { 3 } else { 2 };
    require_classes(data, min_classes, "the center-loss stage")?;
    let c = &config.stage2;
    let hyper = &config.hyper;
    let index = data.index();
    let mode = config.effective_center_mode();
    extractor.freeze_leading(c.freeze_leading_layers);

    let mut centers = match mode {
        CenterMode::Computed => compute_centers(&extractor, data.features(), index, Some(0))?,
        CenterMode::Trainable => {
            let start = compute_centers(&extractor, data.features(), index, Some(0))?;
            init_trainable_centers(
                data.num_classes(),
                extractor.output_dim(),
                c.center_init,
                Some(&start),
                &mut rng_for(config.seed, Stream::Centers),
            )?
        }
    };
    let optimizer = AdamConfig {
        learning_rate: c.learning_rate.unwrap_or(config.optimizer.learning_rate),
        ..config.optimizer
    };
    let mut adam = {
        let mut ps = extractor.params();
        if mode == CenterMode::Trainable {
            ps.push(centers.matrix());
        }
        AdamState::new(optimizer, &ps)?
    };
    let mut rng = rng_for(config.seed, Stream::Stage2);
    let mut plateau = Plateau::new(config);
    let all: Vec<usize> = (0..data.len()).collect();
    let mut out = Stage2Output {
        extractor: extractor.clone(),
        centers: centers.clone(),
        epochs: Vec::new(),
        refreshes: Vec::new(),
        converged_at: None,
        early_stopped: None,
        epoch_seconds: Vec::new(),
    };

    for epoch in 0..epochs {
        let started = Instant::now();
        let params_at_start = hex_params(&extractor);
        if mode == CenterMode::Computed && epoch > 0 {
            centers = compute_centers(&extractor, data.features(), index, Some(epoch))?;
        }
        if mode == CenterMode::Computed {
            out.refreshes.push(CenterRefresh {
                epoch,
                source_params: params_at_start.clone(),
                centers: fingerprint::hex(fingerprint::of_tensors([centers.matrix()])),
            });
        }
        let mut stats = EpochStats::new();
        for plan in flat_batches(index, &all, c.batch_size, &mut rng)? {
            let mut g = Graph::new();
            let x = g.constant(data.gather(&plan.indices));
            let (emb, bound) = extractor.forward(&mut g, x)?;
            let emb_val = g.value(emb).clone();
            let cv = g.leaf(centers.matrix());
            let Some((unit_losses, units)) =
                stage2_units(&mut g, &plan, emb, &emb_val, cv, &centers, loss_kind, hyper)?
            else {
                continue;
            };
            let loss = losses::batch_mean(&mut g, unit_losses)?;
            let value = g.value(loss).item()?;
            check_finite("stage2", epoch, value)?;
            let grads = g.backward(loss)?;
            extractor.zero_grad();
            extractor.accumulate_grads(&bound, &grads)?;
            let mut params = extractor.params_mut();
            if mode == CenterMode::Trainable {
                let m = centers.matrix_mut();
                m.zero_grad();
                grads.accumulate(cv, m)?;
                params.push(m);
            }
            adam.step(&mut params)?;
            stats.loss_sum += value;
            stats.steps += 1;
            stats.units += units;
        }
        let record = EpochRecord {
            stage: Stage::Stage2,
            epoch,
            mean_loss: stats.mean(),
            units: stats.units,
            steps: stats.steps,
            skipped_anchors: 0,
            params_at_start,
        };
        check_finite("stage2", epoch, record.mean_loss)?;
        if !centers.is_finite() {
            return Err(Error::Divergence {
                stage: "stage2",
                epoch,
                loss: f64::NAN,
            });
        }
        let elapsed = started.elapsed();
        hook(&record, elapsed);
        out.epoch_seconds.push(elapsed.as_secs_f64());
        let converged = record.units == 0;
        let stop = plateau.update(record.mean_loss);
        out.epochs.push(record);
        if converged {
            out.converged_at = Some(epoch);
            break;
        }
        if stop {
            out.early_stopped = Some(epoch);
            break;
        }
    }

    extractor.zero_grad();
    extractor.freeze_leading(0);
    let keep_learned = mode == CenterMode::Trainable && c.final_centers != FinalCenters::Computed;
    out.centers = if keep_learned {
        let mut learned = centers;
        learned.matrix_mut().zero_grad();
        learned
    } else {
        compute_centers(&extractor, data.features(), index, Some(out.epochs.len()))?
    };
    out.extractor = extractor;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn stage2_units(
    g: &mut Graph,
    plan: &BatchPlan,
    emb: Var,
    emb_val: &Tensor,
    cv: Var,
    centers: &CenterTable,
    kind: Stage2Loss,
    hyper: &losses::LossHyper,
) -> Result<Option<(Var, usize)>> {
    let y = &plan.labels;
    let l = match kind {
        Stage2Loss::CenterTriplet => {
            let u = form_center_triplets(plan, emb_val, centers, hyper)?;
            if u.is_empty() {
                return Ok(None);
            }
            let a = gather(g, emb, u.iter().map(|&(a, _)| a))?;
            let ya: Vec<usize> = u.iter().map(|&(a, _)| y[a]).collect();
            let yn: Vec<usize> = u.iter().map(|&(_, n)| n).collect();
            (losses::center_triplet(g, a, cv, &ya, &yn, hyper)?, u.len())
        }
        Stage2Loss::CenterPairwise => {
            let u = form_center_pairs(plan, emb_val, centers, hyper)?;
            if u.is_empty() {
                return Ok(None);
            }
            let a = gather(g, emb, u.iter().map(|&(a, _)| a))?;
            let ya: Vec<usize> = u.iter().map(|&(a, _)| y[a]).collect();
            let yb: Vec<usize> = u.iter().map(|&(_, b)| b).collect();
            (losses::center_pairwise(g, a, cv, &ya, &yb, hyper)?, u.len())
        }
        Stage2Loss::CenterQuadruplet => {
            let u = form_center_quadruplets(plan, emb_val, centers, hyper)?;
            if u.is_empty() {
                return Ok(None);
            }
            let a = gather(g, emb, u.iter().map(|&(a, _, _)| a))?;
            let ya: Vec<usize> = u.iter().map(|&(a, _, _)| y[a]).collect();
            let n1: Vec<usize> = u.iter().map(|&(_, n, _)| n).collect();
            let n2: Vec<usize> = u.iter().map(|&(_, _, n)| n).collect();
            (losses::center_quadruplet(g, a, cv, &ya, &n1, &n2, hyper)?, u.len())
        }
    };
    Ok(Some(l))
}

/// Outcome of a full training run.
pub struct TrainedRun {
    pub record: RunRecord,
    pub model: Model,
    /// Model after the balanced-batch stage, with centers computed from it,
    /// for two-stage methods.
    pub stage1_checkpoint: Option<Checkpoint>,
    pub checkpoint: Checkpoint,
    /// `(stage, epoch, seconds)`, kept out of the record.
    pub epoch_seconds: Vec<(Stage, usize, f64)>,
}

impl TrainedRun {
    pub fn stage1_model(&self) -> Option<Model> {
        self.stage1_checkpoint.clone().map(Model::from_checkpoint)
    }
}

/// Train `config.method` on `data`.
pub fn train(config: &TrainConfig, data: &Dataset, hook: EpochHook<'_>) -> Result<TrainedRun> {
    config.validate()?;
    match config.method {
        Method::Baseline(kind) => run_baseline(config, data, kind, hook),
        _ => run_metric(config, data, hook),
    }
}

/// Two-stage training and its single-stage ablations.
pub fn run_pcct(config: &TrainConfig, data: &Dataset, hook: EpochHook<'_>) -> Result<TrainedRun> {
    match config.method {
        Method::Pcct | Method::EfficientPcct | Method::OnlyFirstStage | Method::OnlySecondStage => {
            train(config, data, hook)
        }
        other => Err(Error::contract(format!("{other} is not a two-stage triplet method"))),
    }
}

/// Pairwise and quadruplet losses, original or with a centered second stage.
pub fn run_extension(config: &TrainConfig, data: &Dataset, hook: EpochHook<'_>) -> Result<TrainedRun> {
    match config.method {
        Method::Pairwise | Method::CenterPairwise | Method::Quadruplet | Method::CenterQuadruplet => {
            train(config, data, hook)
        }
        other => Err(Error::contract(format!("{other} is not a loss-family extension"))),
    }
}

fn base_record(config: &TrainConfig, data: &Dataset, initial: &Mlp) -> RunRecord {
    RunRecord {
        method: config.method,
        seed: config.seed,
        config_fingerprint: fingerprint::hex(config.fingerprint()),
        train_samples: data.len(),
        initial_params: hex_params(initial),
        stage1_final_params: None,
        stage2_initial_params: None,
        final_params: String::new(),
        stage2_converged_at: None,
        early_stopped: Vec::new(),
        epochs: Vec::new(),
        center_refreshes: Vec::new(),
        compactness: Vec::new(),
        metrics: None,
    }
}

fn train_compactness(model: &Model, data: &Dataset, at: &str) -> Result<CompactnessRecord> {
    let emb = model.embed(data.features())?;
    let centers = model
        .centers
        .as_ref()
        .ok_or_else(|| Error::contract("compactness needs centers"))?;
    Ok(CompactnessRecord::new(
        at,
        compactness(&emb, data.labels(), centers, model.p_norm)?,
    ))
}

fn run_metric(config: &TrainConfig, data: &Dataset, hook: EpochHook<'_>) -> Result<TrainedRun> {
    data.index().require_nonempty_classes()?;
    let fp = config.fingerprint();
    let p_norm = config.hyper.p_norm;
    let mut extractor = initial_extractor(config, data.dim())?;
    let mut record = base_record(config, data, &extractor);
    let mut seconds = Vec::new();
    let mut epochs_run = 0u64;
    let mut stage1_checkpoint = None;

    if let Some(kind) = config.method.stage1_loss() {
        let s1 = run_stage1(config, data, extractor, kind, config.stage1_epochs(), &mut *hook)?;
        epochs_run += s1.epochs.len() as u64;
        seconds.extend(s1.epoch_seconds.iter().enumerate().map(|(e, &s)| (Stage::Stage1, e, s)));
        if let Some(e) = s1.early_stopped {
            record.early_stopped.push((Stage::Stage1, e));
        }
        record.epochs.extend(s1.epochs);
        record.stage1_final_params = Some(hex_params(&s1.extractor));
        extractor = s1.extractor;
        if config.method.stage2_loss().is_some() {
            let centers = compute_centers(&extractor, data.features(), data.index(), None)?;
            let m = Model {
                extractor: extractor.clone(),
                head: None,
                centers: Some(centers),
                p_norm,
            };
            record.compactness.push(train_compactness(&m, data, "after-stage1")?);
            stage1_checkpoint = Some(m.to_checkpoint(epochs_run, fp));
        }
    }

    let centers = if let Some(kind) = config.method.stage2_loss() {
        record.stage2_initial_params = Some(hex_params(&extractor));
        let s2 = run_stage2(config, data, extractor, kind, config.stage2_epochs(), &mut *hook)?;
        epochs_run += s2.epochs.len() as u64;
        seconds.extend(s2.epoch_seconds.iter().enumerate().map(|(e, &s)| (Stage::Stage2, e, s)));
        if let Some(e) = s2.early_stopped {
            record.early_stopped.push((Stage::Stage2, e));
        }
        record.stage2_converged_at = s2.converged_at;
        record.epochs.extend(s2.epochs);
        record.center_refreshes = s2.refreshes;
        extractor = s2.extractor;
        s2.centers
    } else {
        compute_centers(&extractor, data.features(), data.index(), None)?
    };

    let model = Model {
        extractor,
        head: None,
        centers: Some(centers),
        p_norm,
    };
    record.final_params = hex_params(&model.extractor);
    record.compactness.push(train_compactness(&model, data, "final")?);
    Ok(TrainedRun {
        checkpoint: model.to_checkpoint(epochs_run, fp),
        record,
        model,
        stage1_checkpoint,
        epoch_seconds: seconds,
    })
}

/// Single-stage classifier training with a linear head and argmax prediction.
pub fn run_baseline(
    config: &TrainConfig,
    data: &Dataset,
    kind: BaselineKind,
    hook: EpochHook<'_>,
) -> Result<TrainedRun> {
    require_classes(data, 2, "a baseline")?;
    let c = &config.baseline;
    let index = data.index();
    let fp = config.fingerprint();
    let mut extractor = initial_extractor(config, data.dim())?;
    let mut head = linear_head(config, data.num_classes())?;
    let mut record = base_record(config, data, &extractor);
    let weights = match kind {
        BaselineKind::Wce | BaselineKind::Wfce => Some(losses::inverse_frequency_weights(&index.class_sizes())?),
        BaselineKind::Bce | BaselineKind::Oce => None,
    };
    let gamma = if kind == BaselineKind::Wfce { c.focal_gamma } else { 0.0 };
    let mut adam = {
        let mut ps = extractor.params();
        ps.extend(head.params());
        AdamState::new(config.optimizer, &ps)?
    };
    let mut rng = rng_for(config.seed, Stream::Baseline);
    let mut plateau = Plateau::new(config);
    let mut seconds = Vec::new();
    let all: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..c.epochs {
        let started = Instant::now();
        let params_at_start = hex_params(&extractor);
        let stream = match kind {
            BaselineKind::Oce => oversample_indices(index, &mut rng),
            _ => all.clone(),
        };
        let mut stats = EpochStats::new();
        for plan in flat_batches(index, &stream, c.batch_size, &mut rng)? {
            let mut g = Graph::new();
            let x = g.constant(data.gather(&plan.indices));
            let (emb, bound) = extractor.forward(&mut g, x)?;
            let hb = head.bind(&mut g);
            let logits = head.apply(&mut g, &hb, emb)?;
            let per_row = losses::focal(&mut g, logits, &plan.labels, gamma, weights.as_deref())?;
            let loss = losses::batch_mean(&mut g, per_row)?;
            let value = g.value(loss).item()?;
            check_finite("baseline", epoch, value)?;
            let grads = g.backward(loss)?;
            extractor.zero_grad();
            head.zero_grad();
            extractor.accumulate_grads(&bound, &grads)?;
            head.accumulate_grads(&hb, &grads)?;
            let mut params = extractor.params_mut();
            params.extend(head.params_mut());
            adam.step(&mut params)?;
            stats.loss_sum += value;
            stats.steps += 1;
            stats.units += plan.len();
        }
        let rec = EpochRecord {
            stage: Stage::Baseline,
            epoch,
            mean_loss: stats.mean(),
            units: stats.units,
            steps: stats.steps,
            skipped_anchors: 0,
            params_at_start,
        };
        let elapsed = started.elapsed();
        hook(&rec, elapsed);
        seconds.push((Stage::Baseline, epoch, elapsed.as_secs_f64()));
        let stop = plateau.update(rec.mean_loss);
        record.epochs.push(rec);
        if stop {
            record.early_stopped.push((Stage::Baseline, epoch));
            break;
        }
    }
    extractor.zero_grad();
    head.zero_grad();
    let epochs_run = record.epochs.len() as u64;
    let diag = Model {
        extractor: extractor.clone(),
        head: None,
        centers: Some(compute_centers(&extractor, data.features(), index, None)?),
        p_norm: config.hyper.p_norm,
    };
    record.compactness.push(train_compactness(&diag, data, "final")?);
    let model = Model {
        extractor,
        head: Some(head),
        centers: None,
        p_norm: config.hyper.p_norm,
    };
    record.final_params = hex_params(&model.extractor);
    Ok(TrainedRun {
        checkpoint: model.to_checkpoint(epochs_run, fp),
        record,
        model,
        stage1_checkpoint: None,
        epoch_seconds: seconds,
    })
}
