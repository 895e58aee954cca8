//! C interface to `pcct`.
//!
//! Every function returns a [`PcctStatus`]; outputs go through pointer
//! arguments. On failure, [`pcct_last_error`] describes the most recent
//! error on the calling thread. Handles are opaque and must be released
//! with their `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use pcct::data::{self, Dataset, SyntheticSpec};
use pcct::diffcore::{Checkpoint, Tensor};
use pcct::losses::{unit, LossHyper};
use pcct::trainer::{self, Method, Model, TrainConfig};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PcctStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Contract = 5,
    Dimension = 6,
    Training = 7,
    Panic = 8,
}

/// A labelled feature matrix.
pub struct PcctDataset(Dataset);

/// A training configuration.
pub struct PcctConfig(TrainConfig);

/// A trained extractor with its centers or head.
pub struct PcctModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(PcctStatus, String);

impl From<pcct::Error> for Failure {
    fn from(e: pcct::Error) -> Self {
        let status = match &e {
            pcct::Error::Dimension(_) => PcctStatus::Dimension,
            pcct::Error::Contract(_) | pcct::Error::Kink(_) => PcctStatus::Contract,
            pcct::Error::Divergence { .. } => PcctStatus::Training,
            pcct::Error::Parse { .. } | pcct::Error::Format(_) => PcctStatus::Parse,
            pcct::Error::Io(_) => PcctStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(PcctStatus::InvalidArgument, msg.into())
}

fn null(name: &str) -> Failure {
    Failure(PcctStatus::NullPointer, format!("{name} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PcctStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PcctStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PcctStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn matrix_arg(p: *const f64, rows: usize, cols: usize) -> Result<Tensor, Failure> {
    let len = rows.checked_mul(cols).ok_or_else(|| invalid("rows * cols overflows"))?;
    let data = slice_arg(p, len, "features")?.to_vec();
    Ok(Tensor::new(vec![rows, cols], data)?)
}

fn boxed<T>(out: &mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null if none failed.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pcct_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn pcct_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ------------------------------------------------------------------ datasets

/// Generate a named synthetic preset (`skin7-like`, `separable-3`, ...).
///
/// # Safety
/// `preset` must be a nul-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcct_dataset_generate(
    preset: *const c_char,
    seed: u64,
    out: *mut *mut PcctDataset,
) -> PcctStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let spec = SyntheticSpec::preset(str_arg(preset, "preset")?, seed)?;
        boxed(out, PcctDataset(data::gen_gaussian_imbalanced(&spec)?));
        Ok(())
    })
}

/// Load a CSV whose first column is `label`.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcct_dataset_load_csv(path: *const c_char, out: *mut *mut PcctDataset) -> PcctStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ds = data::load_csv(PathBuf::from(str_arg(path, "path")?))?;
        boxed(out, PcctDataset(ds));
        Ok(())
    })
}

/// Build a dataset from a row-major `n x dim` matrix and `n` labels.
/// `num_classes` of 0 means one more than the largest label.
///
/// # Safety
/// `features` must point to `n * dim` doubles and `labels` to `n` values.
#[no_mangle]
pub unsafe extern "C" fn pcct_dataset_from_arrays(
    features: *const f64,
    labels: *const usize,
    n: usize,
    dim: usize,
    num_classes: usize,
    out: *mut *mut PcctDataset,
) -> PcctStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let x = matrix_arg(features, n, dim)?;
        let y = slice_arg(labels, n, "labels")?;
        let k = (num_classes > 0).then_some(num_classes);
        boxed(out, PcctDataset(Dataset::new(x, y, k)?));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn pcct_dataset_free(ds: *mut PcctDataset) {
    free(ds);
}

/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcct_dataset_len(ds: *const PcctDataset, out: *mut usize) -> PcctStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(ds, "dataset")?.0.len();
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcct_dataset_dim(ds: *const PcctDataset, out: *mut usize) -> PcctStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(ds, "dataset")?.0.dim();
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcct_dataset_num_classes(ds: *const PcctDataset, out: *mut usize) -> PcctStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(ds, "dataset")?.0.num_classes();
        Ok(())
    })
}

// ------------------------------------------------------------------- configs

/// Default configuration (method `pcct`).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcct_config_default(out: *mut *mut PcctConfig) -> PcctStatus {
    guard(|| {
        boxed(out_arg(out, "out")?, PcctConfig(TrainConfig::default()));
        Ok(())
    })
}

/// Parse a TOML configuration; unknown keys are rejected.
///
/// # Safety
/// `toml` must be a nul-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcct_config_from_toml(toml: *const c_char, out: *mut *mut PcctConfig) -> PcctStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let c = TrainConfig::from_toml(str_arg(toml, "toml")?)?;
        boxed(out, PcctConfig(c));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle and `name` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pcct_config_set_method(cfg: *mut PcctConfig, name: *const c_char) -> PcctStatus {
    guard(|| {
        let cfg = out_arg(cfg, "config")?;
        cfg.0.method = str_arg(name, "name")?.parse::<Method>()?;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pcct_config_set_seed(cfg: *mut PcctConfig, seed: u64) -> PcctStatus {
    guard(|| {
        out_arg(cfg, "config")?.0.seed = seed;
        Ok(())
    })
}

/// Epochs of stage 1, stage 2 and the baselines' single stage.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pcct_config_set_epochs(
    cfg: *mut PcctConfig,
    stage1: usize,
    stage2: usize,
    baseline: usize,
) -> PcctStatus {
    guard(|| {
        let c = &mut out_arg(cfg, "config")?.0;
        c.stage1.epochs = stage1;
        c.stage2.epochs = stage2;
        c.baseline.epochs = baseline;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn pcct_config_free(cfg: *mut PcctConfig) {
    free(cfg);
}

// -------------------------------------------------------------------- models

/// Train the configured method on `ds`.
///
/// # Safety
/// `cfg` and `ds` must be live handles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcct_train(
    cfg: *const PcctConfig,
    ds: *const PcctDataset,
    out: *mut *mut PcctModel,
) -> PcctStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg = &ref_arg(cfg, "config")?.0;
        let ds = &ref_arg(ds, "dataset")?.0;
        let run = trainer::train(cfg, ds, &mut |_, _| {})?;
        boxed(out, PcctModel(run.model));
        Ok(())
    })
}

/// # Safety
/// `path` must be a nul-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcct_model_load(path: *const c_char, out: *mut *mut PcctModel) -> PcctStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ck = Checkpoint::load(PathBuf::from(str_arg(path, "path")?))?;
        boxed(out, PcctModel(Model::from_checkpoint(ck)));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pcct_model_save(model: *const PcctModel, path: *const c_char) -> PcctStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.0;
        m.to_checkpoint(0, 0).save(PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcct_model_embedding_dim(model: *const PcctModel, out: *mut usize) -> PcctStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(model, "model")?.0.extractor.output_dim();
        Ok(())
    })
}

/// Embed `n` rows of `dim` features into `out`, which must hold
/// `n * pcct_model_embedding_dim` doubles.
///
/// # Safety
/// Pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn pcct_model_embed(
    model: *const PcctModel,
    features: *const f64,
    n: usize,
    dim: usize,
    out: *mut f64,
    out_len: usize,
) -> PcctStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.0;
        let emb = m.embed(&matrix_arg(features, n, dim)?)?;
        if out_len < emb.len() {
            return Err(invalid(format!("output holds {out_len} values, need {}", emb.len())));
        }
        if emb.is_empty() {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, emb.len()).copy_from_slice(emb.data());
        Ok(())
    })
}

/// Predicted class of each of `n` rows, written to `out_labels[0..n]`.
///
/// # Safety
/// Pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn pcct_model_predict(
    model: *const PcctModel,
    features: *const f64,
    n: usize,
    dim: usize,
    out_labels: *mut usize,
) -> PcctStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.0;
        let predicted = m.predict(&matrix_arg(features, n, dim)?)?;
        if n == 0 {
            return Ok(());
        }
        if out_labels.is_null() {
            return Err(null("out_labels"));
        }
        std::slice::from_raw_parts_mut(out_labels, n).copy_from_slice(&predicted);
        Ok(())
    })
}

/// Macro F1 (percent) of `model` on `ds`.
///
/// # Safety
/// `model` and `ds` must be live handles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcct_model_evaluate(
    model: *const PcctModel,
    ds: *const PcctDataset,
    out_mf1: *mut f64,
) -> PcctStatus {
    guard(|| {
        let out = out_arg(out_mf1, "out_mf1")?;
        let m = &ref_arg(model, "model")?.0;
        let ds = &ref_arg(ds, "dataset")?.0;
        let threshold = pcct::eval::SMALL_CLASS_THRESHOLD;
        *out = trainer::evaluate(m, ds, ds.index(), threshold)?.mf1();
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn pcct_model_free(model: *mut PcctModel) {
    free(model);
}

// -------------------------------------------------------------------- losses

fn hyper(alpha: f64, p_norm: u32) -> Result<LossHyper, Failure> {
    let h = LossHyper {
        alpha,
        p_norm,
        ..LossHyper::default()
    };
    h.validate()?;
    Ok(h)
}

/// `[d(a,p) + alpha - d(a,n)]_+` for three vectors of length `dim`.
///
/// # Safety
/// Vector pointers must hold `dim` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pcct_triplet_loss(
    anchor: *const f64,
    positive: *const f64,
    negative: *const f64,
    dim: usize,
    alpha: f64,
    p_norm: u32,
    out: *mut f64,
) -> PcctStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let (a, p, n) = (
            slice_arg(anchor, dim, "anchor")?,
            slice_arg(positive, dim, "positive")?,
            slice_arg(negative, dim, "negative")?,
        );
        *out = unit::triplet(a, p, n, &hyper(alpha, p_norm)?)?;
        Ok(())
    })
}

/// `[d(a, c_anchor) + alpha - d(a, c_negative)]_+`; the classes must differ.
///
/// # Safety
/// Vector pointers must hold `dim` doubles; `out` must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn pcct_center_triplet_loss(
    anchor: *const f64,
    anchor_center: *const f64,
    negative_center: *const f64,
    dim: usize,
    anchor_class: usize,
    negative_class: usize,
    alpha: f64,
    p_norm: u32,
    out: *mut f64,
) -> PcctStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let (a, ca, cn) = (
            slice_arg(anchor, dim, "anchor")?,
            slice_arg(anchor_center, dim, "anchor_center")?,
            slice_arg(negative_center, dim, "negative_center")?,
        );
        *out = unit::center_triplet(a, ca, cn, (anchor_class, negative_class), &hyper(alpha, p_norm)?)?;
        Ok(())
    })
}
