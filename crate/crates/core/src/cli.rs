//! `pcct` command line: `gen-data`, `train`, `eval`, `sweep`, `crossval`.
//!
//! Every command writes its effective configuration next to its outputs.
//! Wall-clock times only ever go to `epochs.log` and standard output, so
//! all other artifacts are byte-identical across reruns.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::data::{self, Dataset, GaussianShorthand, SyntheticSpec};
use crate::diffcore::Checkpoint;
use crate::experiment::{self, SweepAxis};
use crate::trainer::{self, EpochRecord, Method, Model, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "pcct", version, about = "Two-stage class-center triplet training for imbalanced data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (or file, for gen-data).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Upper bound on concurrently trained folds.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset as CSV plus a `.spec.toml` sidecar.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Named preset; `--config` may instead hold a spec file.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Train one model on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Held-out CSV for the final metrics; defaults to the training data.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        small_threshold: Option<usize>,
    },
    /// Cross-validated runs over one hyperparameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// `margin` or `dimension`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        method: Option<String>,
    },
    /// Stratified k-fold cross-validation.
    Crossval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        method: Option<String>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, preset } => gen_data(&common, preset.as_deref()),
        Command::Train {
            common,
            data,
            test,
            method,
        } => train(&common, data.as_deref(), test.as_deref(), method.as_deref()),
        Command::Eval {
            common,
            checkpoint,
            data,
            small_threshold,
        } => eval(&common, &checkpoint, data.as_deref(), small_threshold),
        Command::Sweep {
            common,
            data,
            axis,
            values,
            method,
        } => sweep(&common, data.as_deref(), &axis, &values, method.as_deref()),
        Command::Crossval {
            common,
            data,
            folds,
            method,
        } => crossval(&common, data.as_deref(), folds, method.as_deref()),
    }
}

fn out_dir(common: &Common, config: &TrainConfig) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .context("no output directory: pass --out or set output_dir")?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_config(common: &Common, method: Option<&str>) -> Result<TrainConfig> {
    let mut config = match &common.config {
        Some(p) => TrainConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(m) = method {
        config.method = m.parse::<Method>()?;
    }
    config.validate()?;
    Ok(config)
}

fn load_data(path: Option<&Path>, config: &TrainConfig) -> Result<Dataset> {
    if let Some(p) = path {
        return data::load_csv(p).with_context(|| format!("loading {}", p.display()));
    }
    if let Some(p) = &config.data.path {
        return data::load_csv(p).with_context(|| format!("loading {p}"));
    }
    if let Some(preset) = &config.data.preset {
        let spec = SyntheticSpec::preset(preset, config.data.seed)?;
        return Ok(data::gen_gaussian_imbalanced(&spec)?);
    }
    bail!("no dataset: pass --data or set data.path / data.preset in the config")
}

fn write(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn gen_data(common: &Common, preset: Option<&str>) -> Result<()> {
    let spec = match (preset, &common.config) {
        (Some(name), None) => SyntheticSpec::preset(name, common.seed.unwrap_or(0))?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut spec = match toml::from_str::<SyntheticSpec>(&text) {
                Ok(s) => s,
                Err(_) => toml::from_str::<GaussianShorthand>(&text)
                    .with_context(|| format!("parsing spec {}", path.display()))?
                    .resolve()?,
            };
            if let Some(seed) = common.seed {
                spec.seed = seed;
            }
            spec.validate()?;
            spec
        }
        _ => bail!("gen-data needs exactly one of --preset or --config"),
    };
    let out = common.out.clone().context("gen-data needs --out <file.csv>")?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let ds = data::write_synthetic(&spec, &out)?;
    println!(
        "wrote {} samples, {} classes, sizes {:?} to {}",
        ds.len(),
        ds.num_classes(),
        ds.index().class_sizes(),
        out.display()
    );
    Ok(())
}

/// Prints each epoch and appends it to `epochs.log`.
struct EpochLog {
    file: fs::File,
}

impl EpochLog {
    fn create(dir: &Path) -> Result<Self> {
        Ok(Self {
            file: fs::File::create(dir.join("epochs.log"))?,
        })
    }

    fn line(&mut self, r: &EpochRecord, wall: Duration) {
        let text = format!(
            "{} epoch {:>4} loss {:.6} units {} wall {:.3}s",
            r.stage.name(),
            r.epoch,
            r.mean_loss,
            r.units,
            wall.as_secs_f64()
        );
        println!("{text}");
        let _ = writeln!(self.file, "{text}");
    }
}

fn train(common: &Common, data_path: Option<&Path>, test_path: Option<&Path>, method: Option<&str>) -> Result<()> {
    let config = load_config(common, method)?;
    let dir = out_dir(common, &config)?;
    let ds = load_data(data_path, &config)?;
    write(dir.join("config.toml"), config.to_toml())?;
    let mut log = EpochLog::create(&dir)?;
    let run = trainer::train(&config, &ds, &mut |r, w| log.line(r, w))?;
    let (test, size_index) = match test_path {
        Some(p) => {
            let t = data::load_csv(p).with_context(|| format!("loading {}", p.display()))?;
            (t, ds.index().clone())
        }
        None => (ds.clone(), ds.index().clone()),
    };
    let report = trainer::evaluate(&run.model, &test, &size_index, config.eval.small_class_threshold)?;
    if let Some(ck) = &run.stage1_checkpoint {
        ck.save(dir.join("stage1.ckpt"))?;
    }
    run.checkpoint.save(dir.join("final.ckpt"))?;
    let mut record = run.record;
    record.metrics = Some(report.clone());
    write(dir.join("run.toml"), record.to_text())?;
    write(dir.join("metrics.toml"), report.to_text())?;
    write(dir.join("metrics.csv"), report.to_csv())?;
    println!("MF1 {:.2}  MCP {:.2}  MCR {:.2}", report.mf1(), report.full.macro_scores.mcp, report.full.macro_scores.mcr);
    Ok(())
}

fn eval(common: &Common, checkpoint: &Path, data_path: Option<&Path>, small_threshold: Option<usize>) -> Result<()> {
    let config = load_config(common, None)?;
    let dir = out_dir(common, &config)?;
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let model = Model::from_checkpoint(ck);
    let ds = load_data(data_path, &config)?;
    let threshold = small_threshold.unwrap_or(config.eval.small_class_threshold);
    let report = trainer::evaluate(&model, &ds, ds.index(), threshold)?;
    write(dir.join("metrics.toml"), report.to_text())?;
    write(dir.join("metrics.csv"), report.to_csv())?;
    println!("MF1 {:.2}  MCP {:.2}  MCR {:.2}", report.mf1(), report.full.macro_scores.mcp, report.full.macro_scores.mcr);
    Ok(())
}

fn sweep(common: &Common, data_path: Option<&Path>, axis: &str, values: &[f64], method: Option<&str>) -> Result<()> {
    let axis: SweepAxis = axis.parse()?;
    let config = load_config(common, method)?;
    let dir = out_dir(common, &config)?;
    let ds = load_data(data_path, &config)?;
    write(dir.join("config.toml"), config.to_toml())?;
    let rows = experiment::sweep(axis, values, &config, &ds, common.jobs)?;
    write(dir.join("sweep.csv"), experiment::sweep_csv(axis, &rows))?;
    for r in &rows {
        println!("{} = {}: MF1 {:.2} ({:.2})", axis.name(), r.value, r.mf1, r.mf1_std);
    }
    Ok(())
}

fn crossval(common: &Common, data_path: Option<&Path>, folds: Option<usize>, method: Option<&str>) -> Result<()> {
    let mut config = load_config(common, method)?;
    if let Some(k) = folds {
        config.eval.folds = k;
        config.validate()?;
    }
    let dir = out_dir(common, &config)?;
    let ds = load_data(data_path, &config)?;
    write(dir.join("config.toml"), config.to_toml())?;
    let outcome = experiment::crossval(&config, &ds, common.jobs)?;
    write(dir.join("crossval.toml"), outcome.report.to_text())?;
    write(dir.join("crossval.csv"), outcome.report.to_csv())?;
    let fold_dir = dir.join("folds");
    fs::create_dir_all(&fold_dir)?;
    for f in &outcome.folds {
        write(fold_dir.join(format!("fold{}.run.toml", f.fold)), f.record.to_text())?;
    }
    let st = &outcome.report.stats;
    println!(
        "MF1 {:.2} ({:.2})  MCP {:.2} ({:.2})  MCR {:.2} ({:.2})",
        st.mean.mf1, st.std.mf1, st.mean.mcp, st.std.mcp, st.mean.mcr, st.std.mcr
    );
    if let Some(s) = &outcome.report.small_stats {
        println!("small-class MF1 {:.2} ({:.2})", s.mean.mf1, s.std.mf1);
    }
    Ok(())
}
