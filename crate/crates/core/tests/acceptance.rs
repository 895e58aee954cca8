//! Acceptance criteria, one `[PASS]` / `[FAIL]` line each.
//!
//! A plain binary (`harness = false`) so the lines show up in ordinary
//! `cargo test` output. Criteria run one after another, which keeps wall
//! times free of competing work. Criteria with exact oracles fail the
//! target. The relational benchmark criteria (5 to 9) print their verdict
//! and measurements and fail the target only if a run errors; their
//! outcomes are tracked in `docs/benchmark.md`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pcct::centers::{CenterMode, CenterTable};
use pcct::data::{self, Dataset, SyntheticSpec};
use pcct::diffcore::{finite_diff_check, Graph, Tensor, Var};
use pcct::eval::{macro_metrics, wilcoxon_signed_rank, ConfusionMatrix, Wilcoxon};
use pcct::experiment::{crossval, sweep, CrossValOutcome, FoldRun, SweepAxis};
use pcct::losses::{self, unit, LossHyper, PairLabel};
use pcct::sampling::{build_balanced_batch, form_center_triplets, BatchLayout, BatchPlan, DatasetIndex};
use pcct::trainer::{BaselineKind, Method, Stage, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_POINTS: usize = 100;
const GRAD_DIM: usize = 8;
const GRAD_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-6;
const GRAD_BUDGET: Duration = Duration::from_secs(10);
const LOSS_TOL: f64 = 1e-9;
const BALANCE_BATCHES: usize = 1000;
const GEOMETRIES: usize = 1000;
const COMPACTNESS_DROP: f64 = 0.10;
const TWO_STAGE_BUDGET: Duration = Duration::from_secs(5 * 60);
const TAIL_REPEATS: u64 = 2;
const TAIL_LEVEL: f64 = 0.05;
const TAIL_BUDGET: Duration = Duration::from_secs(15 * 60);
const EFFICIENT_MF1_GAP: f64 = 3.0;
const MARGIN_SPREAD: f64 = 5.0;
const METRICS_ORACLE_TOL: f64 = 0.01;
const ENUMERATION_MAX_N: usize = 12;

fn report(id: u32, name: &str, pass: bool, detail: String) -> bool {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {id:>2} {name}: {detail}");
    pass
}

fn benchmark_data() -> Dataset {
    let c = TrainConfig::benchmark();
    let spec = SyntheticSpec::preset(c.data.preset.as_deref().unwrap(), c.data.seed).unwrap();
    data::gen_gaussian_imbalanced(&spec).unwrap()
}

fn benchmark(method: Method) -> TrainConfig {
    let mut c = TrainConfig::benchmark();
    c.method = method;
    c
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fold_mean(o: &CrossValOutcome, f: impl Fn(&FoldRun) -> f64) -> f64 {
    mean(&o.folds.iter().map(f).collect::<Vec<_>>())
}

fn train_ratio(f: &FoldRun, at: &str) -> f64 {
    f.record.compactness_at(at).expect("compactness recorded").ratio
}

fn test_ratio(f: &FoldRun, at: &str) -> f64 {
    f.test_compactness.iter().find(|c| c.at == at).expect("test compactness").ratio
}

// ---------------------------------------------------------------- 1

type LossFn = Box<dyn Fn(&mut Graph, Var) -> pcct::Result<Var>>;

/// The point packs every argument of one unit: rows of `GRAD_DIM` values.
fn row_of(g: &mut Graph, x: Var, i: usize) -> pcct::Result<Var> {
    let v = g.gather(x, &[i])?;
    Ok(v)
}

fn as_rows(g: &mut Graph, x: Var, rows: usize) -> pcct::Result<Var> {
    g.reshape(x, vec![rows, GRAD_DIM])
}

fn gradient_cases() -> Vec<(&'static str, usize, LossFn)> {
    let h = LossHyper::default();
    let weights = losses::inverse_frequency_weights(&[40, 10, 5, 3, 2, 2, 1, 1]).unwrap();
    vec![
        (
            "triplet",
            3,
            Box::new(move |g, x| {
                let m = as_rows(g, x, 3)?;
                let (a, p, n) = (row_of(g, m, 0)?, row_of(g, m, 1)?, row_of(g, m, 2)?);
                let l = losses::triplet(g, a, p, n, &h)?;
                g.mean(l)
            }),
        ),
        (
            "center triplet",
            4,
            Box::new(move |g, x| {
                let m = as_rows(g, x, 4)?;
                let a = row_of(g, m, 0)?;
                let c = g.gather(m, &[1, 2, 3])?;
                let l = losses::center_triplet(g, a, c, &[0], &[2], &h)?;
                g.mean(l)
            }),
        ),
        (
            "pairwise (same)",
            2,
            Box::new(move |g, x| {
                let m = as_rows(g, x, 2)?;
                let (a, b) = (row_of(g, m, 0)?, row_of(g, m, 1)?);
                let l = losses::pairwise(g, a, b, &[true], &h)?;
                g.mean(l)
            }),
        ),
        (
            "pairwise (different)",
            2,
            Box::new(move |g, x| {
                let m = as_rows(g, x, 2)?;
                let (a, b) = (row_of(g, m, 0)?, row_of(g, m, 1)?);
                let l = losses::pairwise(g, a, b, &[false], &LossHyper { alpha: 4.0, ..h })?;
                g.mean(l)
            }),
        ),
        (
            "quadruplet",
            4,
            Box::new(move |g, x| {
                let m = as_rows(g, x, 4)?;
                let (a, p) = (row_of(g, m, 0)?, row_of(g, m, 1)?);
                let (n1, n2) = (row_of(g, m, 2)?, row_of(g, m, 3)?);
                let l = losses::quadruplet(g, a, p, n1, n2, &h)?;
                g.mean(l)
            }),
        ),
        (
            "center pairwise",
            4,
            Box::new(move |g, x| {
                let m = as_rows(g, x, 4)?;
                let a = g.gather(m, &[0, 0, 0])?;
                let c = g.gather(m, &[1, 2, 3])?;
                let wide = LossHyper { alpha: 4.0, ..h };
                let l = losses::center_pairwise(g, a, c, &[0, 0, 0], &[0, 1, 2], &wide)?;
                g.mean(l)
            }),
        ),
        (
            "center quadruplet",
            4,
            Box::new(move |g, x| {
                let m = as_rows(g, x, 4)?;
                let a = row_of(g, m, 0)?;
                let c = g.gather(m, &[1, 2, 3])?;
                let l = losses::center_quadruplet(g, a, c, &[0], &[1], &[2], &h)?;
                g.mean(l)
            }),
        ),
        (
            "cross-entropy",
            1,
            Box::new(|g, x| {
                let z = as_rows(g, x, 1)?;
                let l = losses::cross_entropy(g, z, &[3], None)?;
                g.mean(l)
            }),
        ),
        (
            "weighted cross-entropy",
            1,
            Box::new(move |g, x| {
                let z = as_rows(g, x, 1)?;
                let l = losses::cross_entropy(g, z, &[5], Some(&weights))?;
                g.mean(l)
            }),
        ),
        (
            "focal",
            1,
            Box::new(|g, x| {
                let z = as_rows(g, x, 1)?;
                let l = losses::focal(g, z, &[1], 2.0, None)?;
                g.mean(l)
            }),
        ),
    ]
}

fn c01_gradient_oracle() -> bool {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: Vec<(&str, f64, usize)> = Vec::new();
    let mut all_ok = true;
    for (name, rows, f) in gradient_cases() {
        let mut max_err: f64 = 0.0;
        let mut checked = 0;
        let mut attempts = 0;
        while checked < GRAD_POINTS && attempts < 50 * GRAD_POINTS {
            attempts += 1;
            let point: Vec<f64> = (0..rows * GRAD_DIM).map(|_| rng.gen_range(-2.0..2.0)).collect();
            match finite_diff_check(&f, &point, GRAD_STEP) {
                Ok(c) => {
                    max_err = max_err.max(c.max_rel_error);
                    checked += 1;
                }
                Err(pcct::Error::Kink(_)) => continue,
                Err(e) => panic!("{name}: {e}"),
            }
        }
        all_ok &= checked == GRAD_POINTS && max_err < GRAD_TOL;
        worst.push((name, max_err, checked));
    }
    let elapsed = started.elapsed();
    let pass = all_ok && elapsed < GRAD_BUDGET;
    let detail = worst
        .iter()
        .map(|(n, e, c)| format!("{n} {e:.1e} ({c} pts)"))
        .collect::<Vec<_>>()
        .join(", ");
    report(
        1,
        "gradient oracle",
        pass,
        format!("max rel err < {GRAD_TOL:e} in {:.2}s: {detail}", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 2

fn c02_loss_unit_values() -> bool {
    let h = LossHyper::default();
    let same = PairLabel { same_class: true };
    let diff = PairLabel { same_class: false };
    let ln2 = std::f64::consts::LN_2;
    let mut cases: Vec<(&str, f64, f64)> = vec![
        ("triplet satisfied", unit::triplet(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], &h).unwrap(), 0.0),
        ("triplet coincident", unit::triplet(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0], &h).unwrap(), 0.5),
        ("triplet 1+0.5-1", unit::triplet(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &h).unwrap(), 0.5),
        (
            "center triplet at center",
            unit::center_triplet(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], (0, 1), &h).unwrap(),
            0.0,
        ),
        (
            "center triplet singleton",
            unit::center_triplet(&[0.3, 0.4], &[0.3, 0.4], &[0.3, 0.4], (0, 1), &h).unwrap(),
            0.5,
        ),
        (
            "center triplet 2+0.5-1",
            unit::center_triplet(&[0.0, 0.0], &[2.0, 0.0], &[0.0, 1.0], (0, 1), &h).unwrap(),
            1.5,
        ),
        ("pairwise same coincident", unit::pairwise(&[1.0, 1.0], &[1.0, 1.0], same, &h).unwrap(), 0.0),
        ("pairwise different far", unit::pairwise(&[0.0, 0.0], &[0.5, 0.0], diff, &h).unwrap(), 0.0),
        ("pairwise different 0.2", unit::pairwise(&[0.0, 0.0], &[0.2, 0.0], diff, &h).unwrap(), 0.3),
        (
            "quadruplet coincident",
            unit::quadruplet(&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0], &h).unwrap(),
            0.75,
        ),
        (
            "quadruplet inactive",
            unit::quadruplet(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0], &h).unwrap(),
            0.0,
        ),
        (
            "quadruplet 0.5+0",
            unit::quadruplet(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0], &h).unwrap(),
            0.5,
        ),
        ("center pairwise at center", unit::center_pairwise(&[2.0, 1.0], &[2.0, 1.0], same, &h).unwrap(), 0.0),
        ("center pairwise at margin", unit::center_pairwise(&[0.0, 0.0], &[0.0, 0.5], diff, &h).unwrap(), 0.0),
        ("center pairwise 0.1", unit::center_pairwise(&[0.0, 0.0], &[0.1, 0.0], diff, &h).unwrap(), 0.4),
        (
            "center quadruplet inactive",
            unit::center_quadruplet(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], (0, 1, 2), &h).unwrap(),
            0.0,
        ),
        (
            "center quadruplet coincident",
            unit::center_quadruplet(&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], (0, 1, 2), &h).unwrap(),
            0.75,
        ),
        (
            // [1 + 0.5 - 1]_+ + [1 + 0.25 - sqrt(2)]_+
            "center quadruplet 2-D",
            unit::center_quadruplet(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], (0, 1, 2), &h).unwrap(),
            0.5,
        ),
        ("cross-entropy uniform", unit::cross_entropy(&[0.3, 0.3], 0, None).unwrap(), ln2),
        (
            "weighted cross-entropy",
            unit::cross_entropy(&[1.0, 0.0], 0, Some(&[2.0, 1.0])).unwrap(),
            2.0 * (1.0 + (-1.0f64).exp()).ln(),
        ),
        (
            "focal gamma 0",
            unit::focal(&[0.7, -0.2, 1.1], 2, 0.0, None).unwrap(),
            unit::cross_entropy(&[0.7, -0.2, 1.1], 2, None).unwrap(),
        ),
        ("focal p=0.5 gamma 2", unit::focal(&[0.0, 0.0], 1, 2.0, None).unwrap(), 0.25 * ln2),
        ("batch mean single", unit::batch_mean(&[1.25]).unwrap(), 1.25),
        ("batch mean pair", unit::batch_mean(&[0.0, 1.0]).unwrap(), 0.5),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let values: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..10.0)).collect();
    let mut kahan = (0.0f64, 0.0f64);
    for &v in &values {
        let y = v - kahan.1;
        let t = kahan.0 + y;
        kahan.1 = (t - kahan.0) - y;
        kahan.0 = t;
    }
    cases.push(("batch mean 100", unit::batch_mean(&values).unwrap(), kahan.0 / 100.0));
    let failures: Vec<String> = cases
        .iter()
        .filter(|(_, got, want)| (got - want).abs() > LOSS_TOL)
        .map(|(n, got, want)| format!("{n}: {got} != {want}"))
        .collect();
    let errors_ok = unit::center_triplet(&[0.0], &[0.0], &[1.0], (3, 3), &h).is_err()
        && unit::center_quadruplet(&[0.0], &[0.0], &[1.0], &[2.0], (0, 1, 1), &h).is_err()
        && unit::batch_mean(&[]).is_err();
    let pass = failures.is_empty() && errors_ok;
    report(
        2,
        "loss unit values",
        pass,
        format!(
            "{} examples within {LOSS_TOL:e}, contract errors {}{}",
            cases.len(),
            if errors_ok { "raised" } else { "MISSING" },
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

// ---------------------------------------------------------------- 3

fn c03_sampler_balance() -> bool {
    let sizes = data::geometric_sizes(580, 58.0, 6);
    let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(k, &n)| vec![k; n]).collect();
    let index = DatasetIndex::from_labels(&labels, None).unwrap();
    let m = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut unequal = 0;
    for _ in 0..BALANCE_BATCHES {
        let b = build_balanced_batch(&index, m, &mut rng).unwrap();
        let mut counts = vec![0usize; index.num_classes()];
        for &y in &b.labels {
            counts[y] += 1;
        }
        if counts.iter().any(|&c| c != m) {
            unequal += 1;
        }
    }
    let pass = unequal == 0;
    report(
        3,
        "sampler balance",
        pass,
        format!(
            "imbalance {:.0}:1, {unequal} of {BALANCE_BATCHES} batches with unequal anchor counts",
            index.imbalance_ratio()
        ),
    )
}

// ---------------------------------------------------------------- 4

fn c04_center_triplet_completeness() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    let mut total_units = 0;
    for _ in 0..GEOMETRIES {
        let k = rng.gen_range(2..=10);
        let d = rng.gen_range(1..=16);
        let n = rng.gen_range(1..=24);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let emb = Tensor::new(vec![n, d], (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let centers = Tensor::new(vec![k, d], (0..k * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let table = CenterTable::from_matrix(centers, CenterMode::Computed, None).unwrap();
        let hyper = LossHyper {
            alpha: rng.gen_range(0.0..1.0),
            ..LossHyper::default()
        };
        let plan = BatchPlan {
            indices: (0..n).collect(),
            labels: labels.clone(),
            layout: BatchLayout::Flat { batch_size: n },
        };
        let formed = form_center_triplets(&plan, &emb, &table, &hyper).unwrap();
        let mut brute = Vec::new();
        for (a, &y) in labels.iter().enumerate() {
            for neg in (0..k).filter(|&c| c != y) {
                let l = unit::center_triplet(emb.row(a), table.row(y), table.row(neg), (y, neg), &hyper).unwrap();
                if l > 0.0 {
                    brute.push((a, neg));
                }
            }
        }
        total_units += brute.len();
        if formed != brute {
            mismatches += 1;
        }
    }
    let pass = mismatches == 0;
    report(
        4,
        "center-triplet completeness",
        pass,
        format!("{mismatches} of {GEOMETRIES} geometries differ from brute force ({total_units} units)"),
    )
}

// ---------------------------------------------------------------- 5

fn c05_two_stage_relational() -> bool {
    let data = benchmark_data();
    let started = Instant::now();
    let full = crossval(&benchmark(Method::Pcct), &data, 1).unwrap();
    let first = crossval(&benchmark(Method::OnlyFirstStage), &data, 1).unwrap();
    let second = crossval(&benchmark(Method::OnlySecondStage), &data, 1).unwrap();
    let elapsed = started.elapsed();
    let (mf1, mf1_first, mf1_second) = (
        full.report.stats.mean.mf1,
        first.report.stats.mean.mf1,
        second.report.stats.mean.mf1,
    );
    let r1 = fold_mean(&full, |f| train_ratio(f, "after-stage1"));
    let r2 = fold_mean(&full, |f| train_ratio(f, "final"));
    let t1 = fold_mean(&full, |f| test_ratio(f, "after-stage1"));
    let t2 = fold_mean(&full, |f| test_ratio(f, "final"));
    let drop = (r1 - r2) / r1;
    let mf1_ok = mf1 >= mf1_first && mf1 >= mf1_second;
    let ratio_ok = drop >= COMPACTNESS_DROP;
    let seeds: Vec<u64> = full.folds.iter().map(|f| f.record.seed).collect();
    assert_eq!(seeds, vec![0, 1, 2, 3, 4], "fold seeds");
    let pass = mf1_ok && ratio_ok && elapsed < TWO_STAGE_BUDGET;
    report(
        5,
        "two-stage relational",
        pass,
        format!(
            "MF1 pcct {mf1:.2} vs first-stage {mf1_first:.2} / second-stage {mf1_second:.2} ({}); \
             train compactness ratio {r1:.3} -> {r2:.3} ({:+.1}%, need <= -{:.0}%), \
             held-out {t1:.3} -> {t2:.3}; {:.0}s",
            if mf1_ok { "ok" } else { "below" },
            -100.0 * drop,
            100.0 * COMPACTNESS_DROP,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 6

fn c06_tail_vs_bce() -> bool {
    let data = benchmark_data();
    let started = Instant::now();
    let mut pcct_tail = Vec::new();
    let mut bce_tail = Vec::new();
    for rep in 0..TAIL_REPEATS {
        for (method, out) in [
            (Method::Pcct, &mut pcct_tail),
            (Method::Baseline(BaselineKind::Bce), &mut bce_tail),
        ] {
            let mut c = benchmark(method);
            c.seed = rep * c.eval.folds as u64;
            let o = crossval(&c, &data, 1).unwrap();
            out.extend(o.folds.iter().map(|f| {
                f.record.metrics.as_ref().unwrap().small_mf1().expect("benchmark has small classes")
            }));
        }
    }
    let elapsed = started.elapsed();
    let test = wilcoxon_signed_rank(&pcct_tail, &bce_tail);
    let (gap, p) = (mean(&pcct_tail) - mean(&bce_tail), test.as_ref().ok().and_then(Wilcoxon::p_value));
    let pass = gap > 0.0
        && matches!(&test, Ok(t) if t.significant(TAIL_LEVEL))
        && pcct_tail.len() >= 10
        && elapsed < TAIL_BUDGET;
    report(
        6,
        "tail MF1 vs plain BCE",
        pass,
        format!(
            "{} paired runs, tail MF1 pcct {:.2} vs bce {:.2} (gap {gap:+.2}), Wilcoxon p = {}; {:.0}s; differences {}",
            pcct_tail.len(),
            mean(&pcct_tail),
            mean(&bce_tail),
            match (&test, p) {
                (Ok(_), Some(p)) => format!("{p:.4}"),
                (Ok(_), None) => "undefined".into(),
                (Err(e), _) => format!("error ({e})"),
            },
            elapsed.as_secs_f64(),
            pcct_tail
                .iter()
                .zip(&bce_tail)
                .map(|(a, b)| format!("{:+.1}", a - b))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

// ---------------------------------------------------------------- 7

fn c07_efficient_pcct() -> bool {
    let data = benchmark_data();
    let computed = crossval(&benchmark(Method::Pcct), &data, 1).unwrap();
    let trainable = crossval(&benchmark(Method::EfficientPcct), &data, 1).unwrap();
    let stage2_seconds = |o: &CrossValOutcome| {
        let (mut secs, mut epochs) = (0.0, 0);
        for f in &o.folds {
            for e in f.epoch_seconds.iter().filter(|e| e.0 == Stage::Stage2) {
                secs += e.2;
                epochs += 1;
            }
        }
        secs / epochs as f64
    };
    let (tc, tt) = (stage2_seconds(&computed), stage2_seconds(&trainable));
    let (mc, mt) = (computed.report.stats.mean.mf1, trainable.report.stats.mean.mf1);
    let trainable_only = trainable.folds.iter().all(|f| f.record.center_refreshes.is_empty());
    let pass = tt < tc && (mc - mt).abs() <= EFFICIENT_MF1_GAP && trainable_only;
    report(
        7,
        "efficient-pcct equivalence",
        pass,
        format!(
            "stage-2 epoch {:.2} ms trainable vs {:.2} ms computed; MF1 {mt:.2} vs {mc:.2} (|gap| {:.2}, limit {EFFICIENT_MF1_GAP})",
            1e3 * tt,
            1e3 * tc,
            (mc - mt).abs()
        ),
    )
}

// ---------------------------------------------------------------- 8

fn c08_extensions() -> bool {
    let data = benchmark_data();
    let mf1 = |m: Method| crossval(&benchmark(m), &data, 1).unwrap().report.stats.mean.mf1;
    let (pair, cpair) = (mf1(Method::Pairwise), mf1(Method::CenterPairwise));
    let (quad, cquad) = (mf1(Method::Quadruplet), mf1(Method::CenterQuadruplet));
    let pass = cpair >= pair && cquad >= quad;
    report(
        8,
        "center-loss extensions",
        pass,
        format!(
            "pairwise {pair:.2} -> centered {cpair:.2} ({}), quadruplet {quad:.2} -> centered {cquad:.2} ({})",
            if cpair >= pair { "ok" } else { "below" },
            if cquad >= quad { "ok" } else { "below" }
        ),
    )
}

// ---------------------------------------------------------------- 9

fn c09_margin_robustness() -> bool {
    let data = benchmark_data();
    let alphas: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let rows = sweep(SweepAxis::Margin, &alphas, &benchmark(Method::Pcct), &data, 1).unwrap();
    let lo = rows.iter().map(|r| r.mf1).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.mf1).fold(f64::NEG_INFINITY, f64::max);
    let pass = rows.len() == alphas.len() && hi - lo <= MARGIN_SPREAD;
    report(
        9,
        "margin robustness",
        pass,
        format!(
            "MF1 over alpha 0.1..0.9 from {lo:.2} to {hi:.2} (spread {:.2}, limit {MARGIN_SPREAD}): {}",
            hi - lo,
            rows.iter().map(|r| format!("{:.2}", r.mf1)).collect::<Vec<_>>().join(" ")
        ),
    )
}

// ---------------------------------------------------------------- 10

fn f1_oracle(rows: &[[u64; 2]; 2]) -> f64 {
    let mut f1s = Vec::new();
    for k in 0..2 {
        let tp = rows[k][k] as f64;
        let col: f64 = (0..2).map(|t| rows[t][k] as f64).sum();
        let row: f64 = rows[k].iter().map(|&v| v as f64).sum();
        let (p, r) = (tp / col, tp / row);
        f1s.push(2.0 * p * r / (p + r));
    }
    100.0 * (f1s[0] + f1s[1]) / 2.0
}

/// Two-sided p by listing all `2^n` sign patterns over the ranks of `|d|`.
fn enumerated_p(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut rank = vec![0.0; n];
    let mut s = 0;
    while s < n {
        let mut e = s + 1;
        while e < n && diffs[order[e]].abs() == diffs[order[s]].abs() {
            e += 1;
        }
        for &i in &order[s..e] {
            rank[i] = (s + 1 + e) as f64 / 2.0;
        }
        s = e;
    }
    let observed: f64 = (0..n).filter(|&i| diffs[i] > 0.0).map(|i| rank[i]).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        let w: f64 = (0..n).filter(|&i| mask & (1 << i) != 0).map(|i| rank[i]).sum();
        if w <= observed + 1e-9 {
            le += 1;
        }
        if w >= observed - 1e-9 {
            ge += 1;
        }
    }
    (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
}

fn c10_metrics_oracle() -> bool {
    let rows = [[8u64, 2], [1, 4]];
    let cm = ConfusionMatrix::from_counts(&[vec![8, 2], vec![1, 4]]).unwrap();
    let got = macro_metrics(&cm).unwrap().mf1();
    let want = f1_oracle(&rows);
    let metrics_ok = (got - want).abs() <= METRICS_ORACLE_TOL && (got - 78.47).abs() <= METRICS_ORACLE_TOL;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for n in 5..=ENUMERATION_MAX_N {
        for trial in 0..20 {
            // integer scores make ties common on half the trials
            let a: Vec<f64> = (0..n)
                .map(|_| if trial % 2 == 0 { rng.gen_range(-5..=5) as f64 } else { rng.gen_range(-5.0..5.0) })
                .collect();
            let b = vec![0.0; n];
            if a.iter().filter(|&&v| v != 0.0).count() < 5 {
                continue;
            }
            let nonzero: Vec<f64> = a.iter().copied().filter(|&v| v != 0.0).collect();
            let Wilcoxon::Test { p_value, exact, .. } = wilcoxon_signed_rank(&a, &b).unwrap() else {
                panic!("nonzero differences give a test")
            };
            assert!(exact);
            worst = worst.max((p_value - enumerated_p(&nonzero)).abs());
            checked += 1;
        }
    }
    let small_n_rejected = (1..5).all(|n| wilcoxon_signed_rank(&vec![1.0; n], &vec![0.0; n]).is_err());
    let wilcoxon_ok = worst <= 1e-12;
    let pass = metrics_ok && wilcoxon_ok && small_n_rejected;
    report(
        10,
        "metrics oracle",
        pass,
        format!(
            "MF1 {got:.4} vs oracle {want:.4}; exact Wilcoxon vs enumeration max |dp| {worst:.1e} over {checked} cases, n = 5..={ENUMERATION_MAX_N}; n < 5 {}",
            if small_n_rejected { "rejected" } else { "ACCEPTED" }
        ),
    )
}

// ---------------------------------------------------------------- 11

fn c11_determinism() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "method = \"pcct\"\nseed = 7\n[stage1]\nepochs = 8\n[stage2]\nepochs = 4\n[data]\npreset = \"skin7-like\"\n",
    )
    .unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_pcct"))
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
        ["metrics.toml", "metrics.csv", "run.toml", "final.ckpt", "stage1.ckpt"]
            .map(|f| std::fs::read(out.join(f)).unwrap())
    };
    let (a, b) = (run("a"), run("b"));
    let same: Vec<bool> = a.iter().zip(&b).map(|(x, y)| x == y).collect();
    let pass = same.iter().all(|&s| s);
    report(
        11,
        "determinism",
        pass,
        format!("metrics.toml, metrics.csv, run.toml and both checkpoints byte-identical: {same:?}"),
    )
}

/// `(hard, criterion)`: hard criteria fail the target when they do not pass.
const CRITERIA: &[(bool, fn() -> bool)] = &[
    (true, c01_gradient_oracle),
    (true, c02_loss_unit_values),
    (true, c03_sampler_balance),
    (true, c04_center_triplet_completeness),
    (false, c05_two_stage_relational),
    (false, c06_tail_vs_bce),
    (false, c07_efficient_pcct),
    (false, c08_extensions),
    (false, c09_margin_robustness),
    (true, c10_metrics_oracle),
    (true, c11_determinism),
];

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed_hard = Vec::new();
    let (mut passed, mut ran) = (0, 0);
    for (i, &(hard, criterion)) in CRITERIA.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| *f == id.to_string()) {
            continue;
        }
        ran += 1;
        match catch_unwind(AssertUnwindSafe(criterion)) {
            Ok(true) => passed += 1,
            Ok(false) if !hard => {}
            Ok(false) => failed_hard.push(id),
            Err(_) => {
                println!("[FAIL] criterion {id:>2}: run aborted");
                failed_hard.push(id);
            }
        }
    }
    println!("acceptance: {passed} of {ran} criteria pass");
    if failed_hard.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("hard failures: {failed_hard:?}");
        ExitCode::FAILURE
    }
}
