//! Property tests over the public API.

use pcct::centers::{nearest_center_predict, CenterMode, CenterTable};
use pcct::diffcore::Tensor;
use pcct::eval::{confusion, macro_metrics, stratified_kfold, wilcoxon_signed_rank};
use pcct::losses::{unit, LossHyper, PairLabel};
use pcct::sampling::{build_balanced_batch, form_center_triplets, form_triplets, DatasetIndex, Mining};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

fn lp(x: &[f64], y: &[f64], p: u32) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b).abs().powi(p as i32))
        .sum::<f64>()
        .powf(1.0 / p as f64)
}

fn vecs(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0..5.0f64, dim), n)
}

fn hyper() -> impl Strategy<Value = LossHyper> {
    (0.0..2.0f64, 1u32..=3).prop_map(|(alpha, p_norm)| LossHyper {
        alpha,
        beta: alpha / 2.0,
        p_norm,
    })
}

fn sizes() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..30, 2..6)
}

fn index(sizes: &[usize]) -> DatasetIndex {
    let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(k, &n)| vec![k; n]).collect();
    DatasetIndex::from_labels(&labels, None).unwrap()
}

proptest! {
    #[test]
    fn triplet_matches_closed_form(v in vecs(3, 4), h in hyper()) {
        let l = unit::triplet(&v[0], &v[1], &v[2], &h).unwrap();
        let want = (lp(&v[0], &v[1], h.p_norm) + h.alpha - lp(&v[0], &v[2], h.p_norm)).max(0.0);
        prop_assert!(l >= 0.0);
        prop_assert!((l - want).abs() < TOL, "{l} vs {want}");
    }

    #[test]
    fn triplet_is_translation_invariant(v in vecs(4, 3), h in hyper()) {
        let shift = |x: &Vec<f64>| x.iter().zip(&v[3]).map(|(a, b)| a + b).collect::<Vec<_>>();
        let l = unit::triplet(&v[0], &v[1], &v[2], &h).unwrap();
        let s = unit::triplet(&shift(&v[0]), &shift(&v[1]), &shift(&v[2]), &h).unwrap();
        prop_assert!((l - s).abs() < 1e-7);
    }

    #[test]
    fn center_triplet_is_triplet_against_centers(v in vecs(3, 4), h in hyper()) {
        let c = unit::center_triplet(&v[0], &v[1], &v[2], (0, 1), &h).unwrap();
        let t = unit::triplet(&v[0], &v[1], &v[2], &h).unwrap();
        prop_assert_eq!(c, t);
    }

    #[test]
    fn hinge_inactive_past_margin(v in vecs(2, 3), h in hyper()) {
        // negative placed far beyond the positive
        let far: Vec<f64> = v[0].iter().map(|a| a + 100.0).collect();
        prop_assert_eq!(unit::triplet(&v[0], &v[1], &far, &h).unwrap(), 0.0);
    }

    #[test]
    fn pairwise_matches_closed_form(v in vecs(2, 3), h in hyper(), same in any::<bool>()) {
        let l = unit::pairwise(&v[0], &v[1], PairLabel { same_class: same }, &h).unwrap();
        let d = lp(&v[0], &v[1], h.p_norm);
        let want = if same { d } else { (h.alpha - d).max(0.0) };
        prop_assert!((l - want).abs() < TOL);
    }

    #[test]
    fn quadruplet_bounds_triplet(v in vecs(4, 3), h in hyper()) {
        let q = unit::quadruplet(&v[0], &v[1], &v[2], &v[3], &h).unwrap();
        let t = unit::triplet(&v[0], &v[1], &v[2], &h).unwrap();
        let second = (lp(&v[0], &v[1], h.p_norm) + h.beta - lp(&v[2], &v[3], h.p_norm)).max(0.0);
        prop_assert!(q >= t - TOL);
        prop_assert!((q - t - second).abs() < TOL);
    }

    #[test]
    fn center_quadruplet_is_quadruplet_against_centers(v in vecs(4, 3), h in hyper()) {
        let c = unit::center_quadruplet(&v[0], &v[1], &v[2], &v[3], (0, 1, 2), &h).unwrap();
        let q = unit::quadruplet(&v[0], &v[1], &v[2], &v[3], &h).unwrap();
        prop_assert_eq!(c, q);
    }

    #[test]
    fn distance_is_a_metric(v in vecs(3, 5), p in 1u32..=3) {
        let d = |i: usize, j: usize| unit::lp_distance(&v[i], &v[j], p).unwrap();
        prop_assert!((d(0, 1) - d(1, 0)).abs() < TOL);
        prop_assert!(d(0, 0) == 0.0);
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + TOL);
    }

    #[test]
    fn balanced_batches_hold_m_per_class(s in sizes(), m in 1usize..8, seed in any::<u64>()) {
        let idx = index(&s);
        let b = build_balanced_batch(&idx, m, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut counts = vec![0; s.len()];
        for (&i, &y) in b.indices.iter().zip(&b.labels) {
            prop_assert_eq!(idx.label(i), y);
            counts[y] += 1;
        }
        prop_assert!(counts.iter().all(|&c| c == m));
    }

    #[test]
    fn mined_triplets_are_valid(s in sizes(), m in 2usize..5, seed in any::<u64>(), hard in any::<bool>()) {
        let idx = index(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = build_balanced_batch(&idx, m, &mut rng).unwrap();
        let emb = Tensor::new(vec![b.len(), 2], (0..b.len() * 2).map(|i| ((i * 37) % 11) as f64).collect()).unwrap();
        let mining = if hard { Mining::RandomHard } else { Mining::Random };
        let ts = form_triplets(&b, &emb, mining, &LossHyper::default(), &mut rng).unwrap();
        prop_assert_eq!(ts.len(), b.len());
        prop_assert!(ts.iter().all(|t| t.is_valid(&b)));
    }

    #[test]
    fn center_triplets_are_exactly_the_active_ones(v in vecs(6, 2), c in vecs(3, 2), h in hyper()) {
        let labels = vec![0, 0, 1, 1, 2, 2];
        let idx = DatasetIndex::from_labels(&labels, None).unwrap();
        let b = build_balanced_batch(&idx, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let emb = Tensor::from_rows(&v).unwrap();
        let centers = CenterTable::from_matrix(Tensor::from_rows(&c).unwrap(), CenterMode::Computed, None).unwrap();
        let active = form_center_triplets(&b, &emb, &centers, &h).unwrap();
        for (a, y) in b.labels.iter().enumerate() {
            for k in (0..3).filter(|k| k != y) {
                let l = unit::center_triplet(&v[a], &c[*y], &c[k], (*y, k), &h).unwrap();
                prop_assert_eq!(active.contains(&(a, k)), l > 0.0);
            }
        }
    }

    #[test]
    fn nearest_center_is_argmin(x in prop::collection::vec(-5.0..5.0f64, 3), c in vecs(4, 3), p in 1u32..=3) {
        let centers = CenterTable::from_matrix(Tensor::from_rows(&c).unwrap(), CenterMode::Computed, None).unwrap();
        let (k, d) = nearest_center_predict(&x, &centers, p).unwrap();
        for (j, cj) in c.iter().enumerate() {
            prop_assert!((d[j] - lp(&x, cj, p)).abs() < 1e-9);
            prop_assert!(d[k] <= d[j]);
        }
    }

    #[test]
    fn kfold_partitions_and_stratifies(s in sizes(), k in 2usize..6, seed in any::<u64>()) {
        let idx = index(&s);
        prop_assume!(idx.len() >= k);
        let folds = stratified_kfold(&idx, k, seed).unwrap();
        let mut seen = vec![0; idx.len()];
        for f in &folds {
            prop_assert_eq!(f.train.len() + f.test.len(), idx.len());
            for &i in &f.test {
                seen[i] += 1;
            }
            prop_assert!(f.train.iter().all(|i| !f.test.contains(i)));
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        for (c, &n) in s.iter().enumerate() {
            let per: Vec<usize> = folds.iter().map(|f| f.test.iter().filter(|&&i| idx.label(i) == c).count()).collect();
            let (lo, hi) = (*per.iter().min().unwrap(), *per.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
            prop_assert_eq!(per.iter().sum::<usize>(), n);
        }
        let totals: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        prop_assert!(totals.iter().max().unwrap() - totals.iter().min().unwrap() <= 1);
    }

    #[test]
    fn wilcoxon_is_symmetric(a in prop::collection::vec(0.0..100.0f64, 6..30), shift in -10.0..10.0f64) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + shift + (i % 3) as f64).collect();
        if let (Ok(x), Ok(y)) = (wilcoxon_signed_rank(&a, &b), wilcoxon_signed_rank(&b, &a)) {
            match (x.p_value(), y.p_value()) {
                (Some(p), Some(q)) => {
                    prop_assert!((p - q).abs() < 1e-12);
                    prop_assert!(p > 0.0 && p <= 1.0);
                }
                (p, q) => prop_assert_eq!(p, q),
            }
        }
    }

    #[test]
    fn macro_scores_stay_in_range(truth in prop::collection::vec(0usize..4, 1..60), seed in any::<u64>()) {
        let pred: Vec<usize> = truth.iter().enumerate().map(|(i, &t)| if (i as u64 ^ seed).is_multiple_of(3) { (t + 1) % 4 } else { t }).collect();
        let r = macro_metrics(&confusion(&truth, &pred, 4).unwrap()).unwrap();
        let m = r.macro_scores;
        for v in [m.mcp, m.mcr, r.mf1()] {
            prop_assert!((0.0..=100.0).contains(&v));
        }
    }
}
