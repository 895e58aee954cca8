//! Class centers: computed per-class mean embeddings, trainable center rows,
//! and nearest-center prediction.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{lp_norm, Mlp, Tensor};
use crate::error::{Error, Result};
use crate::sampling::DatasetIndex;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CenterMode {
    /// Recomputed once per epoch as class means under the previous parameters.
    #[default]
    Computed,
    /// Optimized jointly with the extractor.
    Trainable,
}

impl CenterMode {
    pub fn name(self) -> &'static str {
        match self {
            CenterMode::Computed => "computed",
            CenterMode::Trainable => "trainable",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "computed" => Ok(CenterMode::Computed),
            "trainable" => Ok(CenterMode::Trainable),
            other => Err(Error::Format(format!("unknown center mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CenterInit {
    #[default]
    FromComputed,
    Random,
}

/// `K x D` center matrix, one row per class.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterTable {
    matrix: Tensor,
    mode: CenterMode,
    source_epoch: Option<usize>,
}

impl CenterTable {
    /// `source_epoch` is the epoch whose parameters produced computed rows.
    pub fn from_matrix(matrix: Tensor, mode: CenterMode, source_epoch: Option<usize>) -> Result<Self> {
        if matrix.shape().len() != 2 || matrix.rows() == 0 || matrix.cols() == 0 {
            return Err(Error::dim(format!(
                "center matrix must be a non-empty K x D matrix, got {:?}",
                matrix.shape()
            )));
        }
        if !matrix.is_finite() {
            return Err(Error::contract("center rows must be finite"));
        }
        let matrix = matrix.with_requires_grad(mode == CenterMode::Trainable);
        Ok(Self {
            matrix,
            mode,
            source_epoch,
        })
    }

    pub fn mode(&self) -> CenterMode {
        self.mode
    }

    pub fn source_epoch(&self) -> Option<usize> {
        self.source_epoch
    }

    pub fn num_classes(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        self.matrix.row(k)
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    /// Mutable access for the optimizer; trainable rows carry gradients.
    pub fn matrix_mut(&mut self) -> &mut Tensor {
        &mut self.matrix
    }

    pub fn is_finite(&self) -> bool {
        self.matrix.is_finite()
    }
}

/// Class means of `embeddings` rows, `[N, D]`, grouped by `index`.
pub fn centers_from_embeddings(
    embeddings: &Tensor,
    index: &DatasetIndex,
    source_epoch: Option<usize>,
) -> Result<CenterTable> {
    if embeddings.shape().len() != 2 || embeddings.rows() != index.len() {
        return Err(Error::dim(format!(
            "{} indexed samples but embeddings of shape {:?}",
            index.len(),
            embeddings.shape()
        )));
    }
    index.require_nonempty_classes()?;
    let d = embeddings.cols();
    let mut data = Vec::with_capacity(index.num_classes() * d);
    for k in 0..index.num_classes() {
        let members = index.class(k);
        let mut acc = vec![0.0; d];
        for &i in members {
            for (a, v) in acc.iter_mut().zip(embeddings.row(i)) {
                *a += v;
            }
        }
        let n = members.len() as f64;
        data.extend(acc.into_iter().map(|a| a / n));
    }
    CenterTable::from_matrix(
        Tensor::new(vec![index.num_classes(), d], data)?,
        CenterMode::Computed,
        source_epoch,
    )
}

/// Row `k` = mean extractor output over the class-`k` rows of `features`.
pub fn compute_centers(
    extractor: &Mlp,
    features: &Tensor,
    index: &DatasetIndex,
    source_epoch: Option<usize>,
) -> Result<CenterTable> {
    index.require_nonempty_classes()?;
    let embeddings = extractor.embed(features)?;
    centers_from_embeddings(&embeddings, index, source_epoch)
}

/// Trainable table, copied from `computed` or drawn from `N(0, 1)`.
pub fn init_trainable_centers<R: Rng + ?Sized>(
    k: usize,
    d: usize,
    init: CenterInit,
    computed: Option<&CenterTable>,
    rng: &mut R,
) -> Result<CenterTable> {
    if k == 0 || d == 0 {
        return Err(Error::contract("center table needs K, D >= 1"));
    }
    let (matrix, source_epoch) = match init {
        CenterInit::FromComputed => {
            let src = computed
                .ok_or_else(|| Error::contract("from-computed initialization needs a computed table"))?;
            if src.num_classes() != k || src.dim() != d {
                return Err(Error::dim(format!(
                    "source table is {}x{}, expected {k}x{d}",
                    src.num_classes(),
                    src.dim()
                )));
            }
            (Tensor::new(vec![k, d], src.matrix().data().to_vec())?, src.source_epoch())
        }
        CenterInit::Random => {
            let data = (0..k * d).map(|_| StandardNormal.sample(rng)).collect();
            (Tensor::new(vec![k, d], data)?, None)
        }
    };
    CenterTable::from_matrix(matrix, CenterMode::Trainable, source_epoch)
}

/// Closest center under the L_p distance and all `K` distances. Ties go to
/// the smallest class id.
pub fn nearest_center_predict(
    embedding: &[f64],
    centers: &CenterTable,
    p_norm: u32,
) -> Result<(usize, Vec<f64>)> {
    if embedding.len() != centers.dim() {
        return Err(Error::dim(format!(
            "embedding of length {} for centers of dimension {}",
            embedding.len(),
            centers.dim()
        )));
    }
    let mut scratch = vec![0.0; embedding.len()];
    let distances: Vec<f64> = (0..centers.num_classes())
        .map(|k| {
            for ((o, a), c) in scratch.iter_mut().zip(embedding).zip(centers.row(k)) {
                *o = a - c;
            }
            lp_norm(&scratch, p_norm)
        })
        .collect();
    let mut best = 0;
    for (k, &d) in distances.iter().enumerate().skip(1) {
        if d < distances[best] {
            best = k;
        }
    }
    Ok((best, distances))
}

/// Nearest-center class of every row of `embeddings`.
pub fn predict_batch(embeddings: &Tensor, centers: &CenterTable, p_norm: u32) -> Result<Vec<usize>> {
    (0..embeddings.rows())
        .map(|i| nearest_center_predict(embeddings.row(i), centers, p_norm).map(|(k, _)| k))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{AdamConfig, AdamState, Graph};
    use crate::losses::{self, LossHyper};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table(rows: &[&[f64]]) -> CenterTable {
        CenterTable::from_matrix(Tensor::from_rows(rows).unwrap(), CenterMode::Computed, Some(0)).unwrap()
    }

    #[test]
    fn singleton_and_midpoint_centers() {
        let index = DatasetIndex::from_labels(&[0, 1, 1], None).unwrap();
        let e = Tensor::from_rows(&[[3.5, -1.25], [0.0, 0.0], [2.0, 2.0]]).unwrap();
        let c = centers_from_embeddings(&e, &index, Some(4)).unwrap();
        assert_eq!(c.row(0), &[3.5, -1.25]);
        assert_eq!(c.row(1), &[1.0, 1.0]);
        assert_eq!(c.source_epoch(), Some(4));
        let sparse = DatasetIndex::from_labels(&[0], Some(2)).unwrap();
        assert!(centers_from_embeddings(&Tensor::zeros(vec![1, 2]), &sparse, None).is_err());
    }

    #[test]
    fn large_class_mean_matches_compensated_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1000;
        let data: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1e3..1e3)).collect();
        let e = Tensor::new(vec![n, 3], data).unwrap();
        let index = DatasetIndex::from_labels(&vec![0; n], None).unwrap();
        let c = centers_from_embeddings(&e, &index, None).unwrap();
        for j in 0..3 {
            // Kahan-Babuska summation
            let (mut sum, mut comp) = (0.0f64, 0.0f64);
            for i in 0..n {
                let v = e.row(i)[j];
                let t = sum + v;
                comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
                sum = t;
            }
            let oracle = (sum + comp) / n as f64;
            assert!((c.row(0)[j] - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_extractor_gives_input_means() {
        let ident = Mlp::from_parts(
            vec![Tensor::new(vec![1, 1], vec![1.0]).unwrap()],
            vec![Tensor::vector(vec![0.0])],
            Default::default(),
        )
        .unwrap();
        let x = Tensor::new(vec![4, 1], vec![1.0, 3.0, -2.0, 10.0]).unwrap();
        let index = DatasetIndex::from_labels(&[0, 0, 1, 1], None).unwrap();
        let c = compute_centers(&ident, &x, &index, None).unwrap();
        assert_eq!(c.matrix().data(), &[2.0, 4.0]);
    }

    #[test]
    fn trainable_init() {
        let src = table(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = init_trainable_centers(2, 2, CenterInit::FromComputed, Some(&src), &mut rng).unwrap();
        assert_eq!(t.matrix().data(), src.matrix().data());
        assert_eq!(t.mode(), CenterMode::Trainable);
        assert!(t.matrix().requires_grad());
        let a = init_trainable_centers(3, 4, CenterInit::Random, None, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = init_trainable_centers(3, 4, CenterInit::Random, None, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert!(init_trainable_centers(2, 3, CenterInit::FromComputed, Some(&src), &mut rng).is_err());
    }

    #[test]
    fn adam_step_moves_trainable_rows() {
        let src = table(&[&[0.0, 0.0], &[0.1, 0.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = init_trainable_centers(2, 2, CenterInit::FromComputed, Some(&src), &mut rng).unwrap();
        let before = c.matrix().clone();
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[[0.3, 0.2]]).unwrap());
        let cv = g.leaf(c.matrix());
        let l = losses::center_triplet(&mut g, a, cv, &[0], &[1], &LossHyper::default()).unwrap();
        let m = g.mean(l).unwrap();
        let grads = g.backward(m).unwrap();
        grads.accumulate(cv, c.matrix_mut()).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), &[c.matrix()]).unwrap();
        adam.step(&mut [c.matrix_mut()]).unwrap();
        assert_ne!(c.matrix().data(), before.data());
    }

    #[test]
    fn prediction_examples() {
        let c = table(&[&[0.0, 0.0], &[1.0, 0.0], &[5.0, 5.0], &[2.0, -1.0]]);
        let (k, d) = nearest_center_predict(&[2.0, -1.0], &c, 2).unwrap();
        assert_eq!((k, d[3]), (3, 0.0));
        // equidistant from centers 1 and 4
        let c = table(&[&[9.0, 9.0], &[1.0, 0.0], &[8.0, 8.0], &[7.0, 7.0], &[-1.0, 0.0]]);
        assert_eq!(nearest_center_predict(&[0.0, 0.0], &c, 2).unwrap().0, 1);
        assert!(nearest_center_predict(&[0.0], &c, 2).is_err());
    }

    #[test]
    fn trainable_center_gradient_direction() {
        // active hinge: gradient wrt c_anchor is (c_a - f_a)/||c_a - f_a||
        let mut g = Graph::new();
        let f = [0.2, -0.4, 0.1];
        let a = g.constant(Tensor::from_rows(&[f]).unwrap());
        let centers = Tensor::from_rows(&[[0.5, 0.1, -0.2], [0.4, -0.3, 0.3]])
            .unwrap()
            .with_requires_grad(true);
        let cv = g.leaf(&centers);
        let l = losses::center_triplet(&mut g, a, cv, &[0], &[1], &LossHyper::default()).unwrap();
        let s = g.sum(l);
        assert!(g.value(s).item().unwrap() > 0.0);
        let grads = g.backward(s).unwrap();
        let gc = &grads.wrt(cv).unwrap()[..3];
        let diff: Vec<f64> = (0..3).map(|j| centers.row(0)[j] - f[j]).collect();
        let norm = lp_norm(&diff, 2);
        for j in 0..3 {
            assert!((gc[j] - diff[j] / norm).abs() < 1e-12);
        }
    }
}
