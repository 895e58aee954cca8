use serde::Serialize;

use crate::centers::CenterTable;
use crate::diffcore::{lp_norm, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Compactness {
    /// Mean distance of a sample to its class center.
    pub within: f64,
    /// Mean distance over unordered pairs of distinct centers.
    pub inter: f64,
}

impl Compactness {
    /// `within / inter`; smaller is more compact relative to class spacing.
    pub fn ratio(&self) -> f64 {
        self.within / self.inter
    }
}

pub fn compactness(
    embeddings: &Tensor,
    labels: &[usize],
    centers: &CenterTable,
    p_norm: u32,
) -> Result<Compactness> {
    if embeddings.shape().len() != 2 || embeddings.rows() != labels.len() {
        return Err(Error::dim(format!(
            "{} labels for embeddings of shape {:?}",
            labels.len(),
            embeddings.shape()
        )));
    }
    if embeddings.cols() != centers.dim() {
        return Err(Error::dim("embedding and center dimensions differ"));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= centers.num_classes()) {
        return Err(Error::contract(format!("class {y} has no center")));
    }
    let mut diff = vec![0.0; centers.dim()];
    let mut dist = |a: &[f64], b: &[f64]| {
        for ((o, x), y) in diff.iter_mut().zip(a).zip(b) {
            *o = x - y;
        }
        lp_norm(&diff, p_norm)
    };
    let within = if labels.is_empty() {
        0.0
    } else {
        labels
            .iter()
            .enumerate()
            .map(|(i, &y)| dist(embeddings.row(i), centers.row(y)))
            .sum::<f64>()
            / labels.len() as f64
    };
    let k = centers.num_classes();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..k {
        for b in (a + 1)..k {
            total += dist(centers.row(a), centers.row(b));
            pairs += 1;
        }
    }
    let inter = if pairs == 0 { 0.0 } else { total / pairs as f64 };
    Ok(Compactness { within, inter })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centers::CenterMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(rows: &[&[f64]]) -> CenterTable {
        CenterTable::from_matrix(Tensor::from_rows(rows).unwrap(), CenterMode::Computed, None).unwrap()
    }

    #[test]
    fn points_on_centers() {
        let c = table(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let e = Tensor::from_rows(&[[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]]).unwrap();
        let r = compactness(&e, &[0, 1, 1], &c, 2).unwrap();
        assert_eq!((r.within, r.inter), (0.0, 1.0));
    }

    #[test]
    fn random_cloud_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (n, k, d) = (40, 4, 3);
        let e = Tensor::new(vec![n, d], (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let c = CenterTable::from_matrix(
            Tensor::new(vec![k, d], (0..k * d).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap(),
            CenterMode::Computed,
            None,
        )
        .unwrap();
        let r = compactness(&e, &labels, &c, 2).unwrap();
        let euclid = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let within: f64 = (0..n).map(|i| euclid(e.row(i), c.row(labels[i]))).sum::<f64>() / n as f64;
        let mut inter = Vec::new();
        for a in 0..k {
            for b in 0..k {
                if a != b {
                    inter.push(euclid(c.row(a), c.row(b)));
                }
            }
        }
        let inter = inter.iter().sum::<f64>() / inter.len() as f64;
        assert!((r.within - within).abs() < 1e-12);
        assert!((r.inter - inter).abs() < 1e-12);
    }
}
