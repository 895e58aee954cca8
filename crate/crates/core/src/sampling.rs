//! Batch construction and unit formation for the metric losses.
//!
//! Triplets, pairs and quadruplets refer to *positions* inside a
//! [`BatchPlan`], so they index directly into the batch embedding block.
//! A sample drawn twice into a batch occupies two positions.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::centers::CenterTable;
use crate::diffcore::{lp_norm, Tensor};
use crate::error::{Error, Result};
use crate::losses::LossHyper;

/// Class membership of every sample of a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    labels: Vec<usize>,
    classes: Vec<Vec<usize>>,
}

impl DatasetIndex {
    /// `num_classes` defaults to `max(label) + 1`; a larger value allows
    /// classes with no samples (absent from a fold, for instance).
    pub fn from_labels(labels: &[usize], num_classes: Option<usize>) -> Result<Self> {
        let observed = labels.iter().max().map_or(0, |&m| m + 1);
        let k = num_classes.unwrap_or(observed);
        if observed > k {
            return Err(Error::contract(format!(
                "label {} out of range for {k} classes",
                observed - 1
            )));
        }
        let mut classes = vec![Vec::new(); k];
        for (i, &y) in labels.iter().enumerate() {
            classes[y].push(i);
        }
        Ok(Self {
            labels: labels.to_vec(),
            classes,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, sample: usize) -> usize {
        self.labels[sample]
    }

    pub fn class(&self, k: usize) -> &[usize] {
        &self.classes[k]
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        self.classes.iter().map(Vec::len).collect()
    }

    /// `max N_k / min N_k` over non-empty classes.
    pub fn imbalance_ratio(&self) -> f64 {
        let sizes: Vec<usize> = self.class_sizes().into_iter().filter(|&n| n > 0).collect();
        match (sizes.iter().max(), sizes.iter().min()) {
            (Some(&hi), Some(&lo)) => hi as f64 / lo as f64,
            _ => 1.0,
        }
    }

    pub(crate) fn require_nonempty_classes(&self) -> Result<()> {
        match self.classes.iter().position(Vec::is_empty) {
            Some(k) => Err(Error::contract(format!("class {k} has no samples"))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchLayout {
    /// Exactly `m_per_class` samples from every class.
    Balanced { m_per_class: usize },
    Flat { batch_size: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    /// Sample indices into the dataset, in batch order.
    pub indices: Vec<usize>,
    /// Class of each batch position.
    pub labels: Vec<usize>,
    pub layout: BatchLayout,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn from_indices(indices: Vec<usize>, index: &DatasetIndex, layout: BatchLayout) -> Self {
        let labels = indices.iter().map(|&i| index.label(i)).collect();
        Self {
            indices,
            labels,
            layout,
        }
    }

    /// Batch positions grouped by class, `K` lists.
    fn positions_by_class(&self, k: usize) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); k];
        for (pos, &y) in self.labels.iter().enumerate() {
            by[y].push(pos);
        }
        by
    }

    fn num_classes_hint(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub same_class: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Quadruplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative1: usize,
    pub negative2: usize,
}

impl Triplet {
    pub fn is_valid(&self, batch: &BatchPlan) -> bool {
        let y = &batch.labels;
        self.anchor != self.positive
            && y[self.anchor] == y[self.positive]
            && y[self.anchor] != y[self.negative]
    }
}

impl Pair {
    pub fn is_valid(&self, batch: &BatchPlan) -> bool {
        self.a != self.b && (batch.labels[self.a] == batch.labels[self.b]) == self.same_class
    }
}

impl Quadruplet {
    pub fn is_valid(&self, batch: &BatchPlan) -> bool {
        let y = &batch.labels;
        let (a, n1, n2) = (y[self.anchor], y[self.negative1], y[self.negative2]);
        self.anchor != self.positive && a == y[self.positive] && a != n1 && a != n2 && n1 != n2
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mining {
    Random,
    #[default]
    RandomHard,
}

impl Mining {
    pub fn name(self) -> &'static str {
        match self {
            Mining::Random => "random",
            Mining::RandomHard => "random-hard",
        }
    }
}

/// `m_per_class` samples from every class, with replacement for classes
/// smaller than `m_per_class`, then shuffled.
pub fn build_balanced_batch<R: Rng + ?Sized>(
    index: &DatasetIndex,
    m_per_class: usize,
    rng: &mut R,
) -> Result<BatchPlan> {
    if m_per_class == 0 {
        return Err(Error::contract("m_per_class must be at least 1"));
    }
    index.require_nonempty_classes()?;
    let mut indices = Vec::with_capacity(m_per_class * index.num_classes());
    for members in &index.classes {
        if members.len() >= m_per_class {
            indices.extend(members.choose_multiple(rng, m_per_class).copied());
        } else {
            indices.extend((0..m_per_class).map(|_| members[rng.gen_range(0..members.len())]));
        }
    }
    indices.shuffle(rng);
    Ok(BatchPlan::from_indices(
        indices,
        index,
        BatchLayout::Balanced { m_per_class },
    ))
}

/// Split a shuffled pass over `stream` into flat batches; the last may be short.
pub fn flat_batches<R: Rng + ?Sized>(
    index: &DatasetIndex,
    stream: &[usize],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<BatchPlan>> {
    if batch_size == 0 {
        return Err(Error::contract("batch_size must be at least 1"));
    }
    let mut order = stream.to_vec();
    order.shuffle(rng);
    Ok(order
        .chunks(batch_size)
        .map(|c| BatchPlan::from_indices(c.to_vec(), index, BatchLayout::Flat { batch_size }))
        .collect())
}

/// Pairwise L_p distances between batch rows, `n x n` row-major.
fn distance_matrix(embeddings: &Tensor, p_norm: u32) -> Vec<f64> {
    let n = embeddings.rows();
    let mut d = vec![0.0; n * n];
    let mut diff = vec![0.0; embeddings.cols()];
    for i in 0..n {
        for j in (i + 1)..n {
            for ((o, a), b) in diff.iter_mut().zip(embeddings.row(i)).zip(embeddings.row(j)) {
                *o = a - b;
            }
            let v = lp_norm(&diff, p_norm);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

fn check_embeddings(batch: &BatchPlan, embeddings: &Tensor) -> Result<()> {
    if embeddings.shape().len() != 2 || embeddings.rows() != batch.len() {
        return Err(Error::dim(format!(
            "embeddings of shape {:?} for a batch of {}",
            embeddings.shape(),
            batch.len()
        )));
    }
    Ok(())
}

fn require_classes(by_class: &[Vec<usize>], min: usize, what: &str) -> Result<()> {
    let present = by_class.iter().filter(|c| !c.is_empty()).count();
    if present < min {
        return Err(Error::contract(format!(
            "{what} needs at least {min} classes in the batch, found {present}"
        )));
    }
    Ok(())
}

fn pick<R: Rng + ?Sized>(items: &[usize], rng: &mut R) -> usize {
    items[rng.gen_range(0..items.len())]
}

/// Uniform choice among same-class positions other than `pos`.
fn pick_positive<R: Rng + ?Sized>(class_positions: &[usize], pos: usize, rng: &mut R) -> Option<usize> {
    if class_positions.len() < 2 {
        return None;
    }
    let others: Vec<usize> = class_positions.iter().copied().filter(|&q| q != pos).collect();
    Some(pick(&others, rng))
}

/// One triplet per anchor position. Anchors whose class has a single
/// position in the batch are skipped.
///
/// `RandomHard` picks uniformly among semi-hard negatives
/// (`d_ap < d_an < d_ap + alpha`) and falls back to the closest negative,
/// lowest position on ties.
pub fn form_triplets<R: Rng + ?Sized>(
    batch: &BatchPlan,
    embeddings: &Tensor,
    mining: Mining,
    hyper: &LossHyper,
    rng: &mut R,
) -> Result<Vec<Triplet>> {
    check_embeddings(batch, embeddings)?;
    let by_class = batch.positions_by_class(batch.num_classes_hint());
    require_classes(&by_class, 2, "triplet formation")?;
    let n = batch.len();
    let dist = match mining {
        Mining::RandomHard => distance_matrix(embeddings, hyper.p_norm),
        Mining::Random => Vec::new(),
    };
    let mut out = Vec::with_capacity(n);
    for anchor in 0..n {
        let y = batch.labels[anchor];
        let Some(positive) = pick_positive(&by_class[y], anchor, rng) else {
            continue;
        };
        let negatives: Vec<usize> = (0..n).filter(|&j| batch.labels[j] != y).collect();
        let negative = match mining {
            Mining::Random => {
                // uniform over other classes, then over that class's positions
                let classes: Vec<usize> = (0..by_class.len())
                    .filter(|&k| k != y && !by_class[k].is_empty())
                    .collect();
                pick(&by_class[pick(&classes, rng)], rng)
            }
            Mining::RandomHard => {
                let row = &dist[anchor * n..(anchor + 1) * n];
                let d_ap = row[positive];
                let semi_hard: Vec<usize> = negatives
                    .iter()
                    .copied()
                    .filter(|&j| d_ap < row[j] && row[j] < d_ap + hyper.alpha)
                    .collect();
                if semi_hard.is_empty() {
                    hardest(&negatives, row)
                } else {
                    pick(&semi_hard, rng)
                }
            }
        };
        out.push(Triplet {
            anchor,
            positive,
            negative,
        });
    }
    Ok(out)
}

fn hardest(candidates: &[usize], row: &[f64]) -> usize {
    let mut best = candidates[0];
    for &j in &candidates[1..] {
        if row[j] < row[best] {
            best = j;
        }
    }
    best
}

/// Distances from one embedding to every center row.
pub(crate) fn center_distances(f: &[f64], centers: &Tensor, p_norm: u32, scratch: &mut [f64]) -> Vec<f64> {
    (0..centers.rows())
        .map(|k| {
            for ((o, a), c) in scratch.iter_mut().zip(f).zip(centers.row(k)) {
                *o = a - c;
            }
            lp_norm(scratch, p_norm)
        })
        .collect()
}

fn check_centers(batch: &BatchPlan, embeddings: &Tensor, centers: &CenterTable) -> Result<()> {
    check_embeddings(batch, embeddings)?;
    if centers.dim() != embeddings.cols() {
        return Err(Error::dim(format!(
            "centers of dimension {} for embeddings of dimension {}",
            centers.dim(),
            embeddings.cols()
        )));
    }
    if let Some(&y) = batch.labels.iter().find(|&&y| y >= centers.num_classes()) {
        return Err(Error::contract(format!(
            "class {y} has no center ({} centers)",
            centers.num_classes()
        )));
    }
    Ok(())
}

/// Every `(anchor position, negative class)` whose center-triplet loss is
/// strictly positive, in anchor then class order.
pub fn form_center_triplets(
    batch: &BatchPlan,
    embeddings: &Tensor,
    centers: &CenterTable,
    hyper: &LossHyper,
) -> Result<Vec<(usize, usize)>> {
    check_centers(batch, embeddings, centers)?;
    let mut scratch = vec![0.0; embeddings.cols()];
    let mut out = Vec::new();
    for anchor in 0..batch.len() {
        let y = batch.labels[anchor];
        let d = center_distances(embeddings.row(anchor), centers.matrix(), hyper.p_norm, &mut scratch);
        for (k, &d_an) in d.iter().enumerate() {
            // same operation order as the graph loss
            if k != y && (d[y] - d_an) + hyper.alpha > 0.0 {
                out.push((anchor, k));
            }
        }
    }
    Ok(out)
}

/// Center pairs with a strictly positive loss: the anchor's own center when
/// it is off-center, plus every other center closer than `alpha`.
/// Returned as `(anchor position, partner class)`.
pub fn form_center_pairs(
    batch: &BatchPlan,
    embeddings: &Tensor,
    centers: &CenterTable,
    hyper: &LossHyper,
) -> Result<Vec<(usize, usize)>> {
    check_centers(batch, embeddings, centers)?;
    let mut scratch = vec![0.0; embeddings.cols()];
    let mut out = Vec::new();
    for anchor in 0..batch.len() {
        let y = batch.labels[anchor];
        let d = center_distances(embeddings.row(anchor), centers.matrix(), hyper.p_norm, &mut scratch);
        for (k, &dk) in d.iter().enumerate() {
            let loss = if k == y { dk } else { -dk + hyper.alpha };
            if loss > 0.0 {
                out.push((anchor, k));
            }
        }
    }
    Ok(out)
}

/// Ordered negative-class pairs `(n1, n2)` per anchor with a strictly
/// positive center-quadruplet loss. Returned as `(anchor, n1, n2)`.
pub fn form_center_quadruplets(
    batch: &BatchPlan,
    embeddings: &Tensor,
    centers: &CenterTable,
    hyper: &LossHyper,
) -> Result<Vec<(usize, usize, usize)>> {
    check_centers(batch, embeddings, centers)?;
    let k = centers.num_classes();
    if k < 3 {
        return Err(Error::contract(format!(
            "center quadruplets need at least 3 classes, found {k}"
        )));
    }
    let mut scratch = vec![0.0; embeddings.cols()];
    let cc: Vec<Vec<f64>> = (0..k)
        .map(|i| center_distances(centers.matrix().row(i), centers.matrix(), hyper.p_norm, &mut scratch))
        .collect();
    let mut out = Vec::new();
    for anchor in 0..batch.len() {
        let y = batch.labels[anchor];
        let d = center_distances(embeddings.row(anchor), centers.matrix(), hyper.p_norm, &mut scratch);
        for n1 in (0..k).filter(|&c| c != y) {
            let first = ((d[y] - d[n1]) + hyper.alpha).max(0.0);
            for n2 in (0..k).filter(|&c| c != y && c != n1) {
                let second = ((d[y] - cc[n1][n2]) + hyper.beta).max(0.0);
                if first + second > 0.0 {
                    out.push((anchor, n1, n2));
                }
            }
        }
    }
    Ok(out)
}

/// Per position: one same-class pair when the class has another position
/// in the batch, and one different-class pair.
pub fn form_pairs<R: Rng + ?Sized>(batch: &BatchPlan, rng: &mut R) -> Result<Vec<Pair>> {
    let by_class = batch.positions_by_class(batch.num_classes_hint());
    require_classes(&by_class, 2, "pair formation")?;
    let mut out = Vec::with_capacity(2 * batch.len());
    for a in 0..batch.len() {
        let y = batch.labels[a];
        if let Some(b) = pick_positive(&by_class[y], a, rng) {
            out.push(Pair {
                a,
                b,
                same_class: true,
            });
        }
        let classes: Vec<usize> = (0..by_class.len())
            .filter(|&k| k != y && !by_class[k].is_empty())
            .collect();
        out.push(Pair {
            a,
            b: pick(&by_class[pick(&classes, rng)], rng),
            same_class: false,
        });
    }
    Ok(out)
}

/// Per anchor with an in-batch positive: two negatives from an ordered pair
/// of distinct other classes, all choices uniform.
pub fn form_quadruplets<R: Rng + ?Sized>(batch: &BatchPlan, rng: &mut R) -> Result<Vec<Quadruplet>> {
    let by_class = batch.positions_by_class(batch.num_classes_hint());
    require_classes(&by_class, 3, "quadruplet formation")?;
    let mut out = Vec::with_capacity(batch.len());
    for anchor in 0..batch.len() {
        let y = batch.labels[anchor];
        let Some(positive) = pick_positive(&by_class[y], anchor, rng) else {
            continue;
        };
        let mut classes: Vec<usize> = (0..by_class.len())
            .filter(|&k| k != y && !by_class[k].is_empty())
            .collect();
        let c1 = classes.remove(rng.gen_range(0..classes.len()));
        let c2 = pick(&classes, rng);
        out.push(Quadruplet {
            anchor,
            positive,
            negative1: pick(&by_class[c1], rng),
            negative2: pick(&by_class[c2], rng),
        });
    }
    Ok(out)
}

/// Random oversampling: each class contributes `max_k N_k` indices per
/// epoch, every member once plus draws with replacement to fill, shuffled.
pub fn oversample_indices<R: Rng + ?Sized>(index: &DatasetIndex, rng: &mut R) -> Vec<usize> {
    let target = index.classes.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::with_capacity(target * index.num_classes());
    for members in index.classes.iter().filter(|m| !m.is_empty()) {
        out.extend_from_slice(members);
        out.extend((members.len()..target).map(|_| members[rng.gen_range(0..members.len())]));
    }
    out.shuffle(rng);
    out
}
