use crate::centers::{predict_batch, CenterTable};
use crate::diffcore::{Checkpoint, Mlp, Tensor};
use crate::error::{Error, Result};
use crate::fingerprint;

/// A trained extractor with either class centers (nearest-center
/// prediction) or a linear head (argmax prediction).
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub extractor: Mlp,
    pub head: Option<Mlp>,
    pub centers: Option<CenterTable>,
    pub p_norm: u32,
}

impl Model {
    pub fn embed(&self, features: &Tensor) -> Result<Tensor> {
        self.extractor.embed(features)
    }

    /// Predicted class of every row of `features`. A head takes precedence
    /// over centers; ties go to the smallest class id either way.
    pub fn predict(&self, features: &Tensor) -> Result<Vec<usize>> {
        let emb = self.embed(features)?;
        if let Some(head) = &self.head {
            let logits = head.embed(&emb)?;
            return Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect());
        }
        let centers = self
            .centers
            .as_ref()
            .ok_or_else(|| Error::contract("model has neither a head nor class centers"))?;
        predict_batch(&emb, centers, self.p_norm)
    }

    pub fn num_classes(&self) -> Option<usize> {
        match (&self.head, &self.centers) {
            (Some(h), _) => Some(h.output_dim()),
            (None, Some(c)) => Some(c.num_classes()),
            _ => None,
        }
    }

    pub fn params_fingerprint(&self) -> u64 {
        fingerprint::of_tensors(self.extractor.params())
    }

    pub fn to_checkpoint(&self, epoch: u64, config_fingerprint: u64) -> Checkpoint {
        Checkpoint {
            extractor: self.extractor.clone(),
            head: self.head.clone(),
            centers: self.centers.clone(),
            epoch,
            config_fingerprint,
            p_norm: self.p_norm,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Self {
        Self {
            extractor: ck.extractor,
            head: ck.head,
            centers: ck.centers,
            p_norm: ck.p_norm,
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}
