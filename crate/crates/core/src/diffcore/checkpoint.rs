//! Binary checkpoint container, format version 1.
//!
//! All integers and floats are little-endian. A string is a `u32` byte
//! length followed by UTF-8 bytes.
//!
//! ```text
//! magic        8 bytes   "PCCTCKPT"
//! version      u32       1
//! epoch        u64
//! fingerprint  u64       fingerprint of the effective training config
//! n_meta       u32
//!   key, value string, string
//! n_tensors    u32
//!   name       string
//!   ndim       u32
//!   dims       ndim x u64
//!   values     prod(dims) x f64
//! ```
//!
//! Tensor names: `extractor.w{i}`, `extractor.b{i}`, `head.w{i}`, `head.b{i}`,
//! `centers`. Metadata keys: `extractor.activation`, `head.activation`,
//! `centers.mode`, `centers.source_epoch`, `distance.p_norm` (2 when absent).

use std::collections::BTreeMap;
use std::path::Path;

use super::mlp::{Activation, Mlp};
use super::tensor::Tensor;
use crate::centers::{CenterMode, CenterTable};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PCCTCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub extractor: Mlp,
    pub head: Option<Mlp>,
    pub centers: Option<CenterTable>,
    pub epoch: u64,
    pub config_fingerprint: u64,
    /// Order of the L_p distance used for nearest-center prediction.
    pub p_norm: u32,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut meta: Vec<(String, String)> = vec![(
            "extractor.activation".into(),
            self.extractor.activation().name().into(),
        )];
        meta.push(("distance.p_norm".into(), self.p_norm.to_string()));
        let mut tensors: Vec<(String, &Tensor)> = Vec::new();
        push_mlp(&mut tensors, "extractor", &self.extractor);
        if let Some(head) = &self.head {
            meta.push(("head.activation".into(), head.activation().name().into()));
            push_mlp(&mut tensors, "head", head);
        }
        if let Some(c) = &self.centers {
            meta.push(("centers.mode".into(), c.mode().name().into()));
            if let Some(e) = c.source_epoch() {
                meta.push(("centers.source_epoch".into(), e.to_string()));
            }
            tensors.push(("centers".into(), c.matrix()));
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.config_fingerprint.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        for (k, v) in &meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            put_str(&mut out, &name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let epoch = r.u64()?;
        let config_fingerprint = r.u64()?;
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            meta.insert(k, v);
        }
        let mut tensors = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let dims = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.insert(name, Tensor::new(dims, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }

        let extractor = take_mlp(&mut tensors, &meta, "extractor")?
            .ok_or_else(|| Error::Format("checkpoint has no extractor".into()))?;
        let head = take_mlp(&mut tensors, &meta, "head")?;
        let centers = match tensors.remove("centers") {
            Some(matrix) => {
                let mode = CenterMode::from_name(
                    meta.get("centers.mode")
                        .ok_or_else(|| Error::Format("centers without mode".into()))?,
                )?;
                let source_epoch = meta
                    .get("centers.source_epoch")
                    .map(|s| {
                        s.parse::<usize>()
                            .map_err(|e| Error::Format(format!("centers.source_epoch: {e}")))
                    })
                    .transpose()?;
                Some(CenterTable::from_matrix(matrix, mode, source_epoch)?)
            }
            None => None,
        };
        let p_norm = match meta.get("distance.p_norm") {
            Some(s) => s
                .parse::<u32>()
                .ok()
                .filter(|&p| p > 0)
                .ok_or_else(|| Error::Format(format!("distance.p_norm: {s:?}")))?,
            None => 2,
        };
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Format(format!("unexpected tensor {extra:?}")));
        }
        Ok(Self {
            extractor,
            head,
            centers,
            epoch,
            config_fingerprint,
            p_norm,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn push_mlp<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, mlp: &'a Mlp) {
    for (i, (w, b)) in mlp.weights().iter().zip(mlp.biases()).enumerate() {
        out.push((format!("{prefix}.w{i}"), w));
        out.push((format!("{prefix}.b{i}"), b));
    }
}

fn take_mlp(
    tensors: &mut BTreeMap<String, Tensor>,
    meta: &BTreeMap<String, String>,
    prefix: &str,
) -> Result<Option<Mlp>> {
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    while let Some(w) = tensors.remove(&format!("{prefix}.w{}", weights.len())) {
        let b = tensors
            .remove(&format!("{prefix}.b{}", weights.len()))
            .ok_or_else(|| Error::Format(format!("{prefix}: weight without bias")))?;
        weights.push(w);
        biases.push(b);
    }
    if weights.is_empty() {
        return Ok(None);
    }
    let activation = Activation::from_name(
        meta.get(&format!("{prefix}.activation"))
            .map(String::as_str)
            .unwrap_or("relu"),
    )?;
    Mlp::from_parts(weights, biases, activation).map(Some)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|e| Error::Format(format!("invalid UTF-8 string: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let extractor = Mlp::new(&[5, 7, 3], Activation::Relu, &mut rng).unwrap();
        let head = Mlp::new(&[3, 4], Activation::Relu, &mut rng).unwrap();
        let centers = CenterTable::from_matrix(
            Tensor::new(vec![4, 3], (0..12).map(|i| i as f64 / 7.0).collect()).unwrap(),
            CenterMode::Computed,
            Some(17),
        )
        .unwrap();
        Checkpoint {
            extractor,
            head: Some(head),
            centers: Some(centers),
            epoch: 42,
            config_fingerprint: 0xdead_beef_0123_4567,
            p_norm: 3,
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let x = Tensor::new(vec![2, 5], (0..10).map(|i| (i as f64).cos()).collect()).unwrap();
        assert_eq!(
            back.extractor.embed(&x).unwrap().data(),
            ck.extractor.embed(&x).unwrap().data()
        );
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut trailing = bytes;
        trailing.push(0);
        assert!(Checkpoint::from_bytes(&trailing).is_err());
    }
}
