//! Model checkpoint file.
//!
//! ```text
//! magic    b"LOBM"
//! len      u32 little-endian byte length of the header
//! header   JSON: spec, seed, epoch, parameter names/shapes, batch-norm layers
//! payload  f32 little-endian: every parameter in header order, then each
//!          batch-norm layer's moving mean followed by its moving variance
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::model::{BnState, ModelSpec, Param, ParamSet};
use crate::tensor::Scalar;

pub const MAGIC: &[u8; 4] = b"LOBM";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub spec: ModelSpec,
    pub seed: u64,
    pub epoch: usize,
    pub params: Vec<(String, Vec<usize>)>,
    pub bn: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub params: ParamSet<f32>,
}

impl Checkpoint {
    pub fn new<F: Scalar>(spec: ModelSpec, seed: u64, epoch: usize, params: &ParamSet<F>) -> Self {
        let params = params.cast::<f32>();
        let header = Header {
            spec,
            seed,
            epoch,
            params: params.params.iter().map(|p| (p.name.clone(), p.shape.clone())).collect(),
            bn: params.bn.iter().map(|b| (b.name.clone(), b.mean.len())).collect(),
        };
        Checkpoint { header, params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + header.len() + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let floats = self.params.params.iter().flat_map(|p| p.data.iter());
        let moving = self.params.bn.iter().flat_map(|b| b.mean.iter().chain(&b.var));
        for x in floats.chain(moving) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| NnError::Checkpoint(m.to_string());
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = bytes.get(8..8 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let payload = &bytes[8 + len..];
        if !payload.len().is_multiple_of(4) {
            return Err(bad("payload not a whole number of f32"));
        }
        let mut floats = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()));
        let mut take = |n: usize| -> Result<Vec<f32>> {
            let v: Vec<f32> = floats.by_ref().take(n).collect();
            if v.len() == n {
                Ok(v)
            } else {
                Err(NnError::Checkpoint("truncated payload".into()))
            }
        };
        let mut params = ParamSet::empty();
        for (name, shape) in &header.params {
            let data = take(shape.iter().product())?;
            params.params.push(Param { name: name.clone(), shape: shape.clone(), data });
        }
        for (name, c) in &header.bn {
            let mean = take(*c)?;
            let var = take(*c)?;
            params.bn.push(BnState { name: name.clone(), mean, var });
        }
        if floats.next().is_some() {
            return Err(bad("trailing payload"));
        }
        Ok(Checkpoint { header, params })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| NnError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| NnError::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dims, Family, Head, Level};

    #[test]
    fn round_trip() {
        let dims = Dims { t: 8, l: 2, w: 4, d: 3, k: 2 };
        let spec = ModelSpec::new(Family::DeepVolL3, Level::L3, Head::Seq2Seq, dims).unwrap().with_widths(2, 2, 4);
        let params = ParamSet::<f32>::init(&spec, 9).unwrap();
        let ck = Checkpoint::new(spec, 9, 3, &params);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params, params);
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }
}
