//! JSON checkpoint container.
//!
//! ```json
//! {
//!   "format": "lyapgen-icnn",
//!   "version": 1,
//!   "n_in": 2, "n_state": 2, "hidden": [128, 128],
//!   "smoothing": 0.1, "margin": 0.001,
//!   "tensors": [{"name": "layer0.wx", "shape": [128, 2], "data": [...]}, ...]
//! }
//! ```
//!
//! Tensors are row-major and listed in layout order: for each hidden layer
//! `layerK.wz` (absent for K = 0), `layerK.wx`, `layerK.b`, then `out.wz`,
//! `out.wx`, `out.b`.

use std::path::Path;

use super::{Icnn, LyapunovNet, SmoothedRelu};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "lyapgen-icnn";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub n_in: usize,
    pub n_state: usize,
    pub hidden: Vec<usize>,
    pub smoothing: f64,
    pub margin: f64,
    pub tensors: Vec<NamedTensor>,
}

impl LyapunovNet {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let tensors = self
            .g
            .tensors()
            .iter()
            .map(|t| NamedTensor { name: t.name.clone(), shape: [t.rows, t.cols], data: self.g.params[t.range()].to_vec() })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            n_in: self.n_in(),
            n_state: self.n_state,
            hidden: self.g.hidden().to_vec(),
            smoothing: self.sigma.d,
            margin: self.eps,
            tensors,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        if !(ck.smoothing > 0.0) || !(ck.margin >= 0.0) || ck.n_state > ck.n_in {
            return Err(Error::Checkpoint("invalid smoothing, margin or state size".into()));
        }
        let sigma = SmoothedRelu::new(ck.smoothing);
        let template = Icnn::from_params(ck.n_in, &ck.hidden, sigma, vec![0.0; expected_len(ck)])?;
        let specs = template.tensors();
        if specs.len() != ck.tensors.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {}", specs.len(), ck.tensors.len())));
        }
        let mut params = Vec::with_capacity(template.num_params());
        for (spec, t) in specs.iter().zip(&ck.tensors) {
            if spec.name != t.name || [spec.rows, spec.cols] != t.shape || t.data.len() != spec.len() {
                return Err(Error::Checkpoint(format!("tensor `{}` does not match layout entry `{}`", t.name, spec.name)));
            }
            if spec.nonneg && t.data.iter().any(|v| *v < 0.0) {
                return Err(Error::Checkpoint(format!("tensor `{}` must be nonnegative", t.name)));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("tensor `{}` has non-finite entries", t.name)));
            }
            params.extend_from_slice(&t.data);
        }
        let g = Icnn::from_params(ck.n_in, &ck.hidden, sigma, params)?;
        Ok(LyapunovNet { g, sigma, eps: ck.margin, n_state: ck.n_state })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(&ck)
    }
}

fn expected_len(ck: &Checkpoint) -> usize {
    let mut total = 0;
    let mut prev = 0;
    for (k, &w) in ck.hidden.iter().chain(std::iter::once(&1)).enumerate() {
        total += w * ck.n_in + w + if k > 0 { w * prev } else { 0 };
        prev = w;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::NetConfig;

    #[test]
    fn json_round_trip_is_exact() {
        let net = LyapunovNet::new(3, 2, &[5, 4], NetConfig::default(), 8);
        let text = serde_json::to_string(&net.to_checkpoint()).unwrap();
        let back = LyapunovNet::from_checkpoint(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.g.params, net.g.params);
        assert_eq!(back.n_state, 2);
        let x = [0.3, -0.1, 0.8];
        assert_eq!(back.forward(&x), net.forward(&x));
    }

    #[test]
    fn rejects_mismatched_tensors() {
        let net = LyapunovNet::new(2, 2, &[4], NetConfig::default(), 1);
        let mut ck = net.to_checkpoint();
        ck.tensors[0].data.pop();
        assert!(LyapunovNet::from_checkpoint(&ck).is_err());
        let mut ck = net.to_checkpoint();
        ck.version = 99;
        assert!(LyapunovNet::from_checkpoint(&ck).is_err());
        let mut ck = net.to_checkpoint();
        let wz = ck.tensors.iter_mut().find(|t| t.name == "out.wz").unwrap();
        wz.data[0] = -1.0;
        assert!(LyapunovNet::from_checkpoint(&ck).is_err());
    }
}
