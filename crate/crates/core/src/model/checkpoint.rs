use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

use super::{ModelConfig, ModelParams, ParamBlock};

pub const CHECKPOINT_FORMAT_VERSION: u64 = 1;

/// Adam moments, one vector per parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Everything needed to run a trained model, and to resume training
/// bit-exactly when `optimizer` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u64,
    pub config: ModelConfig,
    pub step: u64,
    pub seed: u64,
    /// Families the model was trained on.
    pub families: Vec<String>,
    /// Points kept per function when building prompts; `None` keeps all.
    pub tokens_per_function: Option<usize>,
    pub blocks: Vec<ParamBlock>,
    #[serde(default)]
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, step: u64, seed: u64, families: Vec<String>, tokens_per_function: Option<usize>) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: params.config,
            step,
            seed,
            families,
            tokens_per_function,
            blocks: params.blocks.clone(),
            optimizer: None,
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        let p = ModelParams {
            config: self.config,
            blocks: self.blocks.clone(),
        };
        p.check_layout()?;
        if let Some(name) = p.first_non_finite() {
            return Err(Error::NonFinite(format!("checkpoint block {name}")));
        }
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let head: serde_json::Value = serde_json::from_str(text)?;
        let version = head
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Parse {
                line: 1,
                msg: "checkpoint lacks format_version".into(),
            })?;
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        let ck: Checkpoint = serde_json::from_value(head)?;
        ck.params()?;
        if let Some(opt) = &ck.optimizer {
            let ok = opt.m.len() == ck.blocks.len()
                && opt.v.len() == ck.blocks.len()
                && ck
                    .blocks
                    .iter()
                    .zip(opt.m.iter().zip(&opt.v))
                    .all(|(b, (m, v))| m.len() == b.data.len() && v.len() == b.data.len());
            if !ok {
                return Err(Error::Sizing("optimizer state does not match parameter blocks".into()));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::randproc::RngStream;

    #[test]
    fn roundtrip_is_lossless() {
        let cfg = ModelConfig::with_dims(2, 2, 8, 2);
        let p = init_params(&cfg, &mut RngStream::new(9, 0)).unwrap();
        let mut ck = Checkpoint::new(&p, 3, 9, vec!["ode1_fwd".into()], Some(10));
        ck.optimizer = Some(OptimizerState {
            step: 3,
            m: p.blocks.iter().map(|b| b.data.iter().map(|x| x / 3.0).collect()).collect(),
            v: p.blocks.iter().map(|b| vec![1e-300; b.data.len()]).collect(),
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params().unwrap(), p);
    }

    #[test]
    fn version_and_shape_checks() {
        let cfg = ModelConfig::with_dims(1, 1, 4, 1);
        let p = init_params(&cfg, &mut RngStream::new(9, 0)).unwrap();
        let mut ck = Checkpoint::new(&p, 0, 0, vec![], None);
        ck.format_version = 7;
        assert!(matches!(
            Checkpoint::from_json(&ck.to_json().unwrap()),
            Err(Error::Version { found: 7, .. })
        ));
        ck.format_version = CHECKPOINT_FORMAT_VERSION;
        ck.blocks[3].data.pop();
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
    }
}
