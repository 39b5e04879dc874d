//! Encoder-only transformer over prompt tokens, with a hand-written
//! reverse pass.

mod checkpoint;
mod net;
mod tensor;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::FEATURE_WIDTH;
use crate::randproc::RngStream;

pub use checkpoint::{Checkpoint, OptimizerState, CHECKPOINT_FORMAT_VERSION};
pub use net::{forward, grad, loss, loss_and_grad};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    /// Width of each attention head. Q, K and V project to
    /// `heads * head_dim` and an output projection maps back to
    /// `model_dim`.
    pub head_dim: usize,
    pub model_dim: usize,
    /// Feed-forward hidden width is `widening * model_dim`.
    pub widening: usize,
    /// Must be zero; kept so configs from other tools parse.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_dims(6, 8, 256, 4)
    }
}

impl ModelConfig {
    /// Head width derived as `model_dim / heads`.
    pub fn with_dims(layers: usize, heads: usize, model_dim: usize, widening: usize) -> Self {
        Self {
            layers,
            heads,
            head_dim: if heads == 0 { 0 } else { model_dim / heads },
            model_dim,
            widening,
            dropout: 0.0,
        }
    }

    /// 4 layers, 4 heads, width 64.
    pub fn toy() -> Self {
        Self::with_dims(4, 4, 64, 4)
    }

    pub fn hidden_dim(&self) -> usize {
        self.widening * self.model_dim
    }

    pub fn attn_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.head_dim == 0 || self.model_dim == 0 || self.widening == 0 {
            return Err(Error::InvalidInput(format!("model sizes must be positive: {self:?}")));
        }
        if self.dropout != 0.0 {
            return Err(Error::InvalidInput(format!(
                "dropout is not supported, got rate {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamBlock {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name,
            shape,
            data: vec![0.0; n],
        }
    }
}

/// Blocks per transformer layer, in storage order.
const LAYER_BLOCKS: [&str; 16] = [
    "ln1.scale", "ln1.shift", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
    "attn.wo", "attn.bo", "ln2.scale", "ln2.shift", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2",
];

pub(crate) mod slot {
    pub const LN1_G: usize = 0;
    pub const LN1_B: usize = 1;
    pub const WQ: usize = 2;
    pub const BQ: usize = 3;
    pub const WK: usize = 4;
    pub const BK: usize = 5;
    pub const WV: usize = 6;
    pub const BV: usize = 7;
    pub const WO: usize = 8;
    pub const BO: usize = 9;
    pub const LN2_G: usize = 10;
    pub const LN2_B: usize = 11;
    pub const W1: usize = 12;
    pub const B1: usize = 13;
    pub const W2: usize = 14;
    pub const B2: usize = 15;
}

/// Named parameter blocks: embedding, per-layer blocks, final layer norm
/// and readout. Also used to hold gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub blocks: Vec<ParamBlock>,
}

impl ModelParams {
    /// All-zero parameters with the layout of `config`.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (d, a, h) = (config.model_dim, config.attn_dim(), config.hidden_dim());
        let mut blocks = vec![
            ParamBlock::zeros("embed.w".into(), vec![FEATURE_WIDTH, d]),
            ParamBlock::zeros("embed.b".into(), vec![d]),
        ];
        for l in 0..config.layers {
            for name in LAYER_BLOCKS {
                let shape = match name {
                    "attn.wq" | "attn.wk" | "attn.wv" => vec![d, a],
                    "attn.bq" | "attn.bk" | "attn.bv" => vec![a],
                    "attn.wo" => vec![a, d],
                    "ffn.w1" => vec![d, h],
                    "ffn.b1" => vec![h],
                    "ffn.w2" => vec![h, d],
                    _ => vec![d],
                };
                blocks.push(ParamBlock::zeros(format!("layer{l}.{name}"), shape));
            }
        }
        blocks.push(ParamBlock::zeros("final_ln.scale".into(), vec![d]));
        blocks.push(ParamBlock::zeros("final_ln.shift".into(), vec![d]));
        blocks.push(ParamBlock::zeros("readout.w".into(), vec![d, 1]));
        blocks.push(ParamBlock::zeros("readout.b".into(), vec![1]));
        Ok(Self { config, blocks })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            blocks: self
                .blocks
                .iter()
                .map(|b| ParamBlock::zeros(b.name.clone(), b.shape.clone()))
                .collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.blocks.iter().map(|b| b.data.len()).sum()
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut ParamBlock> {
        self.blocks.iter_mut().find(|b| b.name == name)
    }

    pub(crate) fn layer(&self, l: usize, s: usize) -> &[f64] {
        &self.blocks[2 + 16 * l + s].data
    }

    pub(crate) fn tail(&self, i: usize) -> &[f64] {
        &self.blocks[2 + 16 * self.config.layers + i].data
    }

    /// Name of the first block holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.blocks
            .iter()
            .find(|b| b.data.iter().any(|v| !v.is_finite()))
            .map(|b| b.name.as_str())
    }

    /// Checks that block names and shapes match the layout of `config`.
    pub fn check_layout(&self) -> Result<()> {
        let expected = Self::zeros(self.config)?;
        if expected.blocks.len() != self.blocks.len() {
            return Err(Error::Sizing(format!(
                "expected {} parameter blocks, found {}",
                expected.blocks.len(),
                self.blocks.len()
            )));
        }
        for (e, b) in expected.blocks.iter().zip(&self.blocks) {
            if e.name != b.name || e.shape != b.shape || e.data.len() != b.data.len() {
                return Err(Error::Sizing(format!(
                    "block {} {:?} does not match expected {} {:?}",
                    b.name, b.shape, e.name, e.shape
                )));
            }
        }
        Ok(())
    }

    /// `self += other`, block by block.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for b in &mut self.blocks {
            for x in &mut b.data {
                *x *= s;
            }
        }
    }
}

/// Glorot-uniform matrices, zero biases, unit layer-norm scales.
pub fn init_params(config: &ModelConfig, rng: &mut RngStream) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(*config)?;
    for b in &mut p.blocks {
        if b.shape.len() == 2 {
            let limit = (6.0 / (b.shape[0] + b.shape[1]) as f64).sqrt();
            for x in &mut b.data {
                *x = rng.uniform_range(-limit, limit);
            }
        } else if b.name.ends_with(".scale") {
            b.data.fill(1.0);
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_bounds_and_moments() {
        let cfg = ModelConfig::with_dims(1, 2, 64, 4);
        let p = init_params(&cfg, &mut RngStream::new(3, 0)).unwrap();
        for b in &p.blocks {
            if b.shape.len() == 2 {
                let lim = (6.0 / (b.shape[0] + b.shape[1]) as f64).sqrt();
                assert!(b.data.iter().all(|x| x.abs() <= lim), "{}", b.name);
            } else if b.name.ends_with(".scale") {
                assert!(b.data.iter().all(|&x| x == 1.0));
            } else {
                assert!(b.data.iter().all(|&x| x == 0.0));
            }
        }
        let w = p.block("layer0.ffn.w1").unwrap();
        let n = w.data.len() as f64;
        let mean = w.data.iter().sum::<f64>() / n;
        let var = w.data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let expected = 2.0 / (64.0 + 256.0);
        assert!((var / expected - 1.0).abs() < 0.1, "{var} vs {expected}");
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::toy();
        let a = init_params(&cfg, &mut RngStream::new(5, 0)).unwrap();
        let b = init_params(&cfg, &mut RngStream::new(5, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn default_dims() {
        let c = ModelConfig::default();
        assert_eq!((c.layers, c.heads, c.model_dim, c.widening), (6, 8, 256, 4));
        assert_eq!(c.hidden_dim(), 1024);
        assert_eq!(c.head_dim, 32);
        let mut wide = c;
        wide.head_dim = 256;
        let p = ModelParams::zeros(wide).unwrap();
        assert_eq!(p.block("layer0.attn.wo").unwrap().shape, vec![2048, 256]);
        let mut bad = c;
        bad.dropout = 0.1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn layout_accessors() {
        let p = ModelParams::zeros(ModelConfig::with_dims(2, 2, 8, 2)).unwrap();
        assert_eq!(p.blocks[2 + 16 + slot::W1].name, "layer1.ffn.w1");
        assert_eq!(p.blocks[2 + 32 + 2].name, "readout.w");
        p.check_layout().unwrap();
    }
}
