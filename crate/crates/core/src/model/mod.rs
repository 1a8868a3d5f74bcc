//! Byte-level residual MLP language model.
//!
//! The model reads a window of `k` byte tokens, concatenates their embeddings,
//! and predicts the next byte:
//!
//! ```text
//! x      = [emb(t_1), ..., emb(t_k)]          (k*d)
//! z      = relu(W_in x)                       (h)
//! z      = z + relu(W_b z)   for each block b (h)
//! logits = W_out z                            (256)
//! ```
//!
//! There are no biases. The prunable layers are `W_in`, every hidden block and
//! `W_out`, in that order; the embedding table is never pruned.

mod batch;
mod checkpoint;
mod forward;
mod train;

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::NmMaskSet;
use crate::rng;

pub use batch::{CalibrationSet, TokenWindowBatch};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{forward_loss, gradient, layer_inputs, perplexity};
pub use train::{train_model, TrainHyper};

pub const VOCAB_SIZE: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_hidden_blocks: usize,
    /// Context tokens per prediction.
    pub window: usize,
    /// `M` of the N:M pattern; every prunable input dimension is a multiple of it.
    pub group_size: usize,
}

impl ModelConfig {
    /// d=32, h=64, 10 hidden blocks (12 prunable layers), k=8, M=4.
    pub fn desk() -> Self {
        ModelConfig {
            vocab_size: VOCAB_SIZE,
            embed_dim: 32,
            hidden_dim: 64,
            num_hidden_blocks: 10,
            window: 8,
            group_size: 4,
        }
    }

    /// d=4, h=8, 2 hidden blocks, k=4, M=4.
    pub fn tiny() -> Self {
        ModelConfig {
            vocab_size: VOCAB_SIZE,
            embed_dim: 4,
            hidden_dim: 8,
            num_hidden_blocks: 2,
            window: 4,
            group_size: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.vocab_size != VOCAB_SIZE {
            return bad("vocab_size must be 256 (byte-level)");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.window == 0 {
            return bad("embed_dim, hidden_dim and window must be >= 1");
        }
        if self.group_size < 2 {
            return bad("M (group_size) must be >= 2");
        }
        if !(self.window * self.embed_dim).is_multiple_of(self.group_size) {
            return bad("k*d not divisible by M");
        }
        if !self.hidden_dim.is_multiple_of(self.group_size) {
            return bad("h not divisible by M");
        }
        Ok(())
    }

    pub fn num_prunable_layers(&self) -> usize {
        self.num_hidden_blocks + 2
    }
}

/// Model weights, all in double precision.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// vocab × d
    pub embedding: Array2<f64>,
    /// h × (k·d)
    pub w_in: Array2<f64>,
    /// h × h each
    pub hidden: Vec<Array2<f64>>,
    /// vocab × h
    pub w_out: Array2<f64>,
}

/// Gradients share the parameter layout.
pub type GradientSet = ModelParams;

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let (d, h) = (config.embed_dim, config.hidden_dim);
        ModelParams {
            embedding: Array2::zeros((VOCAB_SIZE, d)),
            w_in: Array2::zeros((h, config.window * d)),
            hidden: (0..config.num_hidden_blocks)
                .map(|_| Array2::zeros((h, h)))
                .collect(),
            w_out: Array2::zeros((VOCAB_SIZE, h)),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_in.nrows()
    }

    pub fn window(&self) -> usize {
        self.w_in.ncols() / self.embed_dim().max(1)
    }

    pub fn num_prunable(&self) -> usize {
        self.hidden.len() + 2
    }

    pub fn prunable(&self, layer: usize) -> &Array2<f64> {
        match layer {
            0 => &self.w_in,
            l if l <= self.hidden.len() => &self.hidden[l - 1],
            l if l == self.hidden.len() + 1 => &self.w_out,
            l => panic!("prunable layer {l} out of range"),
        }
    }

    pub fn prunable_mut(&mut self, layer: usize) -> &mut Array2<f64> {
        let n_hidden = self.hidden.len();
        match layer {
            0 => &mut self.w_in,
            l if l <= n_hidden => &mut self.hidden[l - 1],
            l if l == n_hidden + 1 => &mut self.w_out,
            l => panic!("prunable layer {l} out of range"),
        }
    }

    pub fn prunable_layers(&self) -> Vec<&Array2<f64>> {
        (0..self.num_prunable()).map(|l| self.prunable(l)).collect()
    }

    pub fn layer_names(&self) -> Vec<String> {
        layer_names(self.hidden.len())
    }

    /// Number of prunable weights.
    pub fn prunable_count(&self) -> usize {
        self.prunable_layers().iter().map(|w| w.len()).sum()
    }

    /// Every tensor with its checkpoint name, embedding first.
    pub fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        out.extend(self.layer_names().into_iter().zip(self.prunable_layers()));
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        std::iter::once(&mut self.embedding)
            .chain(std::iter::once(&mut self.w_in))
            .chain(self.hidden.iter_mut())
            .chain(std::iter::once(&mut self.w_out))
    }

    pub(crate) fn tensors(&self) -> impl Iterator<Item = &Array2<f64>> {
        std::iter::once(&self.embedding)
            .chain(std::iter::once(&self.w_in))
            .chain(self.hidden.iter())
            .chain(std::iter::once(&self.w_out))
    }

    /// Shape check against a configuration.
    pub fn matches(&self, config: &ModelConfig) -> bool {
        let z = ModelParams::zeros(config);
        z.hidden.len() == self.hidden.len()
            && z.tensors()
                .zip(self.tensors())
                .all(|(a, b)| a.dim() == b.dim())
    }
}

pub fn layer_names(num_hidden_blocks: usize) -> Vec<String> {
    let mut names = vec!["W_in".to_string()];
    names.extend((0..num_hidden_blocks).map(|b| format!("hidden.{b}")));
    names.push("W_out".to_string());
    names
}

/// Seeded initialization: linear maps uniform on ±1/√fan_in, embedding on ±0.1.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = rng::seeded(seed);
    let mut params = ModelParams::zeros(config);
    params.embedding.mapv_inplace(|_| rng.gen_range(-0.1..=0.1));
    for layer in 0..params.num_prunable() {
        let w = params.prunable_mut(layer);
        let bound = 1.0 / (w.ncols() as f64).sqrt();
        w.mapv_inplace(|_| rng.gen_range(-bound..=bound));
    }
    Ok(params)
}

/// Zero every pruned position. The input is left untouched.
pub fn apply_masks(params: &ModelParams, masks: &NmMaskSet) -> Result<ModelParams> {
    if masks.layers.len() != params.num_prunable() {
        return Err(Error::input(format!(
            "mask set has {} layers, model has {} prunable layers",
            masks.layers.len(),
            params.num_prunable()
        )));
    }
    let mut out = params.clone();
    for (l, mask) in masks.layers.iter().enumerate() {
        let w = out.prunable_mut(l);
        if mask.keep.dim() != w.dim() {
            return Err(Error::input(format!(
                "mask for layer {l} has shape {:?}, weights have {:?}",
                mask.keep.dim(),
                w.dim()
            )));
        }
        ndarray::Zip::from(w).and(&mask.keep).for_each(|x, &k| {
            if !k {
                *x = 0.0;
            }
        });
    }
    Ok(out)
}
