use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::forward::loss_and_gradient;
use super::{ModelParams, TokenWindowBatch};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 0.1,
            epochs: 1,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Plain mini-batch SGD over shuffled windows of `corpus`.
///
/// Returns the trained parameters and the mean training loss of each epoch.
pub fn train_model(
    params: &ModelParams,
    corpus: &[u8],
    hyper: &TrainHyper,
) -> Result<(ModelParams, Vec<f64>)> {
    let k = params.window();
    if corpus.len() <= k + 1 {
        return Err(Error::input(format!(
            "corpus of {} bytes is too short for window {k}",
            corpus.len()
        )));
    }
    if hyper.batch_size == 0 {
        return Err(Error::input("batch_size must be >= 1"));
    }
    if !hyper.lr.is_finite() {
        return Err(Error::input("learning rate must be finite"));
    }

    let mut params = params.clone();
    let mut rng = rng::seeded(hyper.seed);
    let mut order: Vec<usize> = (0..corpus.len() - k).collect();
    let mut curve = Vec::with_capacity(hyper.epochs);

    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for starts in order.chunks(hyper.batch_size) {
            let batch = TokenWindowBatch::from_starts(corpus, k, starts)?;
            let (loss, grad) = loss_and_gradient(&params, &batch)?;
            loss_sum += loss * starts.len() as f64;
            for (w, g) in params.tensors_mut().zip(grad.tensors()) {
                w.scaled_add(-hyper.lr, g);
            }
        }
        curve.push(loss_sum / order.len() as f64);
    }
    Ok((params, curve))
}
