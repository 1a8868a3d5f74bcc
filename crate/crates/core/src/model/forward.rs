use ndarray::{Array2, ArrayView1, Axis, Zip};

use super::{apply_masks, GradientSet, ModelParams, TokenWindowBatch};
use crate::error::{Error, Result};
use crate::masks::NmMaskSet;

/// Windows per chunk when streaming a long sequence through the model.
const EVAL_CHUNK: usize = 512;

/// Activations kept for the backward pass.
struct Activations {
    /// Concatenated context embeddings, B × k·d.
    x: Array2<f64>,
    /// Pre-activations: `W_in x` then one per hidden block.
    pre: Vec<Array2<f64>>,
    /// Residual stream: `z[0] = relu(pre[0])`, `z[b+1] = z[b] + relu(pre[b+1])`.
    z: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

fn check_batch(params: &ModelParams, batch: &TokenWindowBatch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::input("empty batch"));
    }
    if batch.window() != params.window() {
        return Err(Error::input(format!(
            "batch window {} does not match model window {}",
            batch.window(),
            params.window()
        )));
    }
    Ok(())
}

fn relu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

fn embed(params: &ModelParams, batch: &TokenWindowBatch) -> Array2<f64> {
    let d = params.embed_dim();
    let k = batch.window();
    let mut x = Array2::zeros((batch.len(), k * d));
    for (i, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
        for (j, &tok) in batch.context(i).iter().enumerate() {
            row.slice_mut(ndarray::s![j * d..(j + 1) * d])
                .assign(&params.embedding.row(tok as usize));
        }
    }
    x
}

fn run(params: &ModelParams, batch: &TokenWindowBatch) -> Activations {
    let x = embed(params, batch);
    let a0 = x.dot(&params.w_in.t());
    let mut z = vec![relu(&a0)];
    let mut pre = vec![a0];
    for w in &params.hidden {
        let last = z.last().unwrap();
        let a = last.dot(&w.t());
        let next = last + &relu(&a);
        pre.push(a);
        z.push(next);
    }
    let logits = z.last().unwrap().dot(&params.w_out.t());
    Activations { x, pre, z, logits }
}

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Summed negative log-likelihood over the batch.
fn nll_sum(logits: &Array2<f64>, targets: &[u32]) -> f64 {
    logits
        .axis_iter(Axis(0))
        .zip(targets)
        .map(|(row, &t)| log_sum_exp(row) - row[t as usize])
        .sum()
}

/// Mean next-token negative log-likelihood.
pub fn forward_loss(params: &ModelParams, batch: &TokenWindowBatch) -> Result<f64> {
    check_batch(params, batch)?;
    let acts = run(params, batch);
    Ok(nll_sum(&acts.logits, batch.targets()) / batch.len() as f64)
}

/// Inputs seen by each prunable layer, in prunable-layer order (B × in_dim each).
pub fn layer_inputs(params: &ModelParams, batch: &TokenWindowBatch) -> Result<Vec<Array2<f64>>> {
    check_batch(params, batch)?;
    let Activations { x, z, .. } = run(params, batch);
    let mut inputs = vec![x];
    inputs.extend(z);
    Ok(inputs)
}

/// Exact gradient of [`forward_loss`] by reverse-mode differentiation.
pub fn gradient(params: &ModelParams, batch: &TokenWindowBatch) -> Result<GradientSet> {
    Ok(loss_and_gradient(params, batch)?.1)
}

pub(crate) fn loss_and_gradient(
    params: &ModelParams,
    batch: &TokenWindowBatch,
) -> Result<(f64, GradientSet)> {
    check_batch(params, batch)?;
    let acts = run(params, batch);
    let n = batch.len() as f64;
    let loss = nll_sum(&acts.logits, batch.targets()) / n;

    // d loss / d logits = (softmax - onehot) / B
    let mut dlogits = acts.logits;
    for (mut row, &t) in dlogits.axis_iter_mut(Axis(0)).zip(batch.targets()) {
        let lse = log_sum_exp(row.view());
        row.mapv_inplace(|v| (v - lse).exp() / n);
        row[t as usize] -= 1.0 / n;
    }

    let n_hidden = params.hidden.len();
    let w_out = dlogits.t().dot(&acts.z[n_hidden]);
    let mut dz = dlogits.dot(&params.w_out);

    let mut hidden = vec![Array2::zeros((0, 0)); n_hidden];
    for b in (0..n_hidden).rev() {
        let mut da = dz.clone();
        Zip::from(&mut da).and(&acts.pre[b + 1]).for_each(|g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
        hidden[b] = da.t().dot(&acts.z[b]);
        dz += &da.dot(&params.hidden[b]);
    }

    Zip::from(&mut dz).and(&acts.pre[0]).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
    let w_in = dz.t().dot(&acts.x);
    let dx = dz.dot(&params.w_in);

    let d = params.embed_dim();
    let mut embedding = Array2::zeros(params.embedding.dim());
    for (i, row) in dx.axis_iter(Axis(0)).enumerate() {
        for (j, &tok) in batch.context(i).iter().enumerate() {
            let mut e = embedding.row_mut(tok as usize);
            e += &row.slice(ndarray::s![j * d..(j + 1) * d]);
        }
    }

    Ok((
        loss,
        GradientSet {
            embedding,
            w_in,
            hidden,
            w_out,
        },
    ))
}

/// Summed NLL over every window of `tokens`, streamed in fixed chunks.
pub(crate) fn sequence_nll(params: &ModelParams, tokens: &[u8]) -> Result<(f64, usize)> {
    let k = params.window();
    if tokens.len() <= k {
        return Err(Error::input(format!(
            "sequence of {} tokens is too short for window {k}",
            tokens.len()
        )));
    }
    let count = tokens.len() - k;
    let mut total = 0.0;
    let mut start = 0;
    while start < count {
        let end = (start + EVAL_CHUNK).min(count);
        let starts: Vec<usize> = (start..end).collect();
        let batch = TokenWindowBatch::from_starts(tokens, k, &starts)?;
        let acts = run(params, &batch);
        total += nll_sum(&acts.logits, batch.targets());
        start = end;
    }
    Ok((total, count))
}

/// `exp(mean NLL)` over every window of `tokens`, optionally under masks.
pub fn perplexity(params: &ModelParams, tokens: &[u8], masks: Option<&NmMaskSet>) -> Result<f64> {
    let (total, count) = match masks {
        Some(m) => sequence_nll(&apply_masks(params, m)?, tokens)?,
        None => sequence_nll(params, tokens)?,
    };
    Ok((total / count as f64).exp())
}
