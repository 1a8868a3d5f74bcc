#![allow(dead_code)]

use msp::model::{forward_loss, gradient, init_model, ModelConfig, ModelParams, TokenWindowBatch};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mean NLL computed with plain loops, independent of the library's matrix code.
pub fn reference_loss(p: &ModelParams, batch: &TokenWindowBatch) -> f64 {
    reference_forward(p, batch, true).0
}

/// Which ReLUs are active, sample by sample and unit by unit.
pub fn relu_pattern(p: &ModelParams, batch: &TokenWindowBatch) -> Vec<bool> {
    reference_forward(p, batch, false).1
}

fn reference_forward(
    p: &ModelParams,
    batch: &TokenWindowBatch,
    with_loss: bool,
) -> (f64, Vec<bool>) {
    let d = p.embedding.ncols();
    let h = p.w_in.nrows();
    let mut total = 0.0;
    let mut active = Vec::new();
    for i in 0..batch.len() {
        let mut x = Vec::new();
        for &t in batch.context(i) {
            for c in 0..d {
                x.push(p.embedding[[t as usize, c]]);
            }
        }
        let pre: Vec<f64> = (0..h)
            .map(|r| (0..x.len()).map(|c| p.w_in[[r, c]] * x[c]).sum::<f64>())
            .collect();
        active.extend(pre.iter().map(|&a| a > 0.0));
        let mut z: Vec<f64> = pre.iter().map(|a| a.max(0.0)).collect();
        for w in &p.hidden {
            let a: Vec<f64> = (0..h)
                .map(|r| (0..h).map(|c| w[[r, c]] * z[c]).sum::<f64>())
                .collect();
            active.extend(a.iter().map(|&v| v > 0.0));
            for r in 0..h {
                z[r] += a[r].max(0.0);
            }
        }
        if !with_loss {
            continue;
        }
        let logits: Vec<f64> = (0..p.w_out.nrows())
            .map(|r| (0..h).map(|c| p.w_out[[r, c]] * z[c]).sum::<f64>())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - logits[batch.targets()[i] as usize];
    }
    (total / batch.len() as f64, active)
}

pub fn random_batch(rng: &mut ChaCha8Rng, window: usize, size: usize) -> TokenWindowBatch {
    let contexts = (0..size)
        .map(|_| (0..window).map(|_| rng.gen_range(0..256u32)).collect())
        .collect();
    let targets = (0..size).map(|_| rng.gen_range(0..256u32)).collect();
    TokenWindowBatch::new(contexts, targets).unwrap()
}

fn tensor_mut(p: &mut ModelParams, i: usize) -> &mut Array2<f64> {
    let n = p.hidden.len();
    match i {
        0 => &mut p.embedding,
        1 => &mut p.w_in,
        i if i <= n + 1 => &mut p.hidden[i - 2],
        _ => &mut p.w_out,
    }
}

fn tensor(p: &ModelParams, i: usize) -> &Array2<f64> {
    let n = p.hidden.len();
    match i {
        0 => &p.embedding,
        1 => &p.w_in,
        i if i <= n + 1 => &p.hidden[i - 2],
        _ => &p.w_out,
    }
}

pub const FD_STEP: f64 = 1e-4;
pub const MIN_STEP: f64 = 1e-9;
pub const REL_FLOOR: f64 = 1e-6;

/// Largest relative error between the analytic gradient and central
/// differences over every parameter of one random tiny model and batch.
pub fn gradient_check_draw(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig::tiny();
    let mut p = init_model(&cfg, seed).unwrap();
    // larger weights than the default init so the gradient has some size everywhere
    for i in 0..p.num_prunable() + 1 {
        tensor_mut(&mut p, i).mapv_inplace(|w| w * 3.0);
    }
    let size = rng.gen_range(1..5);
    let batch = random_batch(&mut rng, cfg.window, size);
    let g = gradient(&p, &batch).unwrap();
    let base = relu_pattern(&p, &batch);
    let mut worst: f64 = 0.0;
    for t in 0..p.num_prunable() + 1 {
        let dims = tensor(&p, t).dim();
        for r in 0..dims.0 {
            for c in 0..dims.1 {
                let orig = tensor(&p, t)[[r, c]];
                let mut at = |delta: f64| {
                    tensor_mut(&mut p, t)[[r, c]] = orig + delta;
                    (
                        forward_loss(&p, &batch).unwrap(),
                        relu_pattern(&p, &batch) == base,
                    )
                };
                // The loss is only piecewise smooth: shrink the step until the
                // stencil stays inside one linear region of every ReLU.
                let mut h = FD_STEP;
                let numeric = loop {
                    let (l2, s2) = at(-2.0 * h);
                    let (l1, s1) = at(-h);
                    let (u1, t1) = at(h);
                    let (u2, t2) = at(2.0 * h);
                    if (s2 && s1 && t1 && t2) || h <= MIN_STEP {
                        // fourth-order central stencil
                        break (l2 - 8.0 * l1 + 8.0 * u1 - u2) / (12.0 * h);
                    }
                    h /= 10.0;
                };
                tensor_mut(&mut p, t)[[r, c]] = orig;
                let analytic = tensor(&g, t)[[r, c]];
                let rel =
                    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
                worst = worst.max(rel);
            }
        }
    }
    worst
}
