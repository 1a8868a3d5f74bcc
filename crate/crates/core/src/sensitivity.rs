//! Per-layer sensitivity: Fisher-information traces, a finite-difference
//! Hessian-diagonal oracle, and 1-D loss landscapes along random directions.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward_loss, gradient, CalibrationSet, ModelParams};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub name: String,
    pub trace: f64,
    pub param_count: usize,
}

/// Sensitivity per prunable layer, in prunable-layer order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSensitivityReport {
    pub calib_size: usize,
    pub layers: Vec<LayerTrace>,
}

impl LayerSensitivityReport {
    pub fn traces(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.trace).collect()
    }

    pub fn total(&self) -> f64 {
        self.layers.iter().map(|l| l.trace).sum()
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("report serializes")
    }

    /// Layer indices from most to least sensitive.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.layers.len()).collect();
        idx.sort_by(|&a, &b| {
            self.layers[b]
                .trace
                .total_cmp(&self.layers[a].trace)
                .then(a.cmp(&b))
        });
        idx
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapePoint {
    pub epsilon: f64,
    pub delta_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeCurve {
    pub layer_name: String,
    pub points: Vec<LandscapePoint>,
    pub num_directions: usize,
}

/// `(1/N) Σ_n g_n²` elementwise over per-sample gradients.
///
/// Squares are taken per sample before averaging.
pub fn fisher_diagonal(per_sample_grads: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = per_sample_grads
        .first()
        .ok_or_else(|| Error::input("no per-sample gradients"))?;
    let mut acc = vec![0.0; first.len()];
    for g in per_sample_grads {
        if g.len() != acc.len() {
            return Err(Error::input("per-sample gradients differ in length"));
        }
        for (a, v) in acc.iter_mut().zip(g) {
            *a += v * v;
        }
    }
    let n = per_sample_grads.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Per-sample squared gradient norm of every prunable layer.
fn per_sample_layer_squares(params: &ModelParams, calib: &CalibrationSet) -> Result<Vec<Vec<f64>>> {
    calib
        .samples()
        .par_iter()
        .map(|sample| {
            let g = gradient(params, sample)?;
            Ok(g.prunable_layers()
                .iter()
                .map(|w| w.iter().map(|v| v * v).sum())
                .collect())
        })
        .collect()
}

/// Fisher-information trace of every prunable layer: the sum over the layer's
/// weights of the calibration mean of squared per-sample gradients.
pub fn fim_layer_traces(
    params: &ModelParams,
    calib: &CalibrationSet,
) -> Result<LayerSensitivityReport> {
    if calib.is_empty() {
        return Err(Error::input("empty calibration set"));
    }
    let per_sample = per_sample_layer_squares(params, calib)?;
    let n = calib.len() as f64;
    let mut traces = vec![0.0; params.num_prunable()];
    for sample in &per_sample {
        for (t, s) in traces.iter_mut().zip(sample) {
            *t += s;
        }
    }
    Ok(report(
        params,
        calib.len(),
        traces.into_iter().map(|t| t / n).collect(),
    ))
}

/// Fisher trace over all prunable weights, accumulated in a single pass.
pub fn fim_total_trace(params: &ModelParams, calib: &CalibrationSet) -> Result<f64> {
    if calib.is_empty() {
        return Err(Error::input("empty calibration set"));
    }
    let mut total = 0.0;
    for sample in calib.samples() {
        let g = gradient(params, sample)?;
        for w in g.prunable_layers() {
            total += w.iter().map(|v| v * v).sum::<f64>();
        }
    }
    Ok(total / calib.len() as f64)
}

fn report(params: &ModelParams, calib_size: usize, traces: Vec<f64>) -> LayerSensitivityReport {
    LayerSensitivityReport {
        calib_size,
        layers: params
            .layer_names()
            .into_iter()
            .zip(traces)
            .zip(params.prunable_layers())
            .map(|((name, trace), w)| LayerTrace {
                name,
                trace,
                param_count: w.len(),
            })
            .collect(),
    }
}

/// Central second difference of `f` along each coordinate, with per-coordinate
/// step `step · max(1, |θ_i|)`.
pub fn second_difference_diagonal<F>(f: F, theta: &mut [f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::input(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    let base = f(theta);
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = theta[i];
        let h = step * orig.abs().max(1.0);
        theta[i] = orig + h;
        let up = f(theta);
        theta[i] = orig - h;
        let down = f(theta);
        theta[i] = orig;
        out.push((up - 2.0 * base + down) / (h * h));
    }
    Ok(out)
}

/// Finite-difference Hessian-diagonal trace of the calibration loss per layer.
///
/// Costs two forward passes over the calibration set per weight; meant for
/// very small models only.
pub fn hessian_diag_fd(
    params: &ModelParams,
    calib: &CalibrationSet,
    step: f64,
) -> Result<LayerSensitivityReport> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::input(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    if calib.is_empty() {
        return Err(Error::input("empty calibration set"));
    }
    let batch = calib.as_batch();
    let base = forward_loss(params, &batch)?;
    let traces = (0..params.num_prunable())
        .into_par_iter()
        .map(|layer| {
            let mut p = params.clone();
            let (rows, cols) = p.prunable(layer).dim();
            let mut trace = 0.0;
            for r in 0..rows {
                for c in 0..cols {
                    let orig = p.prunable(layer)[[r, c]];
                    let h = step * orig.abs().max(1.0);
                    p.prunable_mut(layer)[[r, c]] = orig + h;
                    let up = forward_loss(&p, &batch)?;
                    p.prunable_mut(layer)[[r, c]] = orig - h;
                    let down = forward_loss(&p, &batch)?;
                    p.prunable_mut(layer)[[r, c]] = orig;
                    trace += (up - 2.0 * base + down) / (h * h);
                }
            }
            Ok(trace)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(report(params, calib.len(), traces))
}

fn rademacher(rng: &mut rng::Rng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

/// Mean of `f(θ + ε·d) − f(θ)` over `directions` Rademacher vectors `d`, per `ε`.
///
/// Each direction is probed antithetically, `(f(θ + ε·d) + f(θ − ε·d))/2 − f(θ)`.
/// Since `d` and `−d` are equally likely this estimates the same mean, but the
/// first-order term `ε·gᵀd` cancels and only the curvature `½ε²·dᵀHd` remains.
///
/// Direction `r` at epsilon index `e` comes from substream `(key, e, r)` of
/// `seed`. `ε = 0` yields exactly zero.
pub fn rademacher_landscape<F>(
    f: F,
    theta: &[f64],
    epsilons: &[f64],
    directions: usize,
    seed: u64,
    key: u64,
) -> Result<Vec<LandscapePoint>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if directions == 0 {
        return Err(Error::input("need at least one direction"));
    }
    let base = f(theta)?;
    epsilons
        .iter()
        .enumerate()
        .map(|(e, &eps)| {
            if eps == 0.0 {
                return Ok(LandscapePoint {
                    epsilon: eps,
                    delta_loss: 0.0,
                });
            }
            let deltas = (0..directions)
                .into_par_iter()
                .map(|r| {
                    let mut stream = rng::substream(seed, &[key, e as u64, r as u64]);
                    let d = rademacher(&mut stream, theta.len());
                    let plus: Vec<f64> = theta.iter().zip(&d).map(|(t, s)| t + eps * s).collect();
                    let minus: Vec<f64> = theta.iter().zip(&d).map(|(t, s)| t - eps * s).collect();
                    Ok(0.5 * (f(&plus)? + f(&minus)?) - base)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(LandscapePoint {
                epsilon: eps,
                delta_loss: deltas.iter().sum::<f64>() / directions as f64,
            })
        })
        .collect()
}

/// Loss landscape of one prunable layer on the calibration loss.
pub fn loss_landscape(
    params: &ModelParams,
    calib: &CalibrationSet,
    layer: usize,
    epsilons: &[f64],
    directions: usize,
    seed: u64,
) -> Result<LandscapeCurve> {
    if layer >= params.num_prunable() {
        return Err(Error::input(format!(
            "layer {layer} out of range (model has {} prunable layers)",
            params.num_prunable()
        )));
    }
    let batch = calib.as_batch();
    let shape = params.prunable(layer).dim();
    let theta: Vec<f64> = params.prunable(layer).iter().copied().collect();
    let loss_at = |w: &[f64]| {
        let mut p = params.clone();
        *p.prunable_mut(layer) =
            ndarray::Array2::from_shape_vec(shape, w.to_vec()).expect("layer shape preserved");
        forward_loss(&p, &batch)
    };
    let points = rademacher_landscape(loss_at, &theta, epsilons, directions, seed, layer as u64)?;
    Ok(LandscapeCurve {
        layer_name: params.layer_names()[layer].clone(),
        points,
        num_directions: directions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig, TokenWindowBatch};

    fn calib(text: &[u8], window: usize) -> CalibrationSet {
        CalibrationSet::from_batch(&TokenWindowBatch::all_windows(text, window).unwrap()).unwrap()
    }

    #[test]
    fn fisher_of_one_sample_is_gradient_squared() {
        assert_eq!(fisher_diagonal(&[vec![2.0]]).unwrap(), vec![4.0]);
    }

    #[test]
    fn fisher_squares_before_averaging() {
        let d = fisher_diagonal(&[vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(d, vec![5.0]);
        assert!(fisher_diagonal(&[]).is_err());
    }

    #[test]
    fn traces_are_nonnegative_and_sum_to_total() {
        let cfg = ModelConfig::tiny();
        let p = init_model(&cfg, 3).unwrap();
        let c = calib(b"calibration text with a few windows in it", cfg.window);
        let r = fim_layer_traces(&p, &c).unwrap();
        assert_eq!(r.layers.len(), 4);
        assert_eq!(r.calib_size, c.len());
        assert!(r.layers.iter().all(|l| l.trace >= 0.0));
        let total = fim_total_trace(&p, &c).unwrap();
        assert!((r.total() - total).abs() <= 1e-9 * total.abs());
        assert_eq!(r.layers[3].param_count, 256 * 8);
    }

    #[test]
    fn traces_ignore_duplication_and_order() {
        let cfg = ModelConfig::tiny();
        let p = init_model(&cfg, 3).unwrap();
        let batch =
            TokenWindowBatch::all_windows(b"calibration text, more of it", cfg.window).unwrap();
        let a = fim_layer_traces(&p, &CalibrationSet::from_batch(&batch).unwrap()).unwrap();
        let b =
            fim_layer_traces(&p, &CalibrationSet::from_batch(&batch.repeat(2)).unwrap()).unwrap();
        let mut reversed = batch.split_samples();
        reversed.reverse();
        let c = fim_layer_traces(&p, &CalibrationSet::new(reversed).unwrap()).unwrap();
        for ((x, y), z) in a.layers.iter().zip(&b.layers).zip(&c.layers) {
            assert!((x.trace - y.trace).abs() <= 1e-12 * x.trace.max(1e-300));
            assert!((x.trace - z.trace).abs() <= 1e-12 * x.trace.max(1e-300));
        }
    }

    #[test]
    fn second_differences_of_polynomials() {
        let h = second_difference_diagonal(|t| t[0] * t[0], &mut [0.7], 1e-3).unwrap();
        assert!((h[0] - 2.0).abs() < 1e-6);
        let h = second_difference_diagonal(|t| t[0].powi(3), &mut [1.0], 1e-3).unwrap();
        assert!((h[0] - 6.0).abs() < 1e-4);
        assert!(second_difference_diagonal(|t| t[0], &mut [1.0], 0.0).is_err());
    }

    #[test]
    fn second_differences_recover_quadratic_diagonal() {
        // f = ½ θᵀAθ with a symmetric A
        let a = [[3.0, 0.5, -1.0], [0.5, 2.0, 0.25], [-1.0, 0.25, 5.0]];
        let f = |t: &[f64]| {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += 0.5 * t[i] * a[i][j] * t[j];
                }
            }
            s
        };
        let h = second_difference_diagonal(f, &mut [0.3, -1.2, 2.5], 1e-3).unwrap();
        for i in 0..3 {
            assert!((h[i] - a[i][i]).abs() <= 1e-6 * a[i][i]);
        }
    }

    #[test]
    fn fd_rejects_bad_step() {
        let cfg = ModelConfig::tiny();
        let p = init_model(&cfg, 3).unwrap();
        let c = calib(b"calibration text", cfg.window);
        assert!(matches!(hessian_diag_fd(&p, &c, 0.0), Err(Error::Input(_))));
        assert!(matches!(
            hessian_diag_fd(&p, &c, -1.0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn quadratic_landscape() {
        let f = |t: &[f64]| Ok(0.5 * 2.0 * t[0] * t[0]);
        let pts = rademacher_landscape(f, &[0.0], &[0.0, 0.1], 7, 1, 0).unwrap();
        assert_eq!(pts[0].delta_loss, 0.0);
        assert!((pts[1].delta_loss - 0.01).abs() < 1e-15);
    }

    #[test]
    fn gradient_term_cancels() {
        // diagonal Hessian: dᵀHd = tr(H) for every sign pattern
        let f =
            |t: &[f64]| Ok(3.0 * t[0] - 5.0 * t[1] + 0.5 * (2.0 * t[0] * t[0] + 4.0 * t[1] * t[1]));
        let pts = rademacher_landscape(f, &[0.3, -0.2], &[0.1], 3, 5, 0).unwrap();
        assert!((pts[0].delta_loss - 0.5 * 0.01 * 6.0).abs() < 1e-12);
    }

    #[test]
    fn model_landscape_contract() {
        let cfg = ModelConfig::tiny();
        let p = init_model(&cfg, 3).unwrap();
        let c = calib(b"calibration text for landscape", cfg.window);
        let curve = loss_landscape(&p, &c, 1, &[-0.01, 0.0, 0.01], 4, 9).unwrap();
        assert_eq!(curve.layer_name, "hidden.0");
        assert_eq!(curve.points[1].delta_loss, 0.0);
        let again = loss_landscape(&p, &c, 1, &[-0.01, 0.0, 0.01], 4, 9).unwrap();
        assert_eq!(curve, again);
        assert!(loss_landscape(&p, &c, 4, &[0.0], 4, 9).is_err());
        assert!(loss_landscape(&p, &c, 0, &[0.0], 0, 9).is_err());
    }

    #[test]
    fn report_json_layout() {
        let r = LayerSensitivityReport {
            calib_size: 2,
            layers: vec![LayerTrace {
                name: "W_in".into(),
                trace: 1.5,
                param_count: 4,
            }],
        };
        let v: serde_json::Value = serde_json::from_slice(&r.to_json()).unwrap();
        assert_eq!(v["calib_size"], 2);
        assert_eq!(v["layers"][0]["name"], "W_in");
        assert_eq!(v["layers"][0]["trace"], 1.5);
        assert_eq!(v["layers"][0]["param_count"], 4);
    }
}
