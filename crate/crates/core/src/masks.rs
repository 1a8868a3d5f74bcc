//! N:M structured masks from pluggable importance scores.
//!
//! Convention: `n` counts the weights PRUNED in each group of `M` consecutive
//! input columns of a row, so `3:4` means 75% sparsity. Within a group the `n`
//! lowest-scoring weights are pruned; equal scores prune the lower column first.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evo::SparsityIndividual;
use crate::model::{layer_inputs, CalibrationSet, ModelParams};

/// Importance metric used to rank weights inside a group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// `|W|`
    Magnitude,
    /// `|W| · ||X_j||₂`
    Wanda,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "magnitude" => Ok(Metric::Magnitude),
            "wanda" => Ok(Metric::Wanda),
            other => Err(Error::input(format!(
                "unknown metric {other:?} (expected magnitude or wanda)"
            ))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Magnitude => "magnitude",
            Metric::Wanda => "wanda",
        })
    }
}

/// One non-negative score matrix per prunable layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub layers: Vec<Array2<f64>>,
}

/// Per prunable layer, the ℓ2 norm of each input feature over calibration inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationNorms {
    pub layers: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerMask {
    /// `true` = weight kept.
    pub keep: Array2<bool>,
    /// Weights pruned per group.
    pub n: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NmMaskSet {
    pub layers: Vec<LayerMask>,
    pub group_size: u32,
}

/// First place where a mask set breaks its N:M contract.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MaskViolation {
    LayerCount {
        masks: usize,
        genes: usize,
    },
    GroupSize {
        masks: u32,
        individual: u32,
    },
    Columns {
        layer: usize,
        cols: usize,
    },
    PrunedCount {
        layer: usize,
        mask_n: u32,
        gene: u32,
    },
    Group {
        layer: usize,
        row: usize,
        group: usize,
        kept: usize,
        expected: usize,
    },
}

impl fmt::Display for MaskViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskViolation::LayerCount { masks, genes } => {
                write!(f, "{masks} mask layers for {genes} genes")
            }
            MaskViolation::GroupSize { masks, individual } => {
                write!(
                    f,
                    "mask group size {masks} differs from individual M {individual}"
                )
            }
            MaskViolation::Columns { layer, cols } => {
                write!(f, "layer {layer}: {cols} columns not divisible by M")
            }
            MaskViolation::PrunedCount {
                layer,
                mask_n,
                gene,
            } => {
                write!(
                    f,
                    "layer {layer}: mask built for n={mask_n}, gene is {gene}"
                )
            }
            MaskViolation::Group {
                layer,
                row,
                group,
                kept,
                expected,
            } => write!(
                f,
                "layer {layer} row {row} group {group}: {kept} kept, expected {expected}"
            ),
        }
    }
}

pub fn column_l2_norms(inputs: &Array2<f64>) -> Vec<f64> {
    inputs
        .axis_iter(Axis(1))
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// Input-feature norms of every prunable layer under the dense model.
pub fn collect_activation_norms(
    params: &ModelParams,
    calib: &CalibrationSet,
) -> Result<ActivationNorms> {
    if calib.is_empty() {
        return Err(Error::input("empty calibration set"));
    }
    let inputs = layer_inputs(params, &calib.as_batch())?;
    Ok(ActivationNorms {
        layers: inputs.iter().map(column_l2_norms).collect(),
    })
}

pub fn magnitude_scores(params: &ModelParams) -> ScoreSet {
    ScoreSet {
        layers: params
            .prunable_layers()
            .into_iter()
            .map(|w| w.mapv(f64::abs))
            .collect(),
    }
}

pub fn wanda_scores(params: &ModelParams, norms: &ActivationNorms) -> Result<ScoreSet> {
    let layers = params.prunable_layers();
    if norms.layers.len() != layers.len() {
        return Err(Error::input(format!(
            "{} activation-norm vectors for {} prunable layers",
            norms.layers.len(),
            layers.len()
        )));
    }
    layers
        .into_iter()
        .zip(&norms.layers)
        .enumerate()
        .map(|(l, (w, norm))| {
            if norm.len() != w.ncols() {
                return Err(Error::input(format!(
                    "layer {l}: {} norms for {} input features",
                    norm.len(),
                    w.ncols()
                )));
            }
            Ok(Array2::from_shape_fn(w.dim(), |(i, j)| {
                w[[i, j]].abs() * norm[j]
            }))
        })
        .collect::<Result<Vec<_>>>()
        .map(|layers| ScoreSet { layers })
}

/// Scores for `metric`; activation norms are collected from `calib` when needed.
pub fn metric_scores(
    metric: Metric,
    params: &ModelParams,
    calib: &CalibrationSet,
) -> Result<ScoreSet> {
    match metric {
        Metric::Magnitude => Ok(magnitude_scores(params)),
        Metric::Wanda => wanda_scores(params, &collect_activation_norms(params, calib)?),
    }
}

/// Keep-matrix pruning the `n` lowest scores in each row-wise group of `m` columns.
pub fn build_nm_mask(scores: ArrayView2<f64>, n: u32, m: u32) -> Result<Array2<bool>> {
    let (mu, nu) = (m as usize, n as usize);
    if m == 0 || n > m {
        return Err(Error::input(format!("need 0 <= n <= M, got n={n}, M={m}")));
    }
    if !scores.ncols().is_multiple_of(mu) {
        return Err(Error::input(format!(
            "{} columns not divisible by M={m}",
            scores.ncols()
        )));
    }
    let mut keep = Array2::from_elem(scores.dim(), true);
    let mut order: Vec<usize> = Vec::with_capacity(mu);
    for (row, mut keep_row) in scores.axis_iter(Axis(0)).zip(keep.axis_iter_mut(Axis(0))) {
        for g in 0..row.len() / mu {
            let base = g * mu;
            order.clear();
            order.extend(0..mu);
            order.sort_by(|&a, &b| row[base + a].total_cmp(&row[base + b]).then(a.cmp(&b)));
            for &j in &order[..nu] {
                keep_row[base + j] = false;
            }
        }
    }
    Ok(keep)
}

pub fn build_maskset(scores: &ScoreSet, individual: &SparsityIndividual) -> Result<NmMaskSet> {
    if scores.layers.len() != individual.genes.len() {
        return Err(Error::input(format!(
            "{} score layers for an individual with {} genes",
            scores.layers.len(),
            individual.genes.len()
        )));
    }
    let layers = scores
        .layers
        .par_iter()
        .zip(individual.genes.par_iter())
        .map(|(s, &n)| {
            Ok(LayerMask {
                keep: build_nm_mask(s.view(), n, individual.m)?,
                n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NmMaskSet {
        layers,
        group_size: individual.m,
    })
}

/// Exhaustive check that every group keeps exactly `M - n_l` weights.
pub fn verify_maskset(
    masks: &NmMaskSet,
    individual: &SparsityIndividual,
) -> std::result::Result<(), MaskViolation> {
    if masks.layers.len() != individual.genes.len() {
        return Err(MaskViolation::LayerCount {
            masks: masks.layers.len(),
            genes: individual.genes.len(),
        });
    }
    if masks.group_size != individual.m {
        return Err(MaskViolation::GroupSize {
            masks: masks.group_size,
            individual: individual.m,
        });
    }
    let m = masks.group_size as usize;
    for (layer, (mask, &gene)) in masks.layers.iter().zip(&individual.genes).enumerate() {
        if mask.n != gene {
            return Err(MaskViolation::PrunedCount {
                layer,
                mask_n: mask.n,
                gene,
            });
        }
        if m == 0 || mask.keep.ncols() % m != 0 {
            return Err(MaskViolation::Columns {
                layer,
                cols: mask.keep.ncols(),
            });
        }
        let expected = m.saturating_sub(gene as usize);
        for (row, keep) in mask.keep.axis_iter(Axis(0)).enumerate() {
            for (group, chunk) in keep
                .as_slice()
                .expect("standard layout")
                .chunks(m)
                .enumerate()
            {
                let kept = chunk.iter().filter(|&&k| k).count();
                if kept != expected {
                    return Err(MaskViolation::Group {
                        layer,
                        row,
                        group,
                        kept,
                        expected,
                    });
                }
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct LayerMaskFile<'a> {
    name: &'a str,
    n: u32,
    #[serde(rename = "M")]
    m: u32,
    keep: Vec<Vec<u8>>,
}

/// Mask export: a JSON array of `{"name", "n", "M", "keep": [[0/1, ...], ...]}`.
pub fn masks_to_json(masks: &NmMaskSet, names: &[String]) -> Vec<u8> {
    let layers: Vec<LayerMaskFile> = masks
        .layers
        .iter()
        .zip(names)
        .map(|(mask, name)| LayerMaskFile {
            name,
            n: mask.n,
            m: masks.group_size,
            keep: mask
                .keep
                .axis_iter(Axis(0))
                .map(|r| r.iter().map(|&k| k as u8).collect())
                .collect(),
        })
        .collect();
    serde_json::to_vec(&layers).expect("masks serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig, TokenWindowBatch};
    use ndarray::array;
    use proptest::prelude::*;

    /// Published 40-layer allocation at 50% sparsity with M=4.
    const REFERENCE_50_M4: [u32; 40] = [
        2, 1, 2, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 3, 2, 3, 2, 2, 2,
        2, 2, 3, 2, 2, 2, 3, 2, 2, 2,
    ];

    fn ind(genes: Vec<u32>, m: u32) -> SparsityIndividual {
        let target = genes.iter().sum::<u32>() / genes.len() as u32;
        SparsityIndividual::new(genes, m, target).unwrap()
    }

    #[test]
    fn group_keeps_top_scores() {
        let s = array![[0.9, 0.1, 0.5, 0.7]];
        let k = build_nm_mask(s.view(), 3, 4).unwrap();
        assert_eq!(k, array![[true, false, false, false]]);
        assert!(build_nm_mask(s.view(), 0, 4).unwrap().iter().all(|&b| b));
        assert!(build_nm_mask(s.view(), 4, 4).unwrap().iter().all(|&b| !b));
    }

    #[test]
    fn ties_prune_lowest_column() {
        let s = array![[1.0, 1.0, 1.0, 1.0, 0.0, 2.0, 2.0, 0.0]];
        let k = build_nm_mask(s.view(), 2, 4).unwrap();
        assert_eq!(
            k,
            array![[false, false, true, true, false, true, true, false]]
        );
    }

    #[test]
    fn bad_shapes_are_rejected() {
        let s = array![[1.0, 2.0, 3.0]];
        assert!(build_nm_mask(s.view(), 1, 4).is_err());
        let s = array![[1.0, 2.0, 3.0, 4.0]];
        assert!(build_nm_mask(s.view(), 5, 4).is_err());
    }

    #[test]
    fn wanda_example() {
        let w = array![[1.0, -2.0], [3.0, 0.5]];
        let mut p = crate::model::ModelParams::zeros(&ModelConfig::tiny());
        p.w_in = w.clone();
        let mut norms = ActivationNorms {
            layers: p
                .prunable_layers()
                .iter()
                .map(|w| vec![1.0; w.ncols()])
                .collect(),
        };
        norms.layers[0] = vec![2.0, 3.0];
        let s = wanda_scores(&p, &norms).unwrap();
        assert_eq!(s.layers[0], array![[2.0, 6.0], [6.0, 1.5]]);
        norms.layers[0] = vec![1.0; 3];
        assert!(wanda_scores(&p, &norms).is_err());
    }

    #[test]
    fn wanda_with_unit_and_zero_norms() {
        let p = init_model(&ModelConfig::tiny(), 3).unwrap();
        let ones = ActivationNorms {
            layers: p
                .prunable_layers()
                .iter()
                .map(|w| vec![1.0; w.ncols()])
                .collect(),
        };
        assert_eq!(wanda_scores(&p, &ones).unwrap(), magnitude_scores(&p));
        let zeros = ActivationNorms {
            layers: p
                .prunable_layers()
                .iter()
                .map(|w| vec![0.0; w.ncols()])
                .collect(),
        };
        let s = wanda_scores(&p, &zeros).unwrap();
        assert!(s.layers.iter().all(|l| l.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn magnitude_is_absolute_value() {
        let mut p = crate::model::ModelParams::zeros(&ModelConfig::tiny());
        p.w_in[[0, 0]] = -2.0;
        let s = magnitude_scores(&p);
        assert_eq!(s.layers[0][[0, 0]], 2.0);
        assert_eq!(s.layers[0][[0, 1]], 0.0);
    }

    #[test]
    fn column_norms_example() {
        assert_eq!(
            column_l2_norms(&array![[3.0, 0.0], [4.0, 0.0]]),
            vec![5.0, 0.0]
        );
    }

    #[test]
    fn activation_norms_zero_model_and_duplication() {
        let cfg = ModelConfig::tiny();
        let batch =
            TokenWindowBatch::all_windows(b"some calibration text here", cfg.window).unwrap();
        let calib = CalibrationSet::from_batch(&batch).unwrap();
        let zero = crate::model::ModelParams::zeros(&cfg);
        let n = collect_activation_norms(&zero, &calib).unwrap();
        assert!(n.layers[0].iter().all(|&v| v == 0.0));

        let p = init_model(&cfg, 4).unwrap();
        let once = collect_activation_norms(&p, &calib).unwrap();
        let twice_calib = CalibrationSet::from_batch(&batch.repeat(2)).unwrap();
        let twice = collect_activation_norms(&p, &twice_calib).unwrap();
        for (a, b) in once
            .layers
            .iter()
            .flatten()
            .zip(twice.layers.iter().flatten())
        {
            assert!((a * 2f64.sqrt() - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        assert_eq!(n.layers[0].len(), cfg.window * cfg.embed_dim);
    }

    #[test]
    fn maskset_counts_and_verification() {
        let p = init_model(&ModelConfig::tiny(), 5).unwrap();
        let scores = magnitude_scores(&p);
        let uniform = ind(vec![2, 2, 2, 2], 4);
        let masks = build_maskset(&scores, &uniform).unwrap();
        for m in &masks.layers {
            assert_eq!(m.keep.iter().filter(|&&k| !k).count() * 2, m.keep.len());
        }
        assert_eq!(verify_maskset(&masks, &uniform), Ok(()));

        let dense = ind(vec![0; 4], 4);
        let masks = build_maskset(&scores, &dense).unwrap();
        assert!(masks.layers.iter().all(|m| m.keep.iter().all(|&k| k)));

        let full = ind(vec![4; 4], 4);
        let masks = build_maskset(&scores, &full).unwrap();
        assert_eq!(verify_maskset(&masks, &full), Ok(()));
        assert!(build_maskset(&scores, &ind(vec![2; 3], 4)).is_err());
    }

    #[test]
    fn corrupted_mask_is_located() {
        let p = init_model(&ModelConfig::tiny(), 5).unwrap();
        let i = ind(vec![1, 3, 2, 2], 4);
        let mut masks = build_maskset(&magnitude_scores(&p), &i).unwrap();
        let row = 2;
        let group = 1;
        let cols = &mut masks.layers[1].keep;
        let j = (0..4).find(|j| !cols[[row, group * 4 + j]]).unwrap();
        cols[[row, group * 4 + j]] = true;
        assert_eq!(
            verify_maskset(&masks, &i),
            Err(MaskViolation::Group {
                layer: 1,
                row,
                group,
                kept: 2,
                expected: 1
            })
        );
    }

    #[test]
    fn published_fifty_percent_allocation_on_forty_layers() {
        let genes = REFERENCE_50_M4.to_vec();
        let i = SparsityIndividual::new(genes.clone(), 4, 2).unwrap();
        let scores = ScoreSet {
            layers: (0..40)
                .map(|l| {
                    Array2::from_shape_fn((3, 8), |(r, c)| ((l * 31 + r * 7 + c * 13) % 17) as f64)
                })
                .collect(),
        };
        let masks = build_maskset(&scores, &i).unwrap();
        assert_eq!(verify_maskset(&masks, &i), Ok(()));
        for (mask, &n) in masks.layers.iter().zip(&genes) {
            for row in mask.keep.axis_iter(Axis(0)) {
                for chunk in row.as_slice().unwrap().chunks(4) {
                    assert_eq!(chunk.iter().filter(|&&k| !k).count(), n as usize);
                }
            }
        }
    }

    #[test]
    fn export_shape() {
        let p = init_model(&ModelConfig::tiny(), 5).unwrap();
        let i = ind(vec![2; 4], 4);
        let masks = build_maskset(&magnitude_scores(&p), &i).unwrap();
        let v: serde_json::Value =
            serde_json::from_slice(&masks_to_json(&masks, &p.layer_names())).unwrap();
        assert_eq!(v[0]["name"], "W_in");
        assert_eq!(v[0]["M"], 4);
        assert_eq!(v[3]["keep"].as_array().unwrap().len(), 256);
    }

    proptest! {
        #[test]
        fn positive_rescaling_keeps_the_mask(
            vals in proptest::collection::vec(0.0f64..10.0, 24),
            n in 0u32..=4,
            c in 0.01f64..100.0,
        ) {
            let s = Array2::from_shape_vec((3, 8), vals).unwrap();
            let a = build_nm_mask(s.view(), n, 4).unwrap();
            let b = build_nm_mask((&s * c).view(), n, 4).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn every_group_keeps_m_minus_n(
            vals in proptest::collection::vec(0.0f64..1.0, 48),
            n in 0u32..=4,
        ) {
            let s = Array2::from_shape_vec((4, 12), vals).unwrap();
            let k = build_nm_mask(s.view(), n, 4).unwrap();
            for row in k.axis_iter(Axis(0)) {
                for chunk in row.as_slice().unwrap().chunks(4) {
                    prop_assert_eq!(chunk.iter().filter(|&&x| x).count(), 4 - n as usize);
                }
            }
        }

        #[test]
        fn wanda_with_constant_norm_matches_magnitude_mask(seed in 0u64..50, c in 0.1f64..10.0, n in 0u32..=4) {
            let p = init_model(&ModelConfig::tiny(), seed).unwrap();
            let norms = ActivationNorms {
                layers: p.prunable_layers().iter().map(|w| vec![c; w.ncols()]).collect(),
            };
            let i = ind(vec![n; 4], 4);
            let a = build_maskset(&wanda_scores(&p, &norms).unwrap(), &i).unwrap();
            let b = build_maskset(&magnitude_scores(&p), &i).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
