//! Post-hoc analytics over search traces: trace–sparsity correlation,
//! plateau detection and per-group ablation summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evo::{SearchTrace, SparsityIndividual};
use crate::sensitivity::LayerSensitivityReport;

/// Relative distance to the final perplexity that counts as converged.
pub const PLATEAU_TOLERANCE: f64 = 1e-3;

/// Sample Pearson correlation, clamped to `[-1, 1]`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::input(format!(
            "lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::input("correlation needs at least two points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numerical(
            "correlation undefined for constant input".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks starting at 1; ties share their average rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::input(format!(
            "lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    pearson(&ranks(x), &ranks(y))
}

/// Pearson correlation across layers of FIM trace against sparsity `n_l / M`.
/// Negative when sensitive layers are pruned less.
pub fn trace_sparsity_correlation(
    ind: &SparsityIndividual,
    report: &LayerSensitivityReport,
) -> Result<f64> {
    if ind.len() != report.layers.len() {
        return Err(Error::input(format!(
            "{} genes for {} report layers",
            ind.len(),
            report.layers.len()
        )));
    }
    let sparsity: Vec<f64> = ind.genes.iter().map(|&g| g as f64 / ind.m as f64).collect();
    pearson(&report.traces(), &sparsity)
}

/// First generation whose best perplexity is within [`PLATEAU_TOLERANCE`] of
/// the final one; the generation count when none is.
pub fn plateau_generation(trace: &SearchTrace) -> usize {
    let limit = trace.best_ppl * (1.0 + PLATEAU_TOLERANCE);
    trace
        .generations
        .iter()
        .position(|g| g.best_ppl <= limit)
        .unwrap_or(trace.generations.len())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// A search trace tagged with its run id and ablation group.
#[derive(Clone, Debug)]
pub struct LabeledRun {
    pub run_id: String,
    /// Grouping key, e.g. `init=random` or `mu=0.5`.
    pub group: String,
    pub trace: SearchTrace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub correlation: f64,
    pub ppl: f64,
    pub individual_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub group: String,
    pub best_ppl: f64,
    pub gen0_best_ppl: f64,
    pub final_mean_ppl: f64,
    pub plateau_generation: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub key: String,
    pub runs: usize,
    pub median_best_ppl: f64,
    pub median_gen0_best_ppl: f64,
    pub median_mean_ppl: f64,
    pub median_plateau_generation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub runs: Vec<RunSummary>,
    pub groups: Vec<AblationSummary>,
    pub correlations: Vec<CorrelationPoint>,
}

impl SearchSummary {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("summary serializes")
    }

    pub fn correlation_csv(&self) -> String {
        let mut out = String::from("corr,ppl,run_id\n");
        for c in &self.correlations {
            let _ = writeln!(out, "{},{},{}", c.correlation, c.ppl, c.individual_id);
        }
        out
    }
}

/// Plot-ready convergence curves: `gen,best_ppl,mean_ppl,run_id`.
pub fn curves_csv(runs: &[LabeledRun]) -> String {
    let mut out = String::from("gen,best_ppl,mean_ppl,run_id\n");
    for run in runs {
        for g in &run.trace.generations {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                g.gen, g.best_ppl, g.mean_ppl, run.run_id
            );
        }
    }
    out
}

/// Per-run and per-group statistics plus trace–sparsity correlation points for
/// every recorded best individual. Uniform individuals have no defined
/// correlation and are skipped.
pub fn summarize_search(
    runs: &[LabeledRun],
    sensitivity: &LayerSensitivityReport,
    m: u32,
) -> Result<SearchSummary> {
    if runs.is_empty() {
        return Err(Error::input("no search traces to summarize"));
    }
    let mut summaries = Vec::with_capacity(runs.len());
    let mut correlations = Vec::new();
    for run in runs {
        let t = &run.trace;
        let first = t
            .generations
            .first()
            .ok_or_else(|| Error::input(format!("run {} has no generations", run.run_id)))?;
        summaries.push(RunSummary {
            run_id: run.run_id.clone(),
            group: run.group.clone(),
            best_ppl: t.best_ppl,
            gen0_best_ppl: first.best_ppl,
            final_mean_ppl: t
                .generations
                .last()
                .map(|g| g.mean_ppl)
                .unwrap_or(first.mean_ppl),
            plateau_generation: plateau_generation(t),
        });

        let points = t
            .generations
            .iter()
            .map(|g| {
                (
                    g.best_individual.clone(),
                    g.best_ppl,
                    format!("{}:{}", run.run_id, g.gen),
                )
            })
            .chain(std::iter::once((
                t.best_individual.clone(),
                t.best_ppl,
                format!("{}:final", run.run_id),
            )));
        for (genes, ppl, id) in points {
            let n = genes.iter().sum::<u32>() / genes.len().max(1) as u32;
            let ind = SparsityIndividual {
                genes,
                m,
                target_n: n,
            };
            match trace_sparsity_correlation(&ind, sensitivity) {
                Ok(correlation) => correlations.push(CorrelationPoint {
                    correlation,
                    ppl,
                    individual_id: id,
                }),
                Err(Error::Numerical(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }

    let mut keys: Vec<&str> = Vec::new();
    for s in &summaries {
        if !keys.contains(&s.group.as_str()) {
            keys.push(&s.group);
        }
    }
    let groups = keys
        .iter()
        .map(|key| {
            let members: Vec<&RunSummary> = summaries.iter().filter(|s| s.group == *key).collect();
            let col = |f: fn(&RunSummary) -> f64| {
                median(&members.iter().map(|s| f(s)).collect::<Vec<_>>())
            };
            AblationSummary {
                key: key.to_string(),
                runs: members.len(),
                median_best_ppl: col(|s| s.best_ppl),
                median_gen0_best_ppl: col(|s| s.gen0_best_ppl),
                median_mean_ppl: col(|s| s.final_mean_ppl),
                median_plateau_generation: col(|s| s.plateau_generation as f64),
            }
        })
        .collect();

    Ok(SearchSummary {
        runs: summaries,
        groups,
        correlations,
    })
}
