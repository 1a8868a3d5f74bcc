use rayon::prelude::*;

use super::{
    count_bounded, enumerate_bounded, FitnessEvaluator, FitnessRecord, SparsityIndividual, Target,
};
use crate::error::{Error, Result};
use crate::masks::ScoreSet;
use crate::model::ModelParams;

pub const DEFAULT_ORACLE_CAP: u128 = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub best: FitnessRecord,
    pub feasible: u128,
}

/// Evaluates every feasible genotype and returns the global optimum.
///
/// Refuses when the feasible space exceeds `cap`.
pub fn exhaustive_oracle(
    params: &ModelParams,
    scores: &ScoreSet,
    eval_tokens: &[u8],
    target: Target,
    cap: u128,
) -> Result<OracleResult> {
    let layers = scores.layers.len();
    if layers == 0 || target.n > target.m {
        return Err(Error::Search(format!(
            "no feasible genotypes for target {target}"
        )));
    }
    let required = target.n as u64 * layers as u64;
    let feasible = count_bounded(layers, required, target.m);
    if feasible > cap {
        return Err(Error::Search(format!(
            "feasible space holds {feasible} genotypes, above the cap of {cap}"
        )));
    }
    let uniform = SparsityIndividual::uniform(layers, target);
    let all: Vec<SparsityIndividual> = enumerate_bounded(layers, required, target.m)
        .into_iter()
        .map(|g| uniform.with_genes(g))
        .collect();
    let evaluator = FitnessEvaluator::new(params, scores, eval_tokens);
    let records = all
        .par_iter()
        .map(|ind| evaluator.evaluate(ind))
        .collect::<Result<Vec<_>>>()?;
    // enumeration is lexicographic, so the first minimum has the smallest genes
    let best = records
        .into_iter()
        .reduce(|best, r| if r.ppl < best.ppl { r } else { best })
        .expect("uniform genotype is always feasible");
    Ok(OracleResult { best, feasible })
}
