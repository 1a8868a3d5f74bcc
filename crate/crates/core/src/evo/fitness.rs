use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SparsityIndividual;
use crate::error::{Error, Result};
use crate::masks::{build_maskset, ScoreSet};
use crate::model::{perplexity, ModelParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub individual: SparsityIndividual,
    pub ppl: f64,
}

/// Perplexity of the masked model, memoized by gene vector.
pub struct FitnessEvaluator<'a> {
    params: &'a ModelParams,
    scores: &'a ScoreSet,
    tokens: &'a [u8],
    cache: Mutex<HashMap<Vec<u32>, f64>>,
    hits: AtomicUsize,
    evaluations: AtomicUsize,
}

impl<'a> FitnessEvaluator<'a> {
    pub fn new(params: &'a ModelParams, scores: &'a ScoreSet, tokens: &'a [u8]) -> Self {
        FitnessEvaluator {
            params,
            scores,
            tokens,
            cache: Mutex::new(HashMap::new()),
            hits: AtomicUsize::new(0),
            evaluations: AtomicUsize::new(0),
        }
    }

    /// Lookups answered from the cache.
    pub fn cache_hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    /// Masked forward passes actually run.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    fn compute(&self, ind: &SparsityIndividual) -> Result<f64> {
        let masks = build_maskset(self.scores, ind)?;
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let ppl = perplexity(self.params, self.tokens, Some(&masks))?;
        if !ppl.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite perplexity for {:?}",
                ind.genes
            )));
        }
        Ok(ppl)
    }

    pub fn evaluate(&self, ind: &SparsityIndividual) -> Result<FitnessRecord> {
        if let Some(&ppl) = self.cache.lock().unwrap().get(&ind.genes) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(FitnessRecord {
                individual: ind.clone(),
                ppl,
            });
        }
        let ppl = self.compute(ind)?;
        self.cache.lock().unwrap().insert(ind.genes.clone(), ppl);
        Ok(FitnessRecord {
            individual: ind.clone(),
            ppl,
        })
    }

    /// Fitness of every individual. Uncached genotypes are evaluated in
    /// parallel; hit counts do not depend on scheduling.
    pub fn evaluate_all(&self, population: &[SparsityIndividual]) -> Result<Vec<f64>> {
        let mut fresh: Vec<&SparsityIndividual> = Vec::new();
        {
            let cache = self.cache.lock().unwrap();
            let mut pending = std::collections::HashSet::new();
            for ind in population {
                if cache.contains_key(&ind.genes) || !pending.insert(&ind.genes) {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                } else {
                    fresh.push(ind);
                }
            }
        }
        let results = fresh
            .par_iter()
            .map(|ind| self.compute(ind).map(|ppl| (ind.genes.clone(), ppl)))
            .collect::<Result<Vec<_>>>()?;
        let mut cache = self.cache.lock().unwrap();
        cache.extend(results);
        Ok(population.iter().map(|ind| cache[&ind.genes]).collect())
    }
}
