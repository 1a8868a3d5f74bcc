use std::cmp::Ordering;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    crossover, mutate, random_init_population, sensitivity_init_population, EvoConfig,
    FitnessEvaluator, FitnessRecord, InitMode, SparsityIndividual, Target,
};
use crate::error::{Error, Result};
use crate::masks::ScoreSet;
use crate::model::ModelParams;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub gen: usize,
    pub best_ppl: f64,
    pub mean_ppl: f64,
    pub best_individual: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct FinalRecord {
    #[serde(rename = "final")]
    is_final: bool,
    individual: Vec<u32>,
    ppl: f64,
    cache_hits: usize,
}

/// Per-generation statistics plus the returned optimum.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchTrace {
    pub generations: Vec<GenerationRecord>,
    pub best_individual: Vec<u32>,
    pub best_ppl: f64,
    pub cache_hits: usize,
}

impl SearchTrace {
    /// JSON Lines: one record per generation, then the final record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for g in &self.generations {
            out.push_str(&serde_json::to_string(g).expect("record serializes"));
            out.push('\n');
        }
        let fin = FinalRecord {
            is_final: true,
            individual: self.best_individual.clone(),
            ppl: self.best_ppl,
            cache_hits: self.cache_hits,
        };
        out.push_str(&serde_json::to_string(&fin).expect("record serializes"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> std::result::Result<Self, String> {
        let mut generations = Vec::new();
        let mut fin: Option<FinalRecord> = None;
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            if fin.is_some() {
                return Err(format!("line {}: record after the final record", i + 1));
            }
            let v: serde_json::Value =
                serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            if v.get("final").is_some() {
                fin = Some(serde_json::from_value(v).map_err(|e| format!("line {}: {e}", i + 1))?);
            } else {
                generations
                    .push(serde_json::from_value(v).map_err(|e| format!("line {}: {e}", i + 1))?);
            }
        }
        let fin = fin.ok_or("missing final record")?;
        Ok(SearchTrace {
            generations,
            best_individual: fin.individual,
            best_ppl: fin.ppl,
            cache_hits: fin.cache_hits,
        })
    }
}

fn rank(a: (&SparsityIndividual, f64), b: (&SparsityIndividual, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then_with(|| a.0.genes.cmp(&b.0.genes))
}

/// The better half of the population, best first. Equal perplexities are
/// ordered by gene vector.
pub fn select_parents(population: &[SparsityIndividual], ppls: &[f64]) -> Vec<FitnessRecord> {
    assert_eq!(population.len(), ppls.len());
    let mut ranked: Vec<(&SparsityIndividual, f64)> =
        population.iter().zip(ppls.iter().copied()).collect();
    ranked.sort_by(|a, b| rank(*a, *b));
    ranked
        .into_iter()
        .take(population.len() / 2)
        .map(|(ind, ppl)| FitnessRecord {
            individual: ind.clone(),
            ppl,
        })
        .collect()
}

fn best_of(population: &[SparsityIndividual], ppls: &[f64]) -> (usize, f64) {
    let i = (0..population.len())
        .min_by(|&a, &b| rank((&population[a], ppls[a]), (&population[b], ppls[b])))
        .expect("non-empty population");
    (i, ppls[i])
}

/// Generational loop with elitist replacement.
///
/// Each generation evaluates the population, keeps the better half as parents,
/// shuffles them into consecutive pairs, and adds two crossed-over, mutated
/// children per pair. Random draws come from one stream seeded by
/// `cfg.seed` in a fixed order: initialization, then per generation the
/// parent shuffle followed by, per pair, crossover and the two mutations.
pub fn run_search(
    params: &ModelParams,
    scores: &ScoreSet,
    eval_tokens: &[u8],
    target: Target,
    cfg: &EvoConfig,
) -> Result<SearchTrace> {
    cfg.validate()?;
    let layers = scores.layers.len();
    if layers != params.num_prunable() {
        return Err(Error::input(format!(
            "{layers} score layers for a model with {} prunable layers",
            params.num_prunable()
        )));
    }
    let evaluator = FitnessEvaluator::new(params, scores, eval_tokens);
    let mut rng = rng::seeded(cfg.seed);
    let mut population = match cfg.init_mode {
        InitMode::Sensitivity => {
            sensitivity_init_population(layers, target, cfg.population_size, &mut rng)?
        }
        InitMode::Random => random_init_population(
            layers,
            target,
            cfg.population_size,
            &mut rng,
            cfg.max_retries,
        )?,
    };

    let mut generations = Vec::with_capacity(cfg.generations);
    for gen in 0..cfg.generations {
        let ppls = evaluator.evaluate_all(&population)?;
        let (best, best_ppl) = best_of(&population, &ppls);
        generations.push(GenerationRecord {
            gen,
            best_ppl,
            mean_ppl: ppls.iter().sum::<f64>() / ppls.len() as f64,
            best_individual: population[best].genes.clone(),
        });
        log::debug!("generation {gen}: best ppl {best_ppl:.4}");

        let mut parents: Vec<SparsityIndividual> = select_parents(&population, &ppls)
            .into_iter()
            .map(|r| r.individual)
            .collect();
        let mut pool = parents.clone();
        pool.shuffle(&mut rng);
        let mut children = Vec::with_capacity(pool.len());
        for pair in pool.chunks(2) {
            let (a, b) = match pair {
                [a, b] => crossover(a, b, &mut rng),
                [a] => (a.clone(), a.clone()),
                _ => unreachable!(),
            };
            children.push(mutate(
                &a,
                cfg.mutation_rate,
                &mut rng,
                cfg.mutation_retries,
            ));
            children.push(mutate(
                &b,
                cfg.mutation_rate,
                &mut rng,
                cfg.mutation_retries,
            ));
        }
        children.truncate(cfg.population_size - parents.len());
        parents.extend(children);
        population = parents;
    }

    let ppls = evaluator.evaluate_all(&population)?;
    let (best, best_ppl) = best_of(&population, &ppls);
    Ok(SearchTrace {
        generations,
        best_individual: population[best].genes.clone(),
        best_ppl,
        cache_hits: evaluator.cache_hits(),
    })
}
