//! Evolutionary search over per-layer N:M sparsity levels.
//!
//! A genotype holds one pruned-per-group count `n_l` per prunable layer. Every
//! operator keeps the genotype on the constraint surface `Σ n_l = N·L`,
//! `0 ≤ n_l ≤ M`, so the average sparsity always equals the target `N:M`.

mod compositions;
mod fitness;
mod init;
mod operators;
mod oracle;
mod search;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::Metric;

pub use compositions::{count_bounded, enumerate_bounded, sample_bounded};
pub use fitness::{FitnessEvaluator, FitnessRecord};
pub use init::{random_init_population, sensitivity_init_population};
pub use operators::{crossover, crossover_at, mutate};
pub use oracle::{exhaustive_oracle, OracleResult, DEFAULT_ORACLE_CAP};
pub use search::{run_search, select_parents, GenerationRecord, SearchTrace};

/// Target `N:M`: `n` of every `m` weights pruned on average.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Target {
    pub n: u32,
    pub m: u32,
}

impl Target {
    pub fn sparsity(&self) -> f64 {
        self.n as f64 / self.m as f64
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.n, self.m)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SparsityIndividual {
    pub genes: Vec<u32>,
    #[serde(rename = "M")]
    pub m: u32,
    /// Average pruned-per-group count the genes must realize.
    #[serde(rename = "N")]
    pub target_n: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConstraintViolation {
    NoLayers,
    TargetAboveM { n: u32, m: u32 },
    GeneOutOfRange { layer: usize, gene: u32, m: u32 },
    Sum { sum: u64, expected: u64 },
}

impl fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintViolation::NoLayers => write!(f, "individual has no genes"),
            ConstraintViolation::TargetAboveM { n, m } => write!(f, "target N={n} exceeds M={m}"),
            ConstraintViolation::GeneOutOfRange { layer, gene, m } => {
                write!(f, "gene {layer} = {gene} outside [0, {m}]")
            }
            ConstraintViolation::Sum { sum, expected } => {
                write!(f, "genes sum to {sum}, expected N*L = {expected}")
            }
        }
    }
}

impl SparsityIndividual {
    pub fn new(genes: Vec<u32>, m: u32, target_n: u32) -> Result<Self> {
        let ind = SparsityIndividual { genes, m, target_n };
        validate_individual(&ind).map_err(|v| Error::input(v.to_string()))?;
        Ok(ind)
    }

    pub fn uniform(layers: usize, target: Target) -> Self {
        SparsityIndividual {
            genes: vec![target.n; layers],
            m: target.m,
            target_n: target.n,
        }
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    pub fn sum(&self) -> u64 {
        self.genes.iter().map(|&g| g as u64).sum()
    }

    pub fn required_sum(&self) -> u64 {
        self.target_n as u64 * self.genes.len() as u64
    }

    pub fn target(&self) -> Target {
        Target {
            n: self.target_n,
            m: self.m,
        }
    }

    /// Same target, different genes.
    pub(crate) fn with_genes(&self, genes: Vec<u32>) -> Self {
        SparsityIndividual {
            genes,
            m: self.m,
            target_n: self.target_n,
        }
    }
}

/// Checks `0 ≤ n_l ≤ M` for every gene and `Σ n_l = N·L`.
pub fn validate_individual(
    ind: &SparsityIndividual,
) -> std::result::Result<(), ConstraintViolation> {
    if ind.genes.is_empty() {
        return Err(ConstraintViolation::NoLayers);
    }
    if ind.target_n > ind.m {
        return Err(ConstraintViolation::TargetAboveM {
            n: ind.target_n,
            m: ind.m,
        });
    }
    if let Some((layer, &gene)) = ind.genes.iter().enumerate().find(|(_, &g)| g > ind.m) {
        return Err(ConstraintViolation::GeneOutOfRange {
            layer,
            gene,
            m: ind.m,
        });
    }
    if ind.sum() != ind.required_sum() {
        return Err(ConstraintViolation::Sum {
            sum: ind.sum(),
            expected: ind.required_sum(),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Sensitivity,
    Random,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sensitivity" => Ok(InitMode::Sensitivity),
            "random" => Ok(InitMode::Random),
            other => Err(Error::input(format!(
                "unknown init mode {other:?} (expected sensitivity or random)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvoConfig {
    pub population_size: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    pub seed: u64,
    pub init_mode: InitMode,
    pub metric: Metric,
    /// Draw budget per individual for rejection-sampled random initialization.
    pub max_retries: usize,
    /// Redraw budget per mutation before the individual is returned unchanged.
    pub mutation_retries: usize,
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig {
            population_size: 20,
            generations: 20,
            mutation_rate: 0.5,
            seed: 0,
            init_mode: InitMode::Sensitivity,
            metric: Metric::Wanda,
            max_retries: 1_000_000,
            mutation_retries: 1000,
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 4 || !self.population_size.is_multiple_of(4) {
            return Err(Error::input(format!(
                "population size {} must be >= 4 and divisible by 4",
                self.population_size
            )));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::input(format!(
                "mutation rate {} outside [0, 1]",
                self.mutation_rate
            )));
        }
        if self.generations == 0 {
            return Err(Error::input("generations must be >= 1"));
        }
        Ok(())
    }
}
