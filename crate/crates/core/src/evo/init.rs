use rand::Rng as _;

use super::{sample_bounded, validate_individual, SparsityIndividual, Target};
use crate::error::{Error, Result};
use crate::rng::Rng;

fn check_target(layers: usize, target: Target) -> Result<()> {
    if layers == 0 {
        return Err(Error::Search("no prunable layers".into()));
    }
    if target.n > target.m {
        return Err(Error::Search(format!("target {target} has N > M")));
    }
    Ok(())
}

/// Rejection sampling: every gene uniform on `[0, M]`, redrawn until the sum is `N·L`.
pub fn random_init_population(
    layers: usize,
    target: Target,
    population: usize,
    rng: &mut Rng,
    max_retries: usize,
) -> Result<Vec<SparsityIndividual>> {
    check_target(layers, target)?;
    let uniform = SparsityIndividual::uniform(layers, target);
    // N = 0 and N = M each admit exactly one feasible genotype.
    if target.n == 0 || target.n == target.m {
        return Ok(vec![uniform; population]);
    }
    let required = uniform.required_sum();
    let mut out = Vec::with_capacity(population);
    let mut genes = vec![0u32; layers];
    for i in 0..population {
        let mut found = false;
        for _ in 0..max_retries.max(1) {
            for g in genes.iter_mut() {
                *g = rng.gen_range(0..=target.m);
            }
            if genes.iter().map(|&g| g as u64).sum::<u64>() == required {
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::Search(format!(
                "random initialization of individual {i} found no genotype with sum {required} \
                 in {max_retries} draws; use fewer layers, raise max_retries, or use sensitivity init"
            )));
        }
        out.push(uniform.with_genes(genes.clone()));
    }
    Ok(out)
}

/// Builds `[N - δ_front, N + δ_deeper]` with `Σ δ_deeper = Σ δ_front`.
pub(crate) fn assemble(target: Target, front: &[u32], deeper: &[u32]) -> SparsityIndividual {
    let genes = front
        .iter()
        .map(|d| target.n - d)
        .chain(deeper.iter().map(|d| target.n + d))
        .collect::<Vec<_>>();
    SparsityIndividual {
        genes,
        m: target.m,
        target_n: target.n,
    }
}

/// Front-loaded initialization: the first `⌊L/5⌋` layers are pruned at most `N`,
/// with each unit removed there paid back by a deeper layer.
///
/// Front offsets are drawn from `{0, 1}` and deeper offsets from `{0, ..., M−N}`.
/// Targets with no room to move (`N = 0` or `N = M`) fall back to random init.
pub fn sensitivity_init_population(
    layers: usize,
    target: Target,
    population: usize,
    rng: &mut Rng,
) -> Result<Vec<SparsityIndividual>> {
    check_target(layers, target)?;
    if target.n == 0 || target.n == target.m {
        log::info!("sensitivity init impossible at target {target}; falling back to random init");
        return random_init_population(layers, target, population, rng, 1);
    }
    let front_len = layers / 5;
    let deeper_len = layers - front_len;
    let headroom = target.m - target.n;
    let capacity = deeper_len as u64 * headroom as u64;

    let mut out = Vec::with_capacity(population);
    let mut front = vec![0u32; front_len];
    for _ in 0..population {
        loop {
            for d in front.iter_mut() {
                *d = rng.gen_range(0..=1);
            }
            if front.iter().map(|&d| d as u64).sum::<u64>() <= capacity {
                break;
            }
        }
        let owed = front.iter().map(|&d| d as u64).sum();
        let deeper = sample_bounded(rng, deeper_len, owed, headroom)
            .expect("front sum bounded by deeper capacity");
        let ind = assemble(target, &front, &deeper);
        debug_assert!(validate_individual(&ind).is_ok());
        out.push(ind);
    }
    Ok(out)
}
