use rand::Rng as _;

use super::SparsityIndividual;
use crate::rng::Rng;

/// Single-point crossover with a random cut in `[1, L-1]`, followed by repair.
pub fn crossover(
    p1: &SparsityIndividual,
    p2: &SparsityIndividual,
    rng: &mut Rng,
) -> (SparsityIndividual, SparsityIndividual) {
    if p1.len() < 2 {
        return (p1.clone(), p2.clone());
    }
    let cut = rng.gen_range(1..p1.len());
    crossover_at(p1, p2, cut, rng)
}

/// Swap tails after `cut`, then walk each child back onto `Σ n_l = N·L` by
/// nudging random genes one unit at a time.
pub fn crossover_at(
    p1: &SparsityIndividual,
    p2: &SparsityIndividual,
    cut: usize,
    rng: &mut Rng,
) -> (SparsityIndividual, SparsityIndividual) {
    assert_eq!(p1.len(), p2.len(), "parents differ in length");
    assert_eq!(p1.target(), p2.target(), "parents differ in target");
    let cut = cut.min(p1.len());
    let join = |a: &[u32], b: &[u32]| {
        let mut genes = a[..cut].to_vec();
        genes.extend_from_slice(&b[cut..]);
        p1.with_genes(genes)
    };
    let mut c1 = join(&p1.genes, &p2.genes);
    let mut c2 = join(&p2.genes, &p1.genes);
    repair(&mut c1, rng);
    repair(&mut c2, rng);
    (c1, c2)
}

fn repair(child: &mut SparsityIndividual, rng: &mut Rng) {
    let target = child.required_sum();
    let mut sum = child.sum();
    let len = child.len();
    while sum != target {
        let i = rng.gen_range(0..len);
        let g = &mut child.genes[i];
        if sum < target {
            if *g < child.m {
                *g += 1;
                sum += 1;
            }
        } else if *g >= 1 {
            *g -= 1;
            sum -= 1;
        }
    }
}

/// With probability `rate`, redraw two distinct genes uniformly on `[0, M]`
/// until their sum is unchanged. Gives up after `max_retries` redraws.
pub fn mutate(
    ind: &SparsityIndividual,
    rate: f64,
    rng: &mut Rng,
    max_retries: usize,
) -> SparsityIndividual {
    if rng.gen::<f64>() >= rate || ind.len() < 2 {
        return ind.clone();
    }
    let a = rng.gen_range(0..ind.len());
    let mut b = rng.gen_range(0..ind.len() - 1);
    if b >= a {
        b += 1;
    }
    let pair = ind.genes[a] + ind.genes[b];
    for _ in 0..max_retries {
        let x = rng.gen_range(0..=ind.m);
        let y = rng.gen_range(0..=ind.m);
        if x + y == pair {
            let mut genes = ind.genes.clone();
            genes[a] = x;
            genes[b] = y;
            return ind.with_genes(genes);
        }
    }
    ind.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evo::{sample_bounded, validate_individual};
    use crate::rng;

    fn ind(genes: Vec<u32>, m: u32, n: u32) -> SparsityIndividual {
        SparsityIndividual::new(genes, m, n).unwrap()
    }

    #[test]
    fn identical_parents_give_identical_children() {
        let p = ind(vec![1, 3, 2, 2], 4, 2);
        let mut r = rng::seeded(0);
        for _ in 0..50 {
            let (a, b) = crossover(&p, &p, &mut r);
            assert_eq!(a, p);
            assert_eq!(b, p);
        }
    }

    #[test]
    fn repair_trace_example() {
        let p1 = ind(vec![4, 0, 2, 2], 4, 2);
        let p2 = ind(vec![0, 4, 2, 2], 4, 2);
        for seed in 0..20 {
            let (c1, c2) = crossover_at(&p1, &p2, 1, &mut rng::seeded(seed));
            assert_eq!(c1.sum(), 8);
            assert_eq!(c2.sum(), 8);
            assert!(c1.genes.iter().chain(&c2.genes).all(|&g| g <= 4));
            // raw c1 = [4,4,2,2] is only ever decremented
            assert!(c1.genes.iter().zip([4, 4, 2, 2]).all(|(&g, raw)| g <= raw));
            // raw c2 = [0,0,2,2] is only ever incremented
            assert!(c2.genes.iter().zip([0, 0, 2, 2]).all(|(&g, raw)| g >= raw));
        }
    }

    #[test]
    fn zero_rate_never_mutates() {
        let p = ind(vec![1, 3, 2, 2], 4, 2);
        let mut r = rng::seeded(0);
        for _ in 0..100 {
            assert_eq!(mutate(&p, 0.0, &mut r, 1000), p);
        }
    }

    #[test]
    fn pair_mutation_outcomes() {
        let p = ind(vec![2, 2], 4, 2);
        let mut r = rng::seeded(1);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..500 {
            let c = mutate(&p, 1.0, &mut r, 1000);
            assert!(c.genes[0] + c.genes[1] == 4);
            seen.insert(c.genes);
        }
        assert_eq!(seen.len(), 5);
    }

    #[test]
    fn exhausted_budget_returns_input() {
        let p = ind(vec![4, 4, 0, 0], 4, 2);
        let mut r = rng::seeded(2);
        // zero redraws allowed
        assert_eq!(mutate(&p, 1.0, &mut r, 0), p);
    }

    #[test]
    fn operators_preserve_constraints() {
        let mut r = rng::seeded(42);
        for trial in 0..10_000 {
            let layers = 2 + trial % 15;
            let m = [2, 4, 8][trial % 3];
            let n = r.gen_range(0..=m);
            let draw = |r: &mut Rng| {
                SparsityIndividual::new(
                    sample_bounded(r, layers, n as u64 * layers as u64, m).unwrap(),
                    m,
                    n,
                )
                .unwrap()
            };
            let (a, b) = (draw(&mut r), draw(&mut r));
            let (c1, c2) = crossover(&a, &b, &mut r);
            let m1 = mutate(&c1, 0.5, &mut r, 1000);
            for x in [&c1, &c2, &m1] {
                assert_eq!(validate_individual(x), Ok(()), "{x:?}");
            }
        }
    }
}
