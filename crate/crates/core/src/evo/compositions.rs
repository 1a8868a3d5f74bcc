//! Counting, enumerating and sampling bounded integer vectors with a fixed sum.

use rand::Rng as _;

use crate::rng::Rng;

/// Number of vectors in `{0..=bound}^len` summing to `sum` (saturating).
pub fn count_bounded(len: usize, sum: u64, bound: u32) -> u128 {
    let sum = sum as usize;
    let bound = bound as usize;
    // ways[s] for the prefix processed so far
    let mut ways = vec![0u128; sum + 1];
    ways[0] = 1;
    for _ in 0..len {
        let mut next = vec![0u128; sum + 1];
        for (s, slot) in next.iter_mut().enumerate() {
            let mut acc = 0u128;
            for v in 0..=bound.min(s) {
                acc = acc.saturating_add(ways[s - v]);
            }
            *slot = acc;
        }
        ways = next;
    }
    ways[sum]
}

/// Uniform draw from `{0..=bound}^len` conditioned on summing to `sum`.
///
/// Same distribution as drawing every entry uniformly and rejecting until the
/// sum matches, without the rejection loop. Returns `None` when infeasible.
pub fn sample_bounded(rng: &mut Rng, len: usize, sum: u64, bound: u32) -> Option<Vec<u32>> {
    if sum > len as u64 * bound as u64 {
        return None;
    }
    let sum = sum as usize;
    let b = bound as usize;
    // table[i][s] = ways for i remaining entries to sum to s (f64 to avoid overflow)
    let mut table = vec![vec![0f64; sum + 1]; len + 1];
    table[0][0] = 1.0;
    for i in 1..=len {
        for s in 0..=sum {
            table[i][s] = (0..=b.min(s)).map(|v| table[i - 1][s - v]).sum();
        }
    }
    let mut out = Vec::with_capacity(len);
    let mut remaining = sum;
    for i in (1..=len).rev() {
        let total = table[i][remaining];
        let mut u = rng.gen::<f64>() * total;
        let mut choice = None;
        for v in 0..=b.min(remaining) {
            let w = table[i - 1][remaining - v];
            if w == 0.0 {
                continue;
            }
            choice = Some(v);
            if u < w {
                break;
            }
            u -= w;
        }
        let v = choice?;
        out.push(v as u32);
        remaining -= v;
    }
    Some(out)
}

/// All vectors in `{0..=bound}^len` summing to `sum`, in lexicographic order.
pub fn enumerate_bounded(len: usize, sum: u64, bound: u32) -> Vec<Vec<u32>> {
    fn rec(prefix: &mut Vec<u32>, len: usize, left: u64, bound: u32, out: &mut Vec<Vec<u32>>) {
        let slots = (len - prefix.len()) as u64;
        if slots == 0 {
            if left == 0 {
                out.push(prefix.clone());
            }
            return;
        }
        let max_rest = (slots - 1) * bound as u64;
        let lo = left.saturating_sub(max_rest);
        let hi = left.min(bound as u64);
        for v in lo..=hi {
            prefix.push(v as u32);
            rec(prefix, len, left - v, bound, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if sum <= len as u64 * bound as u64 {
        rec(&mut Vec::with_capacity(len), len, sum, bound, &mut out);
    }
    out
}
