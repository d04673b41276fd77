//! Deterministic pairwise reductions over observation indices.

use alloc::vec;
use alloc::vec::Vec;

/// Rows accumulated left to right before the halves are combined.
const BLOCK: usize = 32;

/// Sums `width`-wide contributions for indices `0..n` by recursive halving.
///
/// `add(i, acc)` must add the contribution of index `i` into `acc`. The split
/// points depend only on `n`, so the result is a pure function of the data
/// ordering.
pub(crate) fn pairwise<F>(n: usize, width: usize, mut add: F) -> Vec<f64>
where
    F: FnMut(usize, &mut [f64]),
{
    let mut out = vec![0.0; width];
    let mut scratch: Vec<Vec<f64>> = Vec::new();
    reduce(0, n, 0, &mut out, &mut scratch, &mut add);
    out
}

fn reduce<F>(
    lo: usize,
    hi: usize,
    depth: usize,
    acc: &mut [f64],
    scratch: &mut Vec<Vec<f64>>,
    add: &mut F,
) where
    F: FnMut(usize, &mut [f64]),
{
    if hi - lo <= BLOCK {
        for i in lo..hi {
            add(i, acc);
        }
        return;
    }
    let mid = lo + (hi - lo) / 2;
    reduce(lo, mid, depth + 1, acc, scratch, add);

    while scratch.len() <= depth {
        scratch.push(vec![0.0; acc.len()]);
    }
    let mut right = core::mem::take(&mut scratch[depth]);
    right.iter_mut().for_each(|v| *v = 0.0);
    reduce(mid, hi, depth + 1, &mut right, scratch, add);
    for (a, r) in acc.iter_mut().zip(&right) {
        *a += *r;
    }
    scratch[depth] = right;
}

/// Pairwise sum of a slice of scalars.
pub(crate) fn pairwise_scalar(values: &[f64]) -> f64 {
    pairwise(values.len(), 1, |i, acc| acc[0] += values[i])[0]
}
