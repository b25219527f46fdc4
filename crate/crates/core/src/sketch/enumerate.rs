//! Exhaustive iteration over every joint sketch realization.

use super::{from_multiset, from_partition, from_subsets, identity_sample, sorted_multiset, SketchKind, SketchSample};
use crate::error::{Error, Result};
use crate::problem::QuadraticProblem;

/// Largest joint outcome space the enumerator will walk.
pub const ENUMERATION_BUDGET: usize = 1_000_000;

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).map(|i| (n - i) as f64 / (i + 1) as f64).product::<f64>().round()
}

/// Number of joint outcomes walked by [`for_each_outcome`].
pub fn outcome_count(kind: SketchKind, n: usize, d: usize) -> f64 {
    match kind {
        SketchKind::Identity => 1.0,
        SketchKind::PermQ | SketchKind::ScaledPermHomog | SketchKind::ScaledPermHet => factorial(d),
        SketchKind::PermMultiset => {
            let q = n / d;
            factorial(n) / factorial(q).powi(d as i32)
        }
        SketchKind::RandQ(q) => binomial(d, q).powi(n as i32),
        SketchKind::Bernoulli(_) => 2f64.powi((d * n) as i32),
    }
}

/// Steps `v` to its lexicographic successor; false once `v` is the last
/// arrangement. Repeated values are visited once per distinct arrangement.
fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

fn combinations(d: usize, q: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..q).collect();
    loop {
        out.push(cur.clone());
        let mut i = q;
        while i > 0 && cur[i - 1] == d - q + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        cur[i - 1] += 1;
        for k in i..q {
            cur[k] = cur[k - 1] + 1;
        }
    }
}

/// Advances a mixed-radix counter; false after the last value.
fn odometer(digits: &mut [usize], radix: usize) -> bool {
    for dgt in digits.iter_mut() {
        *dgt += 1;
        if *dgt < radix {
            return true;
        }
        *dgt = 0;
    }
    false
}

/// Calls `visit(sample, probability)` once per joint outcome with non-zero
/// probability. Returns the number of outcomes visited.
pub fn for_each_outcome(
    kind: SketchKind,
    p: &QuadraticProblem,
    budget: usize,
    mut visit: impl FnMut(&SketchSample, f64),
) -> Result<usize> {
    kind.validate_for(p)?;
    let (n, d) = (p.n(), p.d());
    let outcomes = outcome_count(kind, n, d);
    if outcomes > budget as f64 {
        return Err(Error::TooLarge { outcomes, budget });
    }
    let total = outcomes as usize;
    let uniform = 1.0 / outcomes;
    let mut visited = 0;
    match kind {
        SketchKind::Identity => {
            visit(&identity_sample(n, d), 1.0);
            visited = 1;
        }
        SketchKind::PermQ | SketchKind::ScaledPermHomog | SketchKind::ScaledPermHet => {
            let mut perm: Vec<usize> = (0..d).collect();
            loop {
                visit(&from_partition(kind, p, perm.clone()), uniform);
                visited += 1;
                if !next_permutation(&mut perm) {
                    break;
                }
            }
        }
        SketchKind::PermMultiset => {
            let mut arr = sorted_multiset(n, d);
            loop {
                visit(&from_multiset(p, arr.clone()), uniform);
                visited += 1;
                if !next_permutation(&mut arr) {
                    break;
                }
            }
        }
        SketchKind::RandQ(q) => {
            let subsets = combinations(d, q);
            let mut digits = vec![0; n];
            loop {
                let chosen = digits.iter().map(|&k| subsets[k].clone()).collect();
                visit(&from_subsets(kind, d, chosen), uniform);
                visited += 1;
                if !odometer(&mut digits, subsets.len()) {
                    break;
                }
            }
        }
        SketchKind::Bernoulli(prob) => {
            let mut digits = vec![0; n];
            loop {
                let masks: Vec<Vec<usize>> = digits
                    .iter()
                    .map(|&m| (0..d).filter(|j| m >> j & 1 == 1).collect())
                    .collect();
                let kept: usize = masks.iter().map(Vec::len).sum();
                let weight = prob.powi(kept as i32) * (1.0 - prob).powi((n * d - kept) as i32);
                if weight > 0.0 {
                    visit(&from_subsets(kind, d, masks), weight);
                    visited += 1;
                }
                if !odometer(&mut digits, 1 << d) {
                    break;
                }
            }
        }
    }
    debug_assert!(visited == total || matches!(kind, SketchKind::Bernoulli(_)));
    Ok(visited)
}
