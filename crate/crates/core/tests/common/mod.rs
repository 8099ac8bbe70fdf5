#![allow(dead_code)]

use std::collections::BTreeSet;

use mcar_avg::averaging::CriterionProblem;
use mcar_avg::evalsim::{generate_replication, SimConfig};
use mcar_avg::glm::{fit_all, GlmFamily};
use mcar_avg::{build_candidates, zero_fill, ObservedDataset};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row blocks of the worked example: which of the five column blocks are
/// missing in each row block.
pub const EXAMPLE_MISSING: [&[usize]; 4] = [&[], &[1, 2], &[3], &[2, 3, 4]];

/// The 4 × 5 block layout with `rows_per_block` rows per row block and one
/// column per column block. Values are random and generic.
pub fn example_dataset(rows_per_block: usize, seed: u64) -> ObservedDataset {
    let mut r = rng(seed);
    let n = 4 * rows_per_block;
    let x = DMatrix::from_fn(n, 5, |_, _| r.random_range(-2.0..2.0));
    let mask = DMatrix::from_fn(n, 5, |i, j| !EXAMPLE_MISSING[i / rows_per_block].contains(&j));
    let y = DVector::from_fn(n, |_, _| f64::from(u8::from(r.random::<bool>())));
    ObservedDataset::new(y, x, mask, (1..=5).map(|j| format!("X{j}")).collect()).unwrap()
}

pub fn block_rows(blocks: &[usize], rows_per_block: usize) -> Vec<usize> {
    blocks
        .iter()
        .flat_map(|&b| b * rows_per_block..(b + 1) * rows_per_block)
        .collect()
}

/// Brute-force grouping: sort (missing-row set, column) pairs and split runs.
pub fn brute_force_groups(d: &ObservedDataset) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut pairs: Vec<(Vec<usize>, usize)> = (0..d.k())
        .map(|j| ((0..d.n()).filter(|&i| !d.is_observed(i, j)).collect(), j))
        .collect();
    pairs.sort();
    let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for (rows, col) in pairs {
        match groups.last_mut() {
            Some((r, cols)) if *r == rows => cols.push(col),
            _ => groups.push((rows, vec![col])),
        }
    }
    // present as (columns, missing rows) ordered by smallest column
    let mut out: Vec<_> = groups.into_iter().map(|(r, c)| (c, r)).collect();
    out.sort_by_key(|(c, _)| c[0]);
    out
}

/// Brute-force SSI row set: every row not in the group's missing set.
pub fn brute_force_rows(n: usize, missing: &[usize]) -> Vec<usize> {
    let missing: BTreeSet<usize> = missing.iter().copied().collect();
    (0..n).filter(|i| !missing.contains(i)).collect()
}

/// Neumaier-compensated summation, used by oracles as an evaluation path
/// independent of the library's plain sums.
pub fn compensated_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            c += (sum - s) + t;
        } else {
            c += (t - s) + sum;
        }
        sum = s;
    }
    sum + c
}

/// log(1 + e^t) evaluated directly, the textbook way, for moderate `t`.
pub fn softplus_direct(t: f64) -> f64 {
    if t > 30.0 {
        t + (-t).exp()
    } else {
        (1.0 + t.exp()).ln()
    }
}

/// Realistic criterion instance drawn from the simulation design.
pub fn sim_problem(seed: u64, n: usize, missing_columns: Vec<usize>, family: GlmFamily) -> Option<CriterionProblem> {
    let cfg = SimConfig {
        n,
        seed,
        family: family.kind,
        missing_columns,
        replications: 1,
        ..SimConfig::default()
    };
    let (d, _) = generate_replication(&cfg, 0).ok()?;
    let candidates = build_candidates(&d).ok()?;
    let fits = fit_all(&family, &candidates, &d).ok()?;
    let xt = zero_fill(&d).ok()?;
    CriterionProblem::from_fits(family, &fits, xt.matrix(), d.y(), 2.0).ok()
}

pub fn random_simplex_point(r: &mut ChaCha8Rng, s: usize) -> DVector<f64> {
    // normalized exponentials are uniform on the simplex
    let e = DVector::from_fn(s, |_, _| -(1.0 - r.random::<f64>()).ln());
    let total = e.sum();
    e / total
}

/// Minimum of `f` over the simplex grid with step `1/m`.
pub fn simplex_grid_min(s: usize, m: usize, mut f: impl FnMut(&DVector<f64>) -> f64) -> (f64, DVector<f64>) {
    fn rec(s: usize, left: usize, prefix: &mut Vec<usize>, m: usize, best: &mut (f64, Vec<usize>), f: &mut dyn FnMut(&DVector<f64>) -> f64) {
        if prefix.len() + 1 == s {
            prefix.push(left);
            let w = DVector::from_iterator(s, prefix.iter().map(|&c| c as f64 / m as f64));
            let v = f(&w);
            if v < best.0 {
                *best = (v, prefix.clone());
            }
            prefix.pop();
            return;
        }
        for c in 0..=left {
            prefix.push(c);
            rec(s, left - c, prefix, m, best, f);
            prefix.pop();
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    rec(s, m, &mut Vec::new(), m, &mut best, &mut f);
    let w = DVector::from_iterator(s, best.1.iter().map(|&c| c as f64 / m as f64));
    (best.0, w)
}
