//! Multilinear extension of a tabular objective: the expectation of `f`
//! when each edge draws its op independently from a relaxed cell.

use rand::Rng;

use super::Objective;
use crate::space::RelaxedCell;
use crate::{Error, Result};

/// Largest space evaluated exactly.
pub const EXACT_LIMIT: u128 = 1_000_000;

fn check(obj: &Objective, cell: &RelaxedCell) -> Result<()> {
    obj.spec().check_relaxed(cell)?;
    let size = obj.spec().size();
    if size > EXACT_LIMIT {
        return Err(Error::SpaceTooLarge { size, limit: EXACT_LIMIT, what: "exact surrogate" });
    }
    Ok(())
}

/// Contracts the value table against every edge distribution except `keep`.
/// Returns one scalar (`keep == None`) or `m` partial sums.
fn contract(values: &[f64], cell: &RelaxedCell, keep: Option<usize>) -> Vec<f64> {
    let m = cell.op_count();
    let edges = cell.edge_count();
    let mut prefix = values.len();
    let mut kept = 1;
    let mut cur: Option<Vec<f64>> = None;
    for j in (0..edges).rev() {
        prefix /= m;
        if keep == Some(j) {
            kept = m;
            continue;
        }
        let src = cur.as_deref().unwrap_or(values);
        let dist = cell.edge(j);
        let mut next = vec![0.0; prefix * kept];
        for p in 0..prefix {
            for r in 0..kept {
                let mut acc = 0.0;
                for (k, &w) in dist.iter().enumerate() {
                    acc += src[(p * m + k) * kept + r] * w;
                }
                next[p * kept + r] = acc;
            }
        }
        cur = Some(next);
    }
    cur.unwrap_or_else(|| values.to_vec())
}

/// `Σ_c f(c) Π_e α_e[c_e]` over every cell of the space.
pub fn multilinear_eval(obj: &Objective, cell: &RelaxedCell) -> Result<f64> {
    check(obj, cell)?;
    Ok(contract(obj.values(), cell, None)[0])
}

/// Gradient with respect to each `α_e[k]`: the expectation of `f` with edge
/// `e` fixed to op `k`, flattened as `edge * m + op`.
pub fn multilinear_grad(obj: &Objective, cell: &RelaxedCell) -> Result<Vec<f64>> {
    check(obj, cell)?;
    Ok((0..cell.edge_count()).flat_map(|e| contract(obj.values(), cell, Some(e))).collect())
}

/// [`multilinear_eval`] on raw coordinates, which need not lie on the
/// simplex. The caller guarantees `flat.len()` matches the space.
pub(crate) fn multilinear_eval_flat(obj: &Objective, flat: &[f64]) -> f64 {
    let cell = RelaxedCell::from_flat_unchecked(obj.spec().op_count(), flat.to_vec());
    contract(obj.values(), &cell, None)[0]
}

/// Value and gradient together.
pub fn multilinear_value_and_grad(obj: &Objective, cell: &RelaxedCell) -> Result<(f64, Vec<f64>)> {
    let grad = multilinear_grad(obj, cell)?;
    let value = contract(obj.values(), cell, None)[0];
    Ok((value, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Monte-Carlo estimate of [`multilinear_eval`] for spaces too large to
/// contract exactly: draws `samples` cells from the product distribution.
pub fn multilinear_eval_mc<R: Rng + ?Sized>(
    obj: &Objective,
    cell: &RelaxedCell,
    samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    obj.spec().check_relaxed(cell)?;
    if samples < 2 {
        return Err(Error::param("samples", "need at least two samples"));
    }
    let m = cell.op_count();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let mut idx = 0usize;
        for dist in cell.dists() {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut op = m - 1;
            for (k, &p) in dist.iter().enumerate() {
                acc += p;
                if u < acc {
                    op = k;
                    break;
                }
            }
            idx = idx * m + op;
        }
        let v = obj.values()[idx];
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate { mean, std_error: (var / n).sqrt(), samples })
}
