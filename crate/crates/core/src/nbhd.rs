//! Total-variation cell distance and `d`-ball neighborhoods.

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;

use crate::space::{DiscreteCell, RelaxedCell, SpaceSpec};
use crate::{Error, Result};

/// Neighborhoods larger than this are only exposed through [`NeighborIter`].
pub const EAGER_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborhoodParams {
    pub d: usize,
    pub n_nbr: usize,
}

impl NeighborhoodParams {
    pub fn new(d: usize, n_nbr: usize, spec: &SpaceSpec) -> Result<Self> {
        if n_nbr == 0 {
            return Err(Error::param("n_nbr", "must be at least 1"));
        }
        if d > spec.edge_count() {
            return Err(Error::param(
                "d",
                format!("{d} exceeds the edge count {}", spec.edge_count()),
            ));
        }
        Ok(Self { d, n_nbr })
    }
}

/// `½ Σ |p_k − q_k|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: q.len() });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Sum of per-edge total-variation distances.
pub fn cell_distance(a: &RelaxedCell, b: &RelaxedCell) -> Result<f64> {
    if a.edge_count() != b.edge_count() || a.op_count() != b.op_count() {
        return Err(Error::SpecMismatch);
    }
    a.dists().zip(b.dists()).map(|(p, q)| tv_distance(p, q)).sum()
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Number of cells within Hamming distance `d` on the edges (including the
/// center): `Σ_{j≤d} C(|E|, j)·(m−1)^j`.
pub fn neighborhood_size(edges: usize, ops: usize, d: usize) -> u128 {
    (0..=d.min(edges))
        .map(|j| {
            let mut pow: u128 = 1;
            for _ in 0..j {
                pow = pow.saturating_mul(ops as u128 - 1);
            }
            binomial(edges, j).saturating_mul(pow)
        })
        .fold(0u128, u128::saturating_add)
}

/// Lazily walks the `d`-ball around a cell: the center first, then cells at
/// distance 1, 2, ... Within a distance, edge subsets go in lexicographic
/// order and replacement ops in odometer order.
#[derive(Debug, Clone)]
pub struct NeighborIter {
    center: DiscreteCell,
    edges: usize,
    m: usize,
    d: usize,
    j: usize,
    combo: Vec<usize>,
    digits: Vec<usize>,
    done: bool,
}

impl NeighborIter {
    pub fn new(cell: &DiscreteCell, spec: &SpaceSpec, d: usize) -> Self {
        Self {
            center: cell.clone(),
            edges: spec.edge_count(),
            m: spec.op_count(),
            d: d.min(spec.edge_count()),
            j: 0,
            combo: Vec::new(),
            digits: Vec::new(),
            done: false,
        }
    }

    fn current(&self) -> DiscreteCell {
        let mut cell = self.center.clone();
        let ops = cell.ops_mut();
        for (&e, &k) in self.combo.iter().zip(&self.digits) {
            let orig = ops[e];
            ops[e] = if k < orig { k } else { k + 1 };
        }
        cell
    }

    fn advance(&mut self) {
        for t in (0..self.j).rev() {
            self.digits[t] += 1;
            if self.digits[t] < self.m - 1 {
                return;
            }
            self.digits[t] = 0;
        }
        let j = self.j;
        if let Some(i) = (0..j).rev().find(|&i| self.combo[i] < self.edges - j + i) {
            self.combo[i] += 1;
            for t in i + 1..j {
                self.combo[t] = self.combo[t - 1] + 1;
            }
            return;
        }
        self.j += 1;
        if self.j > self.d {
            self.done = true;
            return;
        }
        self.combo = (0..self.j).collect();
        self.digits = vec![0; self.j];
    }
}

impl Iterator for NeighborIter {
    type Item = DiscreteCell;

    fn next(&mut self) -> Option<DiscreteCell> {
        if self.done {
            return None;
        }
        let cell = self.current();
        self.advance();
        Some(cell)
    }
}

/// Every cell at distance `≤ d` from `cell`, including `cell` itself, in
/// [`NeighborIter`] order. Balls above [`EAGER_LIMIT`] must be walked with
/// [`NeighborIter`] instead.
pub fn enumerate_neighbors(
    cell: &DiscreteCell,
    spec: &SpaceSpec,
    d: usize,
) -> Result<Vec<DiscreteCell>> {
    spec.check_cell(cell)?;
    if d > spec.edge_count() {
        return Err(Error::param("d", format!("{d} exceeds the edge count")));
    }
    let size = neighborhood_size(spec.edge_count(), spec.op_count(), d);
    if size > EAGER_LIMIT {
        return Err(Error::SpaceTooLarge { size, limit: EAGER_LIMIT, what: "eager neighborhood" });
    }
    Ok(NeighborIter::new(cell, spec, d).collect())
}

/// The reference cell followed by `n_nbr − 1` distinct cells drawn uniformly
/// without replacement from the rest of its `d`-ball.
///
/// With `n_nbr == 1` no randomness is consumed.
pub fn sample_neighbors<R: Rng + ?Sized>(
    cell: &DiscreteCell,
    spec: &SpaceSpec,
    params: NeighborhoodParams,
    rng: &mut R,
) -> Result<Vec<DiscreteCell>> {
    spec.check_cell(cell)?;
    let (edges, m, d) = (spec.edge_count(), spec.op_count(), params.d.min(spec.edge_count()));
    let size = neighborhood_size(edges, m, d);
    if params.n_nbr as u128 > size {
        return Err(Error::NeighborhoodTooSmall {
            requested: params.n_nbr,
            available: u64::try_from(size).unwrap_or(u64::MAX),
        });
    }
    let mut out = Vec::with_capacity(params.n_nbr);
    out.push(cell.clone());
    let need = params.n_nbr - 1;
    if need == 0 {
        return Ok(out);
    }
    let others = size - 1;

    if (need as u128) * 2 > others {
        // Dense request: index into the enumerated ball directly.
        let ball: Vec<DiscreteCell> = NeighborIter::new(cell, spec, d).skip(1).collect();
        for i in index::sample(rng, ball.len(), need).into_iter() {
            out.push(ball[i].clone());
        }
        return Ok(out);
    }

    // Shell sizes for distances 1..=d; a uniform draw over the ball minus the
    // center picks shell j with probability proportional to its size.
    let shells: Vec<u128> =
        (1..=d).map(|j| neighborhood_size(edges, m, j) - neighborhood_size(edges, m, j - 1)).collect();
    let mut seen: HashSet<DiscreteCell> = HashSet::with_capacity(need);
    while out.len() < params.n_nbr {
        let mut u = rng.gen_range(0..others);
        let mut j = 1;
        for (t, &s) in shells.iter().enumerate() {
            if u < s {
                j = t + 1;
                break;
            }
            u -= s;
        }
        let mut cand = cell.clone();
        let ops = cand.ops_mut();
        for e in index::sample(rng, edges, j).into_iter() {
            let k = rng.gen_range(0..m - 1);
            ops[e] = if k < ops[e] { k } else { k + 1 };
        }
        if seen.insert(cand.clone()) {
            out.push(cand);
        }
    }
    Ok(out)
}
