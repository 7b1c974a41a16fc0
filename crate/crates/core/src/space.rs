//! Search-space description and the three architecture encodings: discrete
//! cells (one op per edge), relaxed cells (one distribution per edge) and
//! unconstrained logits.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance on the per-edge sum of a relaxed cell.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A cell search space: an ordered edge list and an ordered operation set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSpaceSpec", into = "RawSpaceSpec")]
pub struct SpaceSpec {
    edges: usize,
    ops: Vec<String>,
    zero_op: Option<usize>,
    skip_op: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawSpaceSpec {
    edges: usize,
    ops: Vec<String>,
    #[serde(default)]
    zero_op: Option<usize>,
    #[serde(default)]
    skip_op: Option<usize>,
}

impl TryFrom<RawSpaceSpec> for SpaceSpec {
    type Error = Error;

    fn try_from(raw: RawSpaceSpec) -> Result<Self> {
        SpaceSpec::new(raw.edges, raw.ops, raw.zero_op, raw.skip_op)
    }
}

impl From<SpaceSpec> for RawSpaceSpec {
    fn from(s: SpaceSpec) -> Self {
        RawSpaceSpec { edges: s.edges, ops: s.ops, zero_op: s.zero_op, skip_op: s.skip_op }
    }
}

impl SpaceSpec {
    pub fn new(
        edges: usize,
        ops: Vec<String>,
        zero_op: Option<usize>,
        skip_op: Option<usize>,
    ) -> Result<Self> {
        if edges == 0 {
            return Err(Error::InvalidSpace("edge count must be positive".into()));
        }
        if ops.len() < 2 {
            return Err(Error::InvalidSpace("at least two operations are required".into()));
        }
        let mut seen = HashSet::new();
        for name in &ops {
            if name.trim().is_empty() || name.contains('|') || name.trim() != name {
                return Err(Error::InvalidSpace(format!("invalid operation name `{name}`")));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidSpace(format!("duplicate operation `{name}`")));
            }
        }
        for idx in [zero_op, skip_op].into_iter().flatten() {
            if idx >= ops.len() {
                return Err(Error::InvalidSpace(format!("special op index {idx} out of range")));
            }
        }
        if zero_op.is_some() && zero_op == skip_op {
            return Err(Error::InvalidSpace("zero_op and skip_op must differ".into()));
        }
        Ok(Self { edges, ops, zero_op, skip_op })
    }

    /// The 6-edge, 5-operation cell space of NAS-Bench-201.
    pub fn nas_bench_201() -> Self {
        let ops = ["none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3"];
        Self::new(6, ops.iter().map(|s| s.to_string()).collect(), Some(0), Some(1))
            .expect("valid built-in space")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn edge_count(&self) -> usize {
        self.edges
    }

    pub fn op_count(&self) -> usize {
        self.ops.len()
    }

    pub fn op_names(&self) -> &[String] {
        &self.ops
    }

    pub fn zero_op(&self) -> Option<usize> {
        self.zero_op
    }

    pub fn skip_op(&self) -> Option<usize> {
        self.skip_op
    }

    /// Number of discrete cells, `m^|E|`, saturating at `u128::MAX`.
    pub fn size(&self) -> u128 {
        let mut n: u128 = 1;
        for _ in 0..self.edges {
            n = n.saturating_mul(self.ops.len() as u128);
        }
        n
    }

    /// Size as `usize` when the whole space fits in memory-indexable range.
    pub fn dense_size(&self, limit: u128, what: &'static str) -> Result<usize> {
        let size = self.size();
        if size > limit {
            return Err(Error::SpaceTooLarge { size, limit, what });
        }
        Ok(size as usize)
    }

    /// Mixed-radix index of a cell, edge 0 most significant. Index order
    /// coincides with the lexicographic order of the op vectors.
    pub fn index_of(&self, cell: &DiscreteCell) -> usize {
        let m = self.ops.len();
        cell.ops.iter().fold(0usize, |acc, &op| acc * m + op)
    }

    pub fn cell_at(&self, mut index: usize) -> DiscreteCell {
        let m = self.ops.len();
        let mut ops = vec![0; self.edges];
        for slot in ops.iter_mut().rev() {
            *slot = index % m;
            index /= m;
        }
        DiscreteCell { ops }
    }

    pub fn check_cell(&self, cell: &DiscreteCell) -> Result<()> {
        if cell.ops.len() != self.edges {
            return Err(Error::WrongEdgeCount { expected: self.edges, got: cell.ops.len() });
        }
        if let Some(&index) = cell.ops.iter().find(|&&op| op >= self.ops.len()) {
            return Err(Error::OpOutOfRange { index, ops: self.ops.len() });
        }
        Ok(())
    }

    pub fn check_relaxed(&self, cell: &RelaxedCell) -> Result<()> {
        if cell.edge_count() != self.edges || cell.op_count() != self.ops.len() {
            return Err(Error::SpecMismatch);
        }
        Ok(())
    }

    /// Parses `op|op|...` in edge order.
    pub fn parse_cell(&self, text: &str) -> Result<DiscreteCell> {
        let names: Vec<&str> = text.split('|').map(str::trim).collect();
        if names.len() != self.edges {
            return Err(Error::WrongEdgeCount { expected: self.edges, got: names.len() });
        }
        let ops = names
            .iter()
            .map(|name| {
                self.ops
                    .iter()
                    .position(|op| op == name)
                    .ok_or_else(|| Error::UnknownOperation(name.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DiscreteCell { ops })
    }

    pub fn render_cell(&self, cell: &DiscreteCell) -> String {
        let names: Vec<&str> = cell.ops.iter().map(|&op| self.ops[op].as_str()).collect();
        names.join("|")
    }

    /// Iterator over every cell of the space in index order.
    pub fn cells(&self) -> impl Iterator<Item = DiscreteCell> + '_ {
        let size = usize::try_from(self.size()).unwrap_or(usize::MAX);
        (0..size).map(move |i| self.cell_at(i))
    }

    /// Default number of perturbed edges for gradient search: 6 of every
    /// 14 edges, rounded, at least one.
    pub fn default_perturbed_edges(&self) -> usize {
        ((6.0 * self.edges as f64 / 14.0).round() as usize).clamp(1, self.edges)
    }
}

/// One operation index per edge.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DiscreteCell {
    ops: Vec<usize>,
}

impl DiscreteCell {
    pub fn new(ops: Vec<usize>, spec: &SpaceSpec) -> Result<Self> {
        let cell = Self { ops };
        spec.check_cell(&cell)?;
        Ok(cell)
    }

    pub fn ops(&self) -> &[usize] {
        &self.ops
    }

    pub fn edge_count(&self) -> usize {
        self.ops.len()
    }

    pub(crate) fn from_ops_unchecked(ops: Vec<usize>) -> Self {
        Self { ops }
    }

    pub(crate) fn ops_mut(&mut self) -> &mut [usize] {
        &mut self.ops
    }

    /// Number of edges on which two cells differ.
    pub fn hamming(&self, other: &DiscreteCell) -> usize {
        self.ops.iter().zip(&other.ops).filter(|(a, b)| a != b).count()
    }
}

impl fmt::Display for DiscreteCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.ops.iter().map(|o| o.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// One probability vector per edge, stored row-major (`edge * m + op`).
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedCell {
    m: usize,
    probs: Vec<f64>,
}

impl RelaxedCell {
    pub fn new(dists: Vec<Vec<f64>>) -> Result<Self> {
        let m = dists.first().map_or(0, Vec::len);
        if dists.is_empty() || m < 2 {
            return Err(Error::InvalidDistribution("need at least one edge and two ops".into()));
        }
        if let Some(bad) = dists.iter().find(|d| d.len() != m) {
            return Err(Error::LengthMismatch { left: m, right: bad.len() });
        }
        Self::from_flat(m, dists.concat())
    }

    pub fn from_flat(m: usize, probs: Vec<f64>) -> Result<Self> {
        if m < 2 || probs.is_empty() || probs.len() % m != 0 {
            return Err(Error::InvalidDistribution(format!(
                "{} probabilities do not split into edges of {m}",
                probs.len()
            )));
        }
        for (e, row) in probs.chunks(m).enumerate() {
            check_distribution(row).map_err(|why| {
                Error::InvalidDistribution(format!("edge {e}: {why}"))
            })?;
        }
        Ok(Self { m, probs })
    }

    pub(crate) fn from_flat_unchecked(m: usize, probs: Vec<f64>) -> Self {
        debug_assert!(probs.len() % m == 0);
        Self { m, probs }
    }

    /// Uniform distribution on every edge.
    pub fn uniform(spec: &SpaceSpec) -> Self {
        let m = spec.op_count();
        Self { m, probs: vec![1.0 / m as f64; m * spec.edge_count()] }
    }

    pub fn edge_count(&self) -> usize {
        self.probs.len() / self.m
    }

    pub fn op_count(&self) -> usize {
        self.m
    }

    pub fn edge(&self, e: usize) -> &[f64] {
        &self.probs[e * self.m..(e + 1) * self.m]
    }

    pub fn dists(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.m)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.probs
    }

    pub(crate) fn edge_mut(&mut self, e: usize) -> &mut [f64] {
        &mut self.probs[e * self.m..(e + 1) * self.m]
    }
}

fn check_distribution(p: &[f64]) -> std::result::Result<(), String> {
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(format!("entry {x} is negative or not finite"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(format!("entries sum to {sum}"));
    }
    Ok(())
}

/// Unconstrained per-edge logits, mapped to a relaxed cell by softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    m: usize,
    values: Vec<f64>,
}

impl Logits {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        let m = values.first().map_or(0, Vec::len);
        if values.is_empty() || m < 2 {
            return Err(Error::param("logits", "need at least one edge and two ops"));
        }
        if let Some(bad) = values.iter().find(|d| d.len() != m) {
            return Err(Error::LengthMismatch { left: m, right: bad.len() });
        }
        Self::from_flat(m, values.concat())
    }

    pub fn from_flat(m: usize, values: Vec<f64>) -> Result<Self> {
        if m < 2 || values.is_empty() || values.len() % m != 0 {
            return Err(Error::param("logits", "length is not a multiple of the op count"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("logits", "entries must be finite"));
        }
        Ok(Self { m, values })
    }

    pub fn zeros(spec: &SpaceSpec) -> Self {
        Self { m: spec.op_count(), values: vec![0.0; spec.op_count() * spec.edge_count()] }
    }

    pub fn edge_count(&self) -> usize {
        self.values.len() / self.m
    }

    pub fn op_count(&self) -> usize {
        self.m
    }

    pub fn edge(&self, e: usize) -> &[f64] {
        &self.values[e * self.m..(e + 1) * self.m]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    /// `self - step * grad`, rejecting non-finite results.
    pub fn descend(&self, grad: &[f64], step: f64) -> Result<Logits> {
        if grad.len() != self.values.len() {
            return Err(Error::LengthMismatch { left: self.values.len(), right: grad.len() });
        }
        let values = self.values.iter().zip(grad).map(|(b, g)| b - step * g).collect();
        Logits::from_flat(self.m, values)
    }
}

/// One-hot embedding of a discrete cell.
pub fn relax(cell: &DiscreteCell, spec: &SpaceSpec) -> RelaxedCell {
    let m = spec.op_count();
    let mut probs = vec![0.0; m * cell.edge_count()];
    for (e, &op) in cell.ops().iter().enumerate() {
        probs[e * m + op] = 1.0;
    }
    RelaxedCell { m, probs }
}

/// Per-edge argmax; ties go to the lowest operation index.
pub fn discretize(cell: &RelaxedCell) -> DiscreteCell {
    let ops = cell
        .dists()
        .map(|row| {
            let mut best = 0;
            for (k, &p) in row.iter().enumerate().skip(1) {
                if p > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    DiscreteCell { ops }
}

/// Softmax of a single logit row with max subtraction.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|b| (b - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|x| x / sum).collect()
}

pub fn softmax_cell(logits: &Logits) -> RelaxedCell {
    let m = logits.op_count();
    let probs = logits.values.chunks(m).flat_map(softmax).collect();
    RelaxedCell { m, probs }
}

/// Pulls a gradient with respect to `alpha = softmax(beta)` back to `beta`:
/// `dL/dbeta_k = alpha_k (g_k - sum_j alpha_j g_j)` per edge.
pub fn softmax_backward(alpha: &RelaxedCell, grad_alpha: &[f64]) -> Vec<f64> {
    let m = alpha.op_count();
    let mut out = Vec::with_capacity(grad_alpha.len());
    for (a, g) in alpha.as_flat().chunks(m).zip(grad_alpha.chunks(m)) {
        let dot: f64 = a.iter().zip(g).map(|(x, y)| x * y).sum();
        out.extend(a.iter().zip(g).map(|(x, y)| x * (y - dot)));
    }
    out
}
