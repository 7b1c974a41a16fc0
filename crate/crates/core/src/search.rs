//! Random search and neighborhood-aware random search (NA-RS) with equal
//! evaluation budgets.
//!
//! Both searches draw reference cells from a [`CandidateStream`]. RS scores a
//! candidate by `f(c)` (one evaluation); NA-RS samples `n_nbr` neighbors
//! including the candidate and scores it by their aggregate (`n_nbr`
//! evaluations). A candidate replaces the incumbent only when its score is
//! strictly lower.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::agg::{aggregate, AggregationKind};
use crate::bench::Objective;
use crate::nbhd::{sample_neighbors, NeighborhoodParams};
use crate::space::{DiscreteCell, SpaceSpec};
use crate::{Error, Result};

/// Source of reference cells for a search.
pub trait CandidateStream {
    fn next_cell(&mut self, spec: &SpaceSpec, rng: &mut dyn RngCore) -> DiscreteCell;
}

/// Uniform draws with replacement over the whole space.
#[derive(Debug, Default, Clone, Copy)]
pub struct UniformCandidates;

impl CandidateStream for UniformCandidates {
    fn next_cell(&mut self, spec: &SpaceSpec, rng: &mut dyn RngCore) -> DiscreteCell {
        let m = spec.op_count();
        let ops = (0..spec.edge_count()).map(|_| rng.gen_range(0..m)).collect();
        DiscreteCell::from_ops_unchecked(ops)
    }
}

/// Walks the space in index order, wrapping around. Consumes no randomness.
#[derive(Debug, Default, Clone, Copy)]
pub struct ExhaustiveCandidates {
    next: usize,
}

impl CandidateStream for ExhaustiveCandidates {
    fn next_cell(&mut self, spec: &SpaceSpec, _rng: &mut dyn RngCore) -> DiscreteCell {
        let size = usize::try_from(spec.size()).unwrap_or(usize::MAX);
        let cell = spec.cell_at(self.next % size);
        self.next += 1;
        cell
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub candidate: String,
    pub criterion: f64,
    pub incumbent_score: f64,
    /// Evaluations consumed up to and including this step.
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub method: String,
    pub steps: Vec<TraceStep>,
    pub incumbent: String,
    pub incumbent_score: f64,
    pub total_evaluations: usize,
}

impl SearchTrace {
    pub fn incumbent_cell(&self, spec: &SpaceSpec) -> Result<DiscreteCell> {
        spec.parse_cell(&self.incumbent)
    }
}

struct Tracker<'a> {
    spec: &'a SpaceSpec,
    steps: Vec<TraceStep>,
    best: Option<(DiscreteCell, f64)>,
    evaluations: usize,
}

impl<'a> Tracker<'a> {
    fn new(spec: &'a SpaceSpec, capacity: usize) -> Self {
        Self { spec, steps: Vec::with_capacity(capacity), best: None, evaluations: 0 }
    }

    fn record(&mut self, cell: DiscreteCell, score: f64, cost: usize) {
        self.evaluations += cost;
        let accept = self.best.as_ref().is_none_or(|(_, s)| score < *s);
        let candidate = self.spec.render_cell(&cell);
        if accept {
            self.best = Some((cell, score));
        }
        let incumbent_score = self.best.as_ref().map_or(score, |(_, s)| *s);
        self.steps.push(TraceStep {
            step: self.steps.len(),
            candidate,
            criterion: score,
            incumbent_score,
            evaluations: self.evaluations,
        });
    }

    fn finish(self, method: String) -> SearchTrace {
        let (cell, score) = self.best.expect("at least one step");
        SearchTrace {
            method,
            incumbent: self.spec.render_cell(&cell),
            incumbent_score: score,
            steps: self.steps,
            total_evaluations: self.evaluations,
        }
    }
}

pub fn random_search<R: Rng>(obj: &Objective, budget: usize, rng: &mut R) -> Result<SearchTrace> {
    random_search_with(obj, budget, &mut UniformCandidates, rng)
}

/// Evaluates `budget` candidates by `f` alone and keeps the best.
pub fn random_search_with<R: Rng>(
    obj: &Objective,
    budget: usize,
    candidates: &mut impl CandidateStream,
    rng: &mut R,
) -> Result<SearchTrace> {
    if budget == 0 {
        return Err(Error::param("budget", "must be at least 1"));
    }
    let spec = obj.spec();
    let mut tracker = Tracker::new(spec, budget);
    for _ in 0..budget {
        let cell = candidates.next_cell(spec, rng);
        let value = obj.at(&cell);
        tracker.record(cell, value, 1);
    }
    Ok(tracker.finish("rs".into()))
}

pub fn na_random_search<R: Rng>(
    obj: &Objective,
    steps: usize,
    params: NeighborhoodParams,
    kind: AggregationKind,
    rng: &mut R,
) -> Result<SearchTrace> {
    na_random_search_with(obj, steps, params, kind, &mut UniformCandidates, rng)
}

/// NA-RS: each step samples a candidate and `n_nbr − 1` of its neighbors,
/// scores the candidate by the aggregate over all `n_nbr` values, and
/// returns the best-scoring candidate (never one of its neighbors).
pub fn na_random_search_with<R: Rng>(
    obj: &Objective,
    steps: usize,
    params: NeighborhoodParams,
    kind: AggregationKind,
    candidates: &mut impl CandidateStream,
    rng: &mut R,
) -> Result<SearchTrace> {
    if steps == 0 {
        return Err(Error::param("T", "must be at least 1"));
    }
    let spec = obj.spec();
    let mut tracker = Tracker::new(spec, steps);
    for _ in 0..steps {
        let cell = candidates.next_cell(spec, rng);
        let nbrs = sample_neighbors(&cell, spec, params, rng)?;
        let values: Vec<f64> = nbrs.iter().map(|c| obj.at(c)).collect();
        let score = aggregate(kind, values[0], &values)?;
        tracker.record(cell, score, nbrs.len());
    }
    Ok(tracker.finish(format!("na-rs:{kind}")))
}
