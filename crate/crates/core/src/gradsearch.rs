//! Differentiable neighborhoods and NA-DARTS-style descent on logits.
//!
//! The relaxed cell `α = softmax(β)` is surrounded by sampled neighbors:
//!
//! * additive: on `d` random edges, `α'_k = (α_k + q_k) / Σ_j (α_j + q_j)`
//!   with bounded noise `q`; differentiable in `α`.
//! * multiplicative: on `d` random edges, the distribution is replaced by
//!   the one-hot vector of the zero or skip operation.
//!
//! With `g = mean` the step descends the average surrogate value over the
//! neighbors (additive representation). With `g = max` it descends the
//! surrogate at the worst neighbor only (multiplicative representation), the
//! gradient Danskin's theorem gives for a max over a finite set.
//!
//! The objective is the multilinear surrogate of a tabular benchmark, so
//! there are no network weights and the weight update of the original
//! bilevel loop is a no-op.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agg::AggregationKind;
use crate::bench::{multilinear_value_and_grad, Objective};
use crate::seed::{rng_for, SearchRng};
use crate::space::{discretize, softmax_backward, softmax_cell, DiscreteCell, Logits, RelaxedCell, SpaceSpec};
use crate::{Error, Result};

/// Slack allowed on `α_k + q_k ≥ 0` for noise drawn against the same cell.
const FEASIBILITY_TOL: f64 = 1e-12;

/// Noise on one perturbed edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeNoise {
    pub edge: usize,
    pub q: Vec<f64>,
}

/// Additive noise for a set of perturbed edges, each `|q_k| ≤ ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector {
    pub eps: f64,
    pub entries: Vec<EdgeNoise>,
}

impl NoiseVector {
    pub fn perturbed_edges(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.edge)
    }

    /// Checks the bound and feasibility invariants against `cell`.
    pub fn check(&self, cell: &RelaxedCell) -> Result<()> {
        let m = cell.op_count();
        let mut seen = vec![false; cell.edge_count()];
        for EdgeNoise { edge, q } in &self.entries {
            if *edge >= cell.edge_count() || std::mem::replace(&mut seen[*edge], true) {
                return Err(Error::InvalidNoise(format!("edge {edge} out of range or repeated")));
            }
            if q.len() != m {
                return Err(Error::InvalidNoise(format!("edge {edge}: {} entries for {m} ops", q.len())));
            }
            let alpha = cell.edge(*edge);
            for (k, (&qk, &ak)) in q.iter().zip(alpha).enumerate() {
                if !qk.is_finite() || qk.abs() > self.eps + FEASIBILITY_TOL {
                    return Err(Error::InvalidNoise(format!("edge {edge}: |q_{k}| = {} > ε", qk.abs())));
                }
                if ak + qk < -FEASIBILITY_TOL {
                    return Err(Error::InvalidNoise(format!("edge {edge}: α_{k} + q_{k} < 0")));
                }
            }
            if alpha.iter().zip(q).map(|(a, b)| a + b).sum::<f64>() <= 0.0 {
                return Err(Error::InvalidNoise(format!("edge {edge}: perturbed mass is zero")));
            }
        }
        Ok(())
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::param("eps", format!("{eps} not in (0, 1)")));
    }
    Ok(())
}

/// Draws `q_k ~ U[−ε, ε]` per op, clamped to `q_k ≥ −α_k`. Redraws in the
/// degenerate case where every coordinate clamps to zero mass.
pub fn sample_noise<R: Rng + ?Sized>(edge_dist: &[f64], eps: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_eps(eps)?;
    loop {
        let q: Vec<f64> =
            edge_dist.iter().map(|&a| rng.gen_range(-eps..=eps).max(-a)).collect();
        if edge_dist.iter().zip(&q).map(|(a, b)| a + b).sum::<f64>() > 0.0 {
            return Ok(q);
        }
    }
}

/// Noise for the given edges of `cell`.
pub fn sample_noise_vector<R: Rng + ?Sized>(
    cell: &RelaxedCell,
    edges: &[usize],
    eps: f64,
    rng: &mut R,
) -> Result<NoiseVector> {
    let entries = edges
        .iter()
        .map(|&edge| Ok(EdgeNoise { edge, q: sample_noise(cell.edge(edge), eps, rng)? }))
        .collect::<Result<_>>()?;
    Ok(NoiseVector { eps, entries })
}

fn renormalize(alpha: &[f64], q: &[f64], out: &mut [f64]) {
    let sum: f64 = alpha.iter().zip(q).map(|(a, b)| a + b).sum();
    for ((o, a), b) in out.iter_mut().zip(alpha).zip(q) {
        *o = ((a + b) / sum).max(0.0);
    }
}

/// Additive neighbor; unperturbed edges are copied bit for bit.
pub fn additive_neighbor(cell: &RelaxedCell, noise: &NoiseVector) -> Result<RelaxedCell> {
    noise.check(cell)?;
    Ok(additive_unchecked(cell, noise))
}

fn additive_unchecked(cell: &RelaxedCell, noise: &NoiseVector) -> RelaxedCell {
    let mut out = cell.clone();
    for EdgeNoise { edge, q } in &noise.entries {
        let alpha = cell.edge(*edge);
        renormalize(alpha, q, out.edge_mut(*edge));
    }
    out
}

/// Forces each `(edge, op)` in `choices` to the one-hot vector of `op`, which
/// must be the zero or skip operation and carry positive mass in `cell`.
pub fn multiplicative_neighbor(
    cell: &RelaxedCell,
    choices: &[(usize, usize)],
    spec: &SpaceSpec,
) -> Result<RelaxedCell> {
    spec.check_relaxed(cell)?;
    if spec.zero_op().is_none() && spec.skip_op().is_none() {
        return Err(Error::MissingSpecialOps);
    }
    let mut out = cell.clone();
    for &(edge, op) in choices {
        if Some(op) != spec.zero_op() && Some(op) != spec.skip_op() {
            return Err(Error::NotSpecialOp { index: op });
        }
        if edge >= cell.edge_count() {
            return Err(Error::param("edge", format!("{edge} out of range")));
        }
        if cell.edge(edge)[op] <= 0.0 {
            return Err(Error::ZeroMass { edge, index: op });
        }
        // r ⊙ α / Σ(r ⊙ α) is exactly the one-hot r.
        let row = out.edge_mut(edge);
        row.iter_mut().for_each(|x| *x = 0.0);
        row[op] = 1.0;
    }
    Ok(out)
}

/// Pulls `upstream = ∂L/∂α'` back through the additive representation to
/// `∂L/∂α`. Noise is held constant, including clamped coordinates.
pub fn neighbor_grad_chain(cell: &RelaxedCell, noise: &NoiseVector, upstream: &[f64]) -> Result<Vec<f64>> {
    if upstream.len() != cell.as_flat().len() {
        return Err(Error::LengthMismatch { left: cell.as_flat().len(), right: upstream.len() });
    }
    let m = cell.op_count();
    let mut grad = upstream.to_vec();
    for EdgeNoise { edge, q } in &noise.entries {
        let alpha = cell.edge(*edge);
        let u = &upstream[edge * m..(edge + 1) * m];
        let v: Vec<f64> = alpha.iter().zip(q).map(|(a, b)| a + b).collect();
        let s: f64 = v.iter().sum();
        let uv: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        for (l, g) in grad[edge * m..(edge + 1) * m].iter_mut().enumerate() {
            *g = u[l] / s - uv / (s * s);
        }
    }
    Ok(grad)
}

/// One member of a sampled neighborhood.
#[derive(Debug, Clone, PartialEq)]
pub enum Neighbor {
    Reference,
    Additive(NoiseVector),
    Multiplicative(Vec<(usize, usize)>),
}

impl Neighbor {
    pub fn apply(&self, cell: &RelaxedCell, spec: &SpaceSpec) -> Result<RelaxedCell> {
        match self {
            Neighbor::Reference => Ok(cell.clone()),
            Neighbor::Additive(noise) => Ok(additive_unchecked(cell, noise)),
            Neighbor::Multiplicative(choices) => multiplicative_neighbor(cell, choices, spec),
        }
    }

    /// `∂L/∂α` given `∂L/∂α'`. Multiplicative edges are constants.
    pub fn backprop(&self, cell: &RelaxedCell, upstream: &[f64]) -> Result<Vec<f64>> {
        match self {
            Neighbor::Reference => Ok(upstream.to_vec()),
            Neighbor::Additive(noise) => neighbor_grad_chain(cell, noise, upstream),
            Neighbor::Multiplicative(choices) => {
                let m = cell.op_count();
                let mut grad = upstream.to_vec();
                for &(edge, _) in choices {
                    grad[edge * m..(edge + 1) * m].iter_mut().for_each(|g| *g = 0.0);
                }
                Ok(grad)
            }
        }
    }
}

/// Aggregations with a usable gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradAggregation {
    Mean,
    Max,
}

impl TryFrom<AggregationKind> for GradAggregation {
    type Error = Error;

    fn try_from(kind: AggregationKind) -> Result<Self> {
        match kind {
            AggregationKind::Mean => Ok(Self::Mean),
            AggregationKind::Max => Ok(Self::Max),
            AggregationKind::Median => Err(Error::NonDifferentiable(kind.to_string())),
            AggregationKind::VariancePenalized(_) => Err(Error::param(
                "kind",
                "gradient search supports only mean and max aggregation",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentConfig {
    pub steps: usize,
    pub n_nbr: usize,
    /// Edges perturbed per neighbor.
    pub d: usize,
    pub eps: f64,
    pub learning_rate: f64,
    pub kind: GradAggregation,
    pub seed: u64,
}

impl DescentConfig {
    /// Defaults: 10 neighbors, ε = 0.1, `d` scaled as 6 of 14 edges.
    pub fn defaults_for(spec: &SpaceSpec) -> Self {
        Self {
            steps: 200,
            n_nbr: 10,
            d: spec.default_perturbed_edges(),
            eps: 0.1,
            learning_rate: 0.1,
            kind: GradAggregation::Mean,
            seed: 0,
        }
    }

    pub fn validate(&self, spec: &SpaceSpec) -> Result<()> {
        if self.n_nbr == 0 {
            return Err(Error::param("n_nbr", "must be at least 1"));
        }
        if self.d > spec.edge_count() {
            return Err(Error::param("d", format!("{} exceeds the edge count", self.d)));
        }
        check_eps(self.eps)?;
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::param("learning_rate", "must be positive and finite"));
        }
        if self.kind == GradAggregation::Max && spec.zero_op().is_none() && spec.skip_op().is_none() {
            return Err(Error::MissingSpecialOps);
        }
        Ok(())
    }
}

/// Draws the reference plus `n_nbr − 1` perturbed neighbors of `alpha`.
pub fn sample_descent_neighbors<R: Rng + ?Sized>(
    alpha: &RelaxedCell,
    spec: &SpaceSpec,
    cfg: &DescentConfig,
    rng: &mut R,
) -> Result<Vec<Neighbor>> {
    let special: Vec<usize> = [spec.zero_op(), spec.skip_op()].into_iter().flatten().collect();
    let mut out = Vec::with_capacity(cfg.n_nbr);
    out.push(Neighbor::Reference);
    for _ in 1..cfg.n_nbr {
        let mut edges = index::sample(rng, spec.edge_count(), cfg.d).into_vec();
        edges.sort_unstable();
        out.push(match cfg.kind {
            GradAggregation::Mean => {
                Neighbor::Additive(sample_noise_vector(alpha, &edges, cfg.eps, rng)?)
            }
            GradAggregation::Max => {
                if special.is_empty() {
                    return Err(Error::MissingSpecialOps);
                }
                Neighbor::Multiplicative(
                    edges.into_iter().map(|e| (e, special[rng.gen_range(0..special.len())])).collect(),
                )
            }
        });
    }
    Ok(out)
}

/// Surrogate values of a neighborhood and the gradient of its aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodEval {
    pub values: Vec<f64>,
    pub aggregate: f64,
    /// Index of the maximizing neighbor (max aggregation only).
    pub argmax: Option<usize>,
    pub grad_alpha: Vec<f64>,
}

/// Evaluates every neighbor (in parallel) and reduces in neighbor order.
pub fn neighborhood_gradient(
    alpha: &RelaxedCell,
    obj: &Objective,
    neighbors: &[Neighbor],
    kind: GradAggregation,
) -> Result<NeighborhoodEval> {
    if neighbors.is_empty() {
        return Err(Error::Empty("neighborhood"));
    }
    let spec = obj.spec();
    let evals: Vec<(f64, Vec<f64>)> = neighbors
        .par_iter()
        .map(|n| {
            let cell = n.apply(alpha, spec)?;
            multilinear_value_and_grad(obj, &cell)
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = evals.iter().map(|(v, _)| *v).collect();
    match kind {
        GradAggregation::Mean => {
            let n = neighbors.len() as f64;
            let chained: Vec<Vec<f64>> = neighbors
                .par_iter()
                .zip(&evals)
                .map(|(nb, (_, g))| nb.backprop(alpha, g))
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; alpha.as_flat().len()];
            for g in &chained {
                for (acc, x) in grad.iter_mut().zip(g) {
                    *acc += x;
                }
            }
            grad.iter_mut().for_each(|g| *g /= n);
            Ok(NeighborhoodEval {
                aggregate: values.iter().sum::<f64>() / n,
                values,
                argmax: None,
                grad_alpha: grad,
            })
        }
        GradAggregation::Max => {
            let mut best = 0;
            for (i, &v) in values.iter().enumerate().skip(1) {
                if v > values[best] {
                    best = i;
                }
            }
            let grad = neighbors[best].backprop(alpha, &evals[best].1)?;
            Ok(NeighborhoodEval { aggregate: values[best], values, argmax: Some(best), grad_alpha: grad })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    /// Surrogate value at the reference `softmax(β)`.
    pub objective: f64,
    /// Mean or max over the sampled neighborhood.
    pub aggregate: f64,
    /// `discretize(softmax(β))` before the update.
    pub incumbent: String,
    pub argmax_neighbor: Option<usize>,
    pub weight_update: String,
}

/// One update of the logits against the neighborhood aggregate.
pub fn na_descent_step<R: Rng + ?Sized>(
    beta: &Logits,
    obj: &Objective,
    cfg: &DescentConfig,
    rng: &mut R,
) -> Result<(Logits, StepReport)> {
    let spec = obj.spec();
    cfg.validate(spec)?;
    if beta.edge_count() != spec.edge_count() || beta.op_count() != spec.op_count() {
        return Err(Error::SpecMismatch);
    }
    let alpha = softmax_cell(beta);
    let neighbors = sample_descent_neighbors(&alpha, spec, cfg, rng)?;
    let eval = neighborhood_gradient(&alpha, obj, &neighbors, cfg.kind)?;
    let grad_beta = softmax_backward(&alpha, &eval.grad_alpha);
    let next = beta.descend(&grad_beta, cfg.learning_rate)?;
    let report = StepReport {
        step: 0,
        objective: eval.values[0],
        aggregate: eval.aggregate,
        incumbent: spec.render_cell(&discretize(&alpha)),
        argmax_neighbor: eval.argmax,
        weight_update: "skipped".into(),
    };
    Ok((next, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentTrace {
    pub config: DescentConfig,
    pub steps: Vec<StepReport>,
    /// `softmax(β)` after the last step, one distribution per edge.
    pub final_alpha: Vec<Vec<f64>>,
    pub final_cell: String,
    pub final_objective: f64,
}

/// Small random logits around zero, keyed by `seed`.
pub fn init_logits(spec: &SpaceSpec, seed: u64) -> Logits {
    let mut rng = rng_for(seed, "init-logits", 0);
    let values = (0..spec.edge_count() * spec.op_count()).map(|_| rng.gen_range(-1e-3..1e-3)).collect();
    Logits::from_flat(spec.op_count(), values).expect("finite logits")
}

/// Runs `cfg.steps` descent steps from `beta0` and discretizes the result.
pub fn run_na_descent(beta0: &Logits, obj: &Objective, cfg: &DescentConfig) -> Result<(DescentTrace, DiscreteCell)> {
    let spec = obj.spec();
    cfg.validate(spec)?;
    let mut rng: SearchRng = rng_for(cfg.seed, "na-descent", 0);
    let mut beta = beta0.clone();
    let mut steps = Vec::with_capacity(cfg.steps);
    for t in 0..cfg.steps {
        let (next, mut report) = na_descent_step(&beta, obj, cfg, &mut rng)?;
        report.step = t;
        steps.push(report);
        beta = next;
    }
    let alpha = softmax_cell(&beta);
    let cell = discretize(&alpha);
    let final_objective = crate::bench::multilinear_eval(obj, &alpha)?;
    let trace = DescentTrace {
        config: *cfg,
        steps,
        final_alpha: alpha.dists().map(<[f64]>::to_vec).collect(),
        final_cell: spec.render_cell(&cell),
        final_objective,
    };
    Ok((trace, cell))
}
