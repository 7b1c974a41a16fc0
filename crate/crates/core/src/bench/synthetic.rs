//! Deterministic synthetic benchmarks with planted sharp cells.
//!
//! The base error of a cell is the mean of per-(edge, op) scores drawn from
//! U[0, 50]. A random set of "spiked" cells gets an artificially low
//! validation error and a poor test error: they look best at search time
//! but sit alone in their neighborhood and generalize badly.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ArchRecord, TabularBenchmark, DENSE_LIMIT};
use crate::seed::rng_for;
use crate::space::SpaceSpec;
use crate::{Error, Result};

pub const SEARCH_DATASET: &str = "search";
pub const TRANSFER_DATASET: &str = "transfer";

const SCORE_MAX: f64 = 50.0;
const WARMUP_PENALTY: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub spike_fraction: f64,
    pub spike_height: f64,
    pub generalization_gap: f64,
    pub noise_scale: f64,
    pub epochs: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            spike_fraction: 0.05,
            spike_height: 3.0,
            generalization_gap: 3.0,
            noise_scale: 0.5,
            epochs: 10,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.spike_fraction > 0.0 && self.spike_fraction < 1.0) {
            return Err(Error::param("spike_fraction", format!("{} not in (0, 1)", self.spike_fraction)));
        }
        let non_negative = [
            ("spike_height", self.spike_height),
            ("generalization_gap", self.generalization_gap),
            ("noise_scale", self.noise_scale),
        ];
        for (name, v) in non_negative {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::param(name, format!("{v} must be finite and non-negative")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be at least 1"));
        }
        Ok(())
    }
}

/// Number of spiked cells for a space of `size` cells.
pub fn spike_count(size: usize, fraction: f64) -> usize {
    ((fraction * size as f64).ceil() as usize).min(size)
}

fn clamp_pct(v: f64) -> f64 {
    v.clamp(0.0, 100.0)
}

/// Linear schedule from `start` at epoch 0 to `end` at the last epoch.
fn anneal(start: f64, end: f64, epochs: usize) -> Vec<f64> {
    if epochs == 1 {
        return vec![clamp_pct(end)];
    }
    let last = (epochs - 1) as f64;
    (0..epochs)
        .map(|t| {
            if t + 1 == epochs {
                clamp_pct(end)
            } else {
                clamp_pct(start + (end - start) * t as f64 / last)
            }
        })
        .collect()
}

/// Generates a complete benchmark with datasets `search` and `transfer`.
///
/// Both datasets share the base landscape and the spike set. They differ
/// only in the test-error noise draws of non-spiked cells.
pub fn gen_synthetic(spec: &SpaceSpec, seed: u64, params: &GenParams) -> Result<TabularBenchmark> {
    params.validate()?;
    let size = spec.dense_size(DENSE_LIMIT, "synthetic benchmark")?;
    let (edges, m) = (spec.edge_count(), spec.op_count());
    let mut rng = rng_for(seed, "synthetic", 0);

    let scores: Vec<f64> = (0..edges * m).map(|_| rng.gen_range(0.0..=SCORE_MAX)).collect();
    let mut spiked = vec![false; size];
    for i in index::sample(&mut rng, size, spike_count(size, params.spike_fraction)).into_iter() {
        spiked[i] = true;
    }

    let noise = |rng: &mut crate::seed::SearchRng| {
        if params.noise_scale > 0.0 {
            rng.gen_range(-params.noise_scale..=params.noise_scale)
        } else {
            0.0
        }
    };

    let mut records = Vec::with_capacity(size);
    for (i, cell) in spec.cells().enumerate() {
        let base =
            cell.ops().iter().enumerate().map(|(e, &op)| scores[e * m + op]).sum::<f64>() / edges as f64;
        let eta_search = noise(&mut rng);
        let eta_transfer = noise(&mut rng);
        let (val, test_search, test_transfer) = if spiked[i] {
            let test = base + params.generalization_gap;
            (base - params.spike_height, test, test)
        } else {
            (base, base + eta_search, base + eta_transfer)
        };
        let series = anneal(base + WARMUP_PENALTY, val, params.epochs);
        records.push(ArchRecord {
            val_err: [
                (SEARCH_DATASET.to_string(), series.clone()),
                (TRANSFER_DATASET.to_string(), series),
            ]
            .into(),
            test_err: [
                (SEARCH_DATASET.to_string(), clamp_pct(test_search)),
                (TRANSFER_DATASET.to_string(), clamp_pct(test_transfer)),
            ]
            .into(),
        });
    }
    TabularBenchmark::from_dense(
        spec.clone(),
        params.epochs,
        vec![SEARCH_DATASET.to_string(), TRANSFER_DATASET.to_string()],
        records,
    )
}
