//! Tabular benchmarks: one record of validation/test errors per cell.

mod io;
mod surrogate;
mod synthetic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::space::{DiscreteCell, SpaceSpec};
use crate::{Error, Result};

pub use io::load_benchmark;
pub use surrogate::{
    multilinear_eval, multilinear_eval_mc, multilinear_grad, multilinear_value_and_grad,
    McEstimate, EXACT_LIMIT,
};
pub(crate) use surrogate::multilinear_eval_flat;
pub use synthetic::{gen_synthetic, GenParams, SEARCH_DATASET, TRANSFER_DATASET};

/// Benchmarks are stored densely; larger spaces are refused at load.
pub const DENSE_LIMIT: u128 = 50_000_000;

/// Errors (percent) recorded for one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchRecord {
    pub val_err: BTreeMap<String, Vec<f64>>,
    pub test_err: BTreeMap<String, f64>,
}

impl ArchRecord {
    fn check(&self, epochs: usize) -> std::result::Result<(), String> {
        for (ds, series) in &self.val_err {
            if series.is_empty() {
                return Err(format!("empty validation series for `{ds}`"));
            }
            if series.len() != epochs {
                return Err(format!(
                    "validation series for `{ds}` has {} epochs, expected {epochs}",
                    series.len()
                ));
            }
            if let Some(v) = series.iter().find(|v| !in_range(**v)) {
                return Err(format!("validation error {v} for `{ds}` outside [0, 100]"));
            }
        }
        if let Some((ds, v)) = self.test_err.iter().find(|(_, v)| !in_range(**v)) {
            return Err(format!("test error {v} for `{ds}` outside [0, 100]"));
        }
        Ok(())
    }

    fn same_keys(&self, other: &ArchRecord) -> bool {
        self.val_err.keys().eq(other.val_err.keys()) && self.test_err.keys().eq(other.test_err.keys())
    }
}

fn in_range(v: f64) -> bool {
    v.is_finite() && (0.0..=100.0).contains(&v)
}

/// A complete table over a search space, indexed by [`SpaceSpec::index_of`].
#[derive(Debug, Clone, PartialEq)]
pub struct TabularBenchmark {
    spec: SpaceSpec,
    epochs: usize,
    datasets: Vec<String>,
    records: Vec<ArchRecord>,
}

impl TabularBenchmark {
    /// Builds a benchmark from records in cell-index order.
    pub fn from_dense(
        spec: SpaceSpec,
        epochs: usize,
        datasets: Vec<String>,
        records: Vec<ArchRecord>,
    ) -> Result<Self> {
        let size = spec.dense_size(DENSE_LIMIT, "tabular benchmark")?;
        if records.len() != size {
            return Err(Error::IncompleteCoverage {
                missing: (size as u64).saturating_sub(records.len() as u64),
                examples: spec
                    .cells()
                    .skip(records.len())
                    .take(10)
                    .map(|c| spec.render_cell(&c))
                    .collect(),
            });
        }
        if epochs == 0 {
            return Err(Error::param("epochs", "must be at least 1"));
        }
        let first = &records[0];
        for ds in first.val_err.keys().chain(first.test_err.keys()) {
            if !datasets.contains(ds) {
                return Err(Error::UnknownDataset(ds.clone()));
            }
        }
        for (i, rec) in records.iter().enumerate() {
            let key = || spec.render_cell(&spec.cell_at(i));
            rec.check(epochs).map_err(|m| Error::param("records", format!("{}: {m}", key())))?;
            if !rec.same_keys(first) {
                return Err(Error::param("records", format!("{}: inconsistent dataset keys", key())));
            }
        }
        Ok(Self { spec, epochs, datasets, records })
    }

    pub fn spec(&self) -> &SpaceSpec {
        &self.spec
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn datasets(&self) -> &[String] {
        &self.datasets
    }

    pub fn records(&self) -> &[ArchRecord] {
        &self.records
    }

    pub fn record(&self, cell: &DiscreteCell) -> Result<&ArchRecord> {
        self.spec.check_cell(cell)?;
        Ok(&self.records[self.spec.index_of(cell)])
    }

    /// Datasets that carry a final test error.
    pub fn test_datasets(&self) -> Vec<String> {
        self.records[0].test_err.keys().cloned().collect()
    }

    /// Datasets that carry per-epoch validation errors.
    pub fn validation_datasets(&self) -> Vec<String> {
        self.records[0].val_err.keys().cloned().collect()
    }
}

/// Which scalar of a record an objective reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Validation { epoch: usize },
    Test,
}

/// The search-time function `f`: a dense table of one scalar per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    spec: SpaceSpec,
    dataset: String,
    field: Field,
    values: Vec<f64>,
}

impl Objective {
    pub fn new(bench: &TabularBenchmark, dataset: &str, field: Field) -> Result<Self> {
        let first = &bench.records[0];
        let values = match field {
            Field::Validation { epoch } => {
                if !first.val_err.contains_key(dataset) {
                    return Err(Error::UnknownDataset(dataset.to_string()));
                }
                if epoch >= bench.epochs {
                    return Err(Error::EpochOutOfRange { epoch, epochs: bench.epochs });
                }
                bench.records.iter().map(|r| r.val_err[dataset][epoch]).collect()
            }
            Field::Test => {
                if !first.test_err.contains_key(dataset) {
                    return Err(Error::UnknownDataset(dataset.to_string()));
                }
                bench.records.iter().map(|r| r.test_err[dataset]).collect()
            }
        };
        Ok(Self { spec: bench.spec.clone(), dataset: dataset.to_string(), field, values })
    }

    pub fn validation(bench: &TabularBenchmark, dataset: &str, epoch: usize) -> Result<Self> {
        Self::new(bench, dataset, Field::Validation { epoch })
    }

    pub fn test(bench: &TabularBenchmark, dataset: &str) -> Result<Self> {
        Self::new(bench, dataset, Field::Test)
    }

    /// An objective over an explicit table in cell-index order.
    pub fn from_table(spec: SpaceSpec, values: Vec<f64>) -> Result<Self> {
        let size = spec.dense_size(DENSE_LIMIT, "objective table")?;
        if values.len() != size {
            return Err(Error::LengthMismatch { left: size, right: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("values", "table entries must be finite"));
        }
        Ok(Self { spec, dataset: String::new(), field: Field::Test, values })
    }

    pub fn spec(&self) -> &SpaceSpec {
        &self.spec
    }

    pub fn dataset(&self) -> &str {
        &self.dataset
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn query(&self, cell: &DiscreteCell) -> Result<f64> {
        self.spec.check_cell(cell)?;
        Ok(self.values[self.spec.index_of(cell)])
    }

    /// Unchecked lookup for cells already validated against this space.
    pub(crate) fn at(&self, cell: &DiscreteCell) -> f64 {
        self.values[self.spec.index_of(cell)]
    }
}
