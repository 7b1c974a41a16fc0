//! Aggregation functions `g` over a neighborhood's error values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default weight of the standard-deviation term.
pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum AggregationKind {
    Mean,
    Median,
    Max,
    /// `f(α) + λ·σ`, σ the population standard deviation of the neighborhood.
    VariancePenalized(f64),
}

impl AggregationKind {
    pub fn variance_penalized(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::param("lambda", format!("{lambda} must be finite and non-negative")));
        }
        Ok(Self::VariancePenalized(lambda))
    }
}

impl fmt::Display for AggregationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Mean => f.write_str("mean"),
            Self::Median => f.write_str("median"),
            Self::Max => f.write_str("max"),
            Self::VariancePenalized(l) => write!(f, "var:{l}"),
        }
    }
}

impl FromStr for AggregationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            "max" => Ok(Self::Max),
            "var" => Ok(Self::VariancePenalized(DEFAULT_LAMBDA)),
            other => match other.strip_prefix("var:") {
                Some(l) => {
                    let lambda = l
                        .parse::<f64>()
                        .map_err(|_| Error::param("aggregation", format!("bad lambda `{l}`")))?;
                    Self::variance_penalized(lambda)
                }
                None => Err(Error::param(
                    "aggregation",
                    format!("`{other}` is not one of mean, median, max, var:<lambda>"),
                )),
            },
        }
    }
}

impl From<AggregationKind> for String {
    fn from(k: AggregationKind) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for AggregationKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance.
pub fn neighborhood_variance(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("neighborhood variance"));
    }
    let mu = mean(values);
    Ok(values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / values.len() as f64)
}

/// Reduces a neighborhood's values to one score. `neighbor_values` is
/// expected to contain the reference cell's own value `ref_value`.
pub fn aggregate(kind: AggregationKind, ref_value: f64, neighbor_values: &[f64]) -> Result<f64> {
    if neighbor_values.is_empty() {
        return Err(Error::Empty("aggregation"));
    }
    Ok(match kind {
        AggregationKind::Mean => mean(neighbor_values),
        AggregationKind::Max => neighbor_values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        AggregationKind::Median => {
            let mut v = neighbor_values.to_vec();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            }
        }
        AggregationKind::VariancePenalized(lambda) => {
            ref_value + lambda * neighborhood_variance(neighbor_values)?.sqrt()
        }
    })
}
