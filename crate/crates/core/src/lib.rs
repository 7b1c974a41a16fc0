//! Neighborhood-aware neural architecture search over tabular benchmarks.
//!
//! An architecture is a cell: one operation per edge of a fixed edge list.
//! Instead of ranking cells by their own error `f(c)`, the searches here rank
//! them by an aggregate `g(f(N(c)))` over the cell's neighborhood, the set of
//! cells within a total-variation distance `d`. This favors flat regions of
//! the architecture space over isolated good cells.
//!
//! Module map:
//!
//! * [`space`]: search-space description plus discrete, relaxed and logit encodings.
//! * [`nbhd`]: cell distance, neighborhood enumeration and sampling.
//! * [`bench`]: tabular benchmarks, the synthetic generator and the multilinear surrogate.
//! * [`agg`]: aggregation functions over neighborhood error sets.
//! * [`search`]: random search and neighborhood-aware random search.
//! * [`gradsearch`]: differentiable neighbor representations and gradient descent on logits.
//! * [`analysis`]: ranking and flatness studies, Hessian/eigenvector landscape export.

pub mod agg;
pub mod analysis;
pub mod bench;
mod error;
pub mod gradsearch;
pub mod nbhd;
pub mod search;
pub mod seed;
pub mod space;

pub use error::{Error, Result};
