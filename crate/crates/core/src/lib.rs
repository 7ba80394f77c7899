//! Online nonparametric regression on lattices by sleeping-experts
//! aggregation over dyadic rectangles.
//!
//! The engine ([`aggregator`]) combines one forecaster per dyadic rectangle
//! ([`lattice`]) using truncated exponential weights. Experts are either
//! running means or online ridge regressors over monomial features
//! ([`experts`]). [`signals`], [`metrics`] and [`experiment`] build the
//! simulation harness; [`oracle`] holds slow reference implementations used
//! to cross-check the engine.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregator;
pub mod error;
pub mod experiment;
pub mod experts;
pub mod lattice;
mod linalg;
pub mod metrics;
pub mod oracle;
pub mod signals;

pub use error::{Error, Result};
