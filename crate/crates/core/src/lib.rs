//! Monte Carlo engine for selection bias in subgroup treatment-effect
//! estimates after data-driven biomarker cutoff selection.
//!
//! A trial has a binary response, a 1:1 randomized treatment, and one
//! continuous biomarker on the quantile scale. Candidate subsets are
//! `{x > c_k}`; a selection rule picks at most one, and the ORR difference
//! in that subset is reported. The crate measures the conditional bias of
//! that estimate against an exact truth oracle and implements two
//! corrections: conditional bootstrap bias correction and ABC rejection.
//!
//! Module map:
//! - [`model`]: response model, truth oracle, IRLS logistic fit
//! - [`simulate`]: trial generation and stream seeding
//! - [`estimators`]: per-subset counts and the ORR-difference MLE
//! - [`selection`]: Rule 1 (max effect) and Rule 2 (posterior + prevalence)
//! - [`bootstrap`], [`abc`]: bias corrections
//! - [`experiment`]: scenario runner and bias aggregation
//! - [`io`], [`cli`]: config files, CSV outputs, command line

pub mod abc;
pub mod bootstrap;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod io;
pub mod model;
pub mod numeric;
pub mod selection;
pub mod simulate;

pub use error::{Error, Result};
