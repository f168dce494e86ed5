//! Off-policy evaluation of contextual-bandit policies from several logging
//! policies whose dataset sizes are fixed by design (stratified sampling).
//!
//! The crate provides:
//!
//! - finite environments, policies and the stratified / iid-mixture samplers
//!   ([`env`], [`policy`], [`data`]);
//! - the importance-sampling family, the weighted control-variate class
//!   `Γ(D; h, g)` and its cross-fitted doubly robust members ([`estimators`]);
//! - logistic nuisance models for `q̂` and `π̂_*` ([`nuisance`]);
//! - stratified and pooled variance objectives, the efficiency bound and the
//!   variance-minimizing control-variate fits ([`variance`]);
//! - exact enumeration oracles for means and variances on finite instances
//!   ([`oracle`]);
//! - the classification-to-bandit benchmark pipeline and harness
//!   ([`pipeline`], [`experiment`]).

pub mod data;
pub mod env;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod nuisance;
pub mod oracle;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod stats;
pub mod variance;

pub use error::{OpeError, Result};
