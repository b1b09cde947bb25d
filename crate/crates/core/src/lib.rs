//! Contrastive-diffusion Bayesian optimal experimental design.
//!
//! The crate estimates gradients of the expected information gain (EIG) with
//! a pooled-posterior importance proposal, runs single-loop and nested-loop
//! design optimization, and provides the density-based and diffusion-based
//! samplers those loops rely on.
//!
//! Module overview:
//!
//! * [`model`] design problems: priors, likelihoods and reparameterization maps
//! * [`pooled`] the pooled posterior and its SNIS weights
//! * [`gradients`] EIG gradient estimators
//! * [`samplers`] Langevin, DiGS and resampling operators
//! * [`diffusion`] VP-SDE reverse sampling with analytic score oracles
//! * [`driver`] design optimization loops and the sequential experiment loop
//! * [`evaluation`] SPCE, SNMC, W2-to-truth and estimator diagnostics

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod driver;
pub mod error;
pub mod evaluation;
pub mod gradients;
pub mod model;
pub mod numeric;
pub mod pooled;
pub mod report;
pub mod rng;
pub mod samplers;

pub use error::{CodiffError, Result};
