//! Debiased-lasso estimation and inference for Cox proportional hazards
//! models with many covariates.
//!
//! The crate fits an l1-penalized Cox partial likelihood, estimates the
//! inverse information matrix row by row through constrained quadratic
//! programs solved with a dual active-set method, and turns the debiased
//! coefficients into confidence intervals, Wald tests and chi-square tests.
//! A seeded simulation engine generates right-censored survival data and
//! aggregates coverage/bias metrics across replications.
//!
//! The crate is `no_std` (with `alloc`); all file formats, CLI plumbing and
//! thread-level parallelism live in the companion `coxdebias-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
pub mod inference;
pub mod kernel;
pub mod lasso;
pub mod linalg;
pub mod qp;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod theta;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
