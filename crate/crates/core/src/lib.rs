//! Online width-based planning with a learned binary state representation.
//!
//! The crate is organised bottom-up:
//!
//! - [`env`]: deterministic pixel-rendered environments with save/restore.
//! - [`features`]: binary feature extraction (tile histogram or VAE encoder).
//! - [`autodiff`]: dense tensors, a reverse-mode tape and Adam.
//! - [`vae`]: the Binary-Concrete β-VAE.
//! - [`novelty`]: width-based novelty tables and breadth-first IW(w).
//! - [`bandit`]: Bayesian rollout statistics and arm selection.
//! - [`planner`]: budgeted rollouts, plan-and-act and the episode loop.
//! - [`dataset`]: screen dataset curation between episodes.
//! - [`harness`]: experiment driver, statistics and reports.

pub mod autodiff;
pub mod bandit;
pub mod dataset;
pub mod env;
mod error;
pub mod features;
pub mod harness;
pub mod novelty;
pub mod par;
pub mod planner;
pub mod rng;
pub mod vae;

pub use error::{Error, Result};
