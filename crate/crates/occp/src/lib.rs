//! Occlusion-aware contingency trajectory planner.
//!
//! The library couples reachability-based occlusion risk assessment with a
//! consensus-ADMM trajectory optimizer that produces a coupled pair of
//! exploration/fallback Bezier trajectories, and exercises the planner inside
//! a deterministic occluded-intersection simulator.

pub mod bezier;
pub mod cli;
pub mod config;
pub mod geom;
pub mod qr;
pub mod reach;
pub mod risk;
pub mod sim;
pub mod solver;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
