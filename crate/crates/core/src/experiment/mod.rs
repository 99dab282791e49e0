//! Experiment orchestration behind the command-line front end.

pub mod commands;
pub mod config;
pub mod selftest;

pub use commands::{cmd_forward, cmd_invert, cmd_radii, to_json, ForwardReport, InvertReport};
pub use config::{Blob, ExperimentConfig, NormOrder, Phantom};
pub use selftest::{run_selftest, CheckResult, SelftestScale};

use crate::bounds::BoundsError;
use crate::forward::ForwardError;
use crate::greens::GreensError;
use crate::grid::GridError;
use crate::inverse::InverseError;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("output: {0}")]
    Output(String),
    #[error("unknown fault {0:?}; valid names are the selftest check names")]
    UnknownFault(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Greens(#[from] GreensError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Inverse(#[from] InverseError),
}
