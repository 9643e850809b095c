//! Operator surfaces: configuration, the `isl` command line and the HTTP
//! inference service.

mod cli;
pub mod config;
pub mod service;

use std::path::PathBuf;

use thiserror::Error;

pub use cli::{cmd_eval, cmd_inspect, cmd_predict, cmd_synth, cmd_train, run, Cli, Command, EvalArgs, TrainOverrides};
pub use config::{default_pipeline, AppConfig, ServiceConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Train(#[from] crate::train::TrainError),
    #[error(transparent)]
    Preproc(#[from] crate::preproc::PreprocError),
    #[error("{0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, AppError>;
