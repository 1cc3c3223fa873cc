use std::fmt;

use thiserror::Error;

/// Which A/B integrand a trajectory feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    A,
    B,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::A => f.write_str("A"),
            Channel::B => f.write_str("B"),
        }
    }
}

/// Errors raised anywhere in the library. The display text always starts with
/// the name of the module that failed.
#[derive(Debug, Error)]
pub enum Error {
    #[error("model: {0}")]
    Model(String),

    #[error("polymer: {0}")]
    Domain(String),

    #[error("dynamics: trajectory failed at step {step}: {message}")]
    Trajectory { step: u64, message: String },

    #[error("dynamics: {0}")]
    HopConfig(String),

    #[error("estimators: level {level} channel {channel}: {source}")]
    SubEstimator {
        level: usize,
        channel: Channel,
        #[source]
        source: Box<Error>,
    },

    #[error("estimators: {0}")]
    Estimator(String),

    #[error("oracle: {0}")]
    Oracle(String),

    #[error("cli: {0}")]
    Config(String),

    #[error("cli: i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("cli: csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
