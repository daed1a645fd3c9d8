//! Experiment driver behind the `amr` binary: dataset generation, training,
//! evaluation and run comparison.

pub mod commands;
pub mod config;

use std::fmt;

/// A problem with the experiment configuration or command-line arguments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Process exit code for a failed command. The first recognised error in
/// the cause chain decides.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use amr_core::Error as E;
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) | E::InvalidArgument(_) | E::InsufficientData(_) => EXIT_CONFIG,
                E::NonFinite(_) | E::Shape(_) | E::Graph(_) => EXIT_NUMERIC,
                E::Io(_) | E::Format(_) | E::Json(_) => EXIT_IO,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_NUMERIC
}
