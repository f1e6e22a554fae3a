//! Pipeline plumbing behind the `pitchblur` binary: configuration files,
//! the staged runner and in-the-wild shard ingestion.

pub mod config;
pub mod ingest;
pub mod pipeline;

pub use config::{ConfigErrors, PipelineConfig};
pub use ingest::{ingest_itw, IngestInputs, ShardSummary};
pub use pipeline::{run_pipeline, RunManifest, Stage, StageError};

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "PITCHBLUR_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Bad arguments or parameters detected before any work starts.
#[derive(Debug)]
pub struct InvalidInput(pub String);

impl std::fmt::Display for InvalidInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvalidInput {}

/// Validation problems exit with 1, everything else with 2.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use pitchblur::Error as E;
    if err.downcast_ref::<StageError>().is_some() {
        return EXIT_RUNTIME;
    }
    if err.downcast_ref::<ConfigErrors>().is_some() || err.downcast_ref::<InvalidInput>().is_some() {
        return EXIT_INVALID;
    }
    match err.downcast_ref::<E>() {
        Some(E::InvalidParameter(_) | E::TooManyPatches { .. }) => EXIT_INVALID,
        _ => EXIT_RUNTIME,
    }
}
