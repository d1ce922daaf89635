//! Stage-by-stage pipeline behind the `motionvid` binary: synthetic corpus,
//! image-pair GAN, motion codes, latent sequencer, generation, evaluation
//! and ablations. Every stage writes a directory under the output root with
//! a `provenance.json` recording its hash and the hashes it was built from.

pub mod ablate;
pub mod config;
pub mod evaluate;
pub mod pipeline;
pub mod stage;

pub use config::{EvalConfig, PipelineConfig};
pub use pipeline::{Codes, Layout};
pub use stage::{CliError, CliResult, Provenance};
