//! Command-line driver, configuration, corpus handling and experiments.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod experiments;
pub mod synth;

pub use config::{DataConfig, Knob, ModelConfig, RunConfig, SweepConfig};
pub use corpus::{Corpus, Document, Prompt, Tokenization};
pub use experiments::{ablate, bench, prepare, run_prompts, sweep, with_knob, Workbench};
