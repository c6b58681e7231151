//! Verification and the draft, search, verify, adapt loop.

mod engine;
mod trace;
mod verify;

pub use engine::{ancestral_sample, ar_greedy, decode, DecodeOutput, EngineConfig, Models, StochasticProposal};
pub use trace::{read_trace, write_trace_header, write_trace_steps, StepRecord, TraceHeader, TraceStep, TRACE_SCHEMA_VERSION};
pub use verify::{acceptance_ratio, residual_sample, verify_block, Verification, VerifierRngs, VerifyMode, RESIDUAL_EPS};
