//! Speculative decoding with a bidirectional block drafter.
//!
//! A count-based bidirectional denoiser proposes a whole block of tokens at
//! once and exposes a per-position candidate lattice. A beam search over that
//! lattice ([`cps`]) picks a left-to-right path that a small causal proxy finds
//! fluent, an EMA controller ([`adl`]) sizes the next block from verifier
//! feedback, and the verifier ([`specdec`]) applies the standard
//! accept/residual rule against an autoregressive n-gram target so the output
//! distribution is exactly the target's.

pub mod adl;
pub mod cps;
pub mod drafter;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod prob;
pub mod rng;
pub mod specdec;
pub mod vocab;

pub use error::{Error, Result};
pub use prob::Categorical;
pub use rng::{Rng, Stream};
pub use vocab::{Sequence, TokenId, Vocabulary};
