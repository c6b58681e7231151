//! Count-based token models: the autoregressive target, the causal proxy used
//! by path search, and the bidirectional denoiser that drives drafting.

mod denoiser;
mod ngram;

pub use denoiser::{BidirectionalDenoiser, MaskedSeq, DEFAULT_W_BI, DENOISER_FORMAT_VERSION};
pub use ngram::{NGramModel, DEFAULT_K_ADD, NGRAM_FORMAT_VERSION};
