//! Count-based bidirectional denoiser.
//!
//! Scores a masked slot by log-linearly mixing a forward n-gram over the
//! nearest unmasked ids to its left with a backward n-gram over the nearest
//! unmasked ids to its right. Masked neighbours are skipped entirely.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ngram::{NGramFile, NGramModel};
use crate::error::{Error, Result};
use crate::prob::Categorical;
use crate::vocab::{TokenId, Vocabulary};

pub const DEFAULT_W_BI: f64 = 0.5;
pub const DENOISER_FORMAT_VERSION: u32 = 1;

/// A token sequence where some slots are masked. The id stored under a
/// masked slot is irrelevant to every consumer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSeq {
    ids: Vec<TokenId>,
    masked: Vec<bool>,
}

impl MaskedSeq {
    /// Slots holding `mask_id` are marked masked.
    pub fn from_ids(ids: Vec<TokenId>, mask_id: TokenId) -> Self {
        let masked = ids.iter().map(|&t| t == mask_id).collect();
        Self { ids, masked }
    }

    /// `prefix` followed by `k` masked slots filled with `mask_id`.
    pub fn with_masked_block(prefix: &[TokenId], k: usize, mask_id: TokenId) -> Self {
        let mut ids = prefix.to_vec();
        ids.extend(std::iter::repeat_n(mask_id, k));
        let mut masked = vec![false; prefix.len()];
        masked.extend(std::iter::repeat_n(true, k));
        Self { ids, masked }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked[i]
    }

    pub fn get(&self, i: usize) -> Option<TokenId> {
        (!self.masked[i]).then(|| self.ids[i])
    }

    pub fn fill(&mut self, i: usize, id: TokenId) {
        self.ids[i] = id;
        self.masked[i] = false;
    }

    /// Masks slot `i`, keeping `placeholder` as its stored id.
    pub fn mask(&mut self, i: usize, placeholder: TokenId) {
        self.ids[i] = placeholder;
        self.masked[i] = true;
    }

    /// Raw stored ids, including whatever sits under masked slots.
    pub fn raw_ids(&self) -> &[TokenId] {
        &self.ids
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BidirectionalDenoiser {
    forward: NGramModel,
    backward: NGramModel,
    w_bi: f64,
}

impl BidirectionalDenoiser {
    pub fn new(forward: NGramModel, backward: NGramModel, w_bi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w_bi) {
            return Err(Error::InvalidConfig("w_bi must be in [0, 1]".into()));
        }
        if forward.vocab() != backward.vocab() {
            return Err(Error::InvalidVocabulary("forward/backward vocabulary mismatch".into()));
        }
        Ok(Self { forward, backward, w_bi })
    }

    /// Trains both directions on the same documents.
    pub fn train(corpus: &[Vec<TokenId>], order: usize, k_add: f64, w_bi: f64, vocab: Arc<Vocabulary>) -> Result<Self> {
        let forward = NGramModel::train(corpus, order, k_add, vocab.clone())?;
        let backward = NGramModel::train_backward(corpus, order, k_add, vocab)?;
        Self::new(forward, backward, w_bi)
    }

    pub fn forward(&self) -> &NGramModel {
        &self.forward
    }

    pub fn backward(&self) -> &NGramModel {
        &self.backward
    }

    pub fn w_bi(&self) -> f64 {
        self.w_bi
    }

    pub fn with_w_bi(mut self, w_bi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w_bi) {
            return Err(Error::InvalidConfig("w_bi must be in [0, 1]".into()));
        }
        self.w_bi = w_bi;
        Ok(self)
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        self.forward.vocab()
    }

    /// Distribution for masked slot `i` of `ctx`.
    pub fn conditional(&self, ctx: &MaskedSeq, i: usize) -> Result<Categorical> {
        if i >= ctx.len() {
            return Err(Error::PositionOutOfRange(i));
        }
        if !ctx.is_masked(i) {
            return Err(Error::PositionFilled);
        }
        let vocab = self.vocab();

        // Left window: nearest unmasked ids, chronological. Running out at
        // index 0 is the true sequence start, so BOS padding applies.
        let want_left = self.forward.order() - 1;
        let mut left: Vec<TokenId> = (0..i).rev().filter_map(|j| ctx.get(j)).take(want_left).collect();
        left.reverse();
        let fwd = self.forward.conditional(&left);

        // Right window: nearest unmasked ids, closest last (reversed-corpus
        // order). The block end is not a document end, so a short window uses
        // the lower-order table and an empty one carries no information.
        let want_right = self.backward.order() - 1;
        let mut right: Vec<TokenId> = ((i + 1)..ctx.len()).filter_map(|j| ctx.get(j)).take(want_right).collect();
        right.reverse();
        let bwd = if want_right > 0 && right.is_empty() {
            None
        } else {
            Some(self.backward.conditional_exact(&right))
        };

        let w = self.w_bi;
        let scores = (0..vocab.len() as TokenId)
            .map(|v| {
                if !vocab.is_emittable(v) {
                    return f64::NEG_INFINITY;
                }
                let f = fwd.log_prob(v);
                match &bwd {
                    Some(b) => w * f + (1.0 - w) * b.log_prob(v),
                    // Uniform backward term: constant, vanishes in normalization.
                    None => w * f,
                }
            })
            .collect();
        Categorical::from_log_weights(scores)
    }

    pub(crate) fn to_file(&self) -> DenoiserFile {
        DenoiserFile {
            version: DENOISER_FORMAT_VERSION,
            w_bi: self.w_bi,
            forward: self.forward.to_file(),
            backward: self.backward.to_file(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct DenoiserFile {
    pub version: u32,
    pub w_bi: f64,
    pub forward: NGramFile,
    pub backward: NGramFile,
}

impl Serialize for BidirectionalDenoiser {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_file().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BidirectionalDenoiser {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let file = DenoiserFile::deserialize(d)?;
        if file.version != DENOISER_FORMAT_VERSION {
            return Err(D::Error::custom(Error::SchemaVersion {
                found: file.version,
                expected: DENOISER_FORMAT_VERSION,
            }));
        }
        let forward = NGramModel::from_file(file.forward, None).map_err(D::Error::custom)?;
        let backward = NGramModel::from_file(file.backward, Some(forward.vocab().clone())).map_err(D::Error::custom)?;
        BidirectionalDenoiser::new(forward, backward, file.w_bi).map_err(D::Error::custom)
    }
}
