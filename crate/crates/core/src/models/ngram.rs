//! Add-k smoothed n-gram model.
//!
//! Counts are kept for every context length `0..order`, so the model can also
//! answer lower-order queries (used by the denoiser when a window runs out of
//! unmasked neighbours). Ordinary next-token queries pad short histories with
//! the BOS id and use the last `order - 1` ids.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::Categorical;
use crate::vocab::{TokenId, Vocabulary};

pub const DEFAULT_K_ADD: f64 = 0.1;
pub const NGRAM_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    k_add: f64,
    vocab: Arc<Vocabulary>,
    tables: HashMap<Vec<TokenId>, ContextCounts>,
}

impl NGramModel {
    /// Fits on documents; each document gets an EOS appended.
    pub fn train(corpus: &[Vec<TokenId>], order: usize, k_add: f64, vocab: Arc<Vocabulary>) -> Result<Self> {
        let eos = vocab.eos_id();
        let seqs: Vec<Vec<TokenId>> = corpus
            .iter()
            .map(|d| d.iter().copied().chain(std::iter::once(eos)).collect())
            .collect();
        Self::fit(&seqs, order, k_add, vocab)
    }

    /// Fits on id-reversed documents (`[EOS, w_n, .., w_1]`), so that
    /// conditioning on a reversed right-hand window predicts the token to its left.
    pub fn train_backward(corpus: &[Vec<TokenId>], order: usize, k_add: f64, vocab: Arc<Vocabulary>) -> Result<Self> {
        let eos = vocab.eos_id();
        let seqs: Vec<Vec<TokenId>> = corpus
            .iter()
            .map(|d| std::iter::once(eos).chain(d.iter().rev().copied()).collect())
            .collect();
        Self::fit(&seqs, order, k_add, vocab)
    }

    fn fit(seqs: &[Vec<TokenId>], order: usize, k_add: f64, vocab: Arc<Vocabulary>) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        validate_params(order, k_add)?;
        let bos = vocab.bos_id();
        let mut tables: HashMap<Vec<TokenId>, ContextCounts> = HashMap::new();
        let mut padded = Vec::new();
        for seq in seqs {
            padded.clear();
            padded.extend(std::iter::repeat_n(bos, order - 1));
            for &tok in seq {
                vocab.check_id(tok)?;
                if !vocab.is_emittable(tok) {
                    return Err(Error::ReservedToken(tok));
                }
                let t = padded.len();
                for len in 0..order {
                    let ctx = &padded[t - len..t];
                    let entry = tables.entry(ctx.to_vec()).or_default();
                    entry.total += 1;
                    *entry.next.entry(tok).or_default() += 1;
                }
                padded.push(tok);
            }
        }
        Ok(Self { order, k_add, vocab, tables })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k_add(&self) -> f64 {
        self.k_add
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    /// The `order - 1` ids that condition the next token after `history`.
    pub fn context_of(&self, history: &[TokenId]) -> Vec<TokenId> {
        let n = self.order - 1;
        let mut ctx = Vec::with_capacity(n);
        if history.len() < n {
            ctx.extend(std::iter::repeat_n(self.vocab.bos_id(), n - history.len()));
            ctx.extend_from_slice(history);
        } else {
            ctx.extend_from_slice(&history[history.len() - n..]);
        }
        ctx
    }

    /// Next-token distribution after `history`.
    pub fn conditional(&self, history: &[TokenId]) -> Categorical {
        self.conditional_exact(&self.context_of(history))
    }

    /// Distribution for an exact context of length `<= order - 1`, without
    /// padding. Shorter contexts read the lower-order tables.
    pub fn conditional_exact(&self, context: &[TokenId]) -> Categorical {
        debug_assert!(context.len() < self.order);
        let counts = self.tables.get(context);
        let denom = self.denominator(counts);
        let log_probs = (0..self.vocab.len() as TokenId)
            .map(|v| {
                if self.vocab.is_emittable(v) {
                    let c = counts.and_then(|c| c.next.get(&v)).copied().unwrap_or(0);
                    ((c as f64 + self.k_add) / denom).ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        Categorical::from_log_weights(log_probs).expect("smoothed distribution has full support")
    }

    /// `ln p(token | history)` without materializing the distribution.
    pub fn log_prob(&self, history: &[TokenId], token: TokenId) -> f64 {
        if !self.vocab.is_emittable(token) {
            return f64::NEG_INFINITY;
        }
        let ctx = self.context_of(history);
        let counts = self.tables.get(ctx.as_slice());
        let c = counts.and_then(|c| c.next.get(&token)).copied().unwrap_or(0);
        ((c as f64 + self.k_add) / self.denominator(counts)).ln()
    }

    fn denominator(&self, counts: Option<&ContextCounts>) -> f64 {
        let total = counts.map_or(0, |c| c.total);
        total as f64 + self.k_add * self.vocab.emittable_count() as f64
    }

    /// Raw count of `token` after the exact `context`.
    pub fn count(&self, context: &[TokenId], token: TokenId) -> u64 {
        self.tables
            .get(context)
            .and_then(|c| c.next.get(&token))
            .copied()
            .unwrap_or(0)
    }

    pub fn context_total(&self, context: &[TokenId]) -> u64 {
        self.tables.get(context).map_or(0, |c| c.total)
    }

    pub(crate) fn to_file(&self) -> NGramFile {
        let mut counts: Vec<CountRow> = self
            .tables
            .iter()
            .flat_map(|(ctx, cc)| {
                cc.next.iter().map(move |(&token, &count)| CountRow {
                    context: ctx.clone(),
                    token,
                    count,
                })
            })
            .collect();
        counts.sort_by(|a, b| a.context.len().cmp(&b.context.len()).then_with(|| a.context.cmp(&b.context)).then(a.token.cmp(&b.token)));
        NGramFile {
            version: NGRAM_FORMAT_VERSION,
            order: self.order,
            k_add: self.k_add,
            vocabulary: (*self.vocab).clone(),
            counts,
        }
    }

    pub(crate) fn from_file(file: NGramFile, vocab: Option<Arc<Vocabulary>>) -> Result<Self> {
        if file.version != NGRAM_FORMAT_VERSION {
            return Err(Error::SchemaVersion {
                found: file.version,
                expected: NGRAM_FORMAT_VERSION,
            });
        }
        validate_params(file.order, file.k_add)?;
        let vocab = match vocab {
            Some(v) if *v == file.vocabulary => v,
            Some(_) => return Err(Error::InvalidVocabulary("model vocabulary mismatch".into())),
            None => Arc::new(file.vocabulary),
        };
        let mut tables: HashMap<Vec<TokenId>, ContextCounts> = HashMap::new();
        for row in file.counts {
            if row.context.len() >= file.order {
                return Err(Error::InvalidConfig("count context longer than order - 1".into()));
            }
            vocab.check_id(row.token)?;
            for &c in &row.context {
                vocab.check_id(c)?;
            }
            let entry = tables.entry(row.context).or_default();
            entry.total += row.count;
            *entry.next.entry(row.token).or_default() += row.count;
        }
        Ok(Self {
            order: file.order,
            k_add: file.k_add,
            vocab,
            tables,
        })
    }
}

fn validate_params(order: usize, k_add: f64) -> Result<()> {
    if order < 1 {
        return Err(Error::InvalidConfig("n-gram order must be >= 1".into()));
    }
    if !(k_add.is_finite() && k_add > 0.0) {
        return Err(Error::InvalidConfig("k_add must be > 0".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct CountRow {
    pub context: Vec<TokenId>,
    pub token: TokenId,
    pub count: u64,
}

/// On-disk model layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct NGramFile {
    pub version: u32,
    pub order: usize,
    pub k_add: f64,
    pub vocabulary: Vocabulary,
    pub counts: Vec<CountRow>,
}

impl Serialize for NGramModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_file().serialize(s)
    }
}

impl<'de> Deserialize<'de> for NGramModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = NGramFile::deserialize(d)?;
        NGramModel::from_file(file, None).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn abab() -> (Arc<Vocabulary>, NGramModel) {
        let vocab = Arc::new(Vocabulary::new(["a", "b"]).unwrap());
        let m = NGramModel::train(&[vec![0, 1, 0, 1]], 2, 1.0, vocab.clone()).unwrap();
        (vocab, m)
    }

    #[test]
    fn hand_counted_bigram() {
        // a b a b </s>: "a" is followed by "b" twice; |V| = {a, b, </s>}.
        let (_, m) = abab();
        let p = m.conditional(&[0]).prob(1);
        assert!((p - 0.6).abs() < 1e-12, "{p}");
        assert_eq!(m.count(&[0], 1), 2);
        assert_eq!(m.context_total(&[1]), 2);
    }

    #[test]
    fn prefix_ending_in_a() {
        let (_, m) = abab();
        let p = m.conditional(&[1, 1, 0, 1, 0]).prob(1);
        assert!((p - 0.6).abs() < 1e-12);
        assert!((m.log_prob(&[1, 0], 1) - 0.6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unseen_context_is_uniform() {
        let (vocab, m) = abab();
        let d = m.conditional_exact(&[vocab.eos_id()]);
        for v in 0..vocab.len() as TokenId {
            let expect = if vocab.is_emittable(v) { 1.0 / 3.0 } else { 0.0 };
            assert!((d.prob(v) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn unigram_ignores_context() {
        let vocab = Arc::new(Vocabulary::new(["a", "b", "c"]).unwrap());
        let m = NGramModel::train(&[vec![0, 1, 2, 2], vec![1]], 1, 0.5, vocab).unwrap();
        assert_eq!(m.conditional(&[]), m.conditional(&[0, 1, 2]));
    }

    #[test]
    fn empty_corpus_rejected() {
        let vocab = Arc::new(Vocabulary::new(["a"]).unwrap());
        assert!(matches!(NGramModel::train(&[], 2, 0.1, vocab), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn masked_tokens_rejected_in_training() {
        let vocab = Arc::new(Vocabulary::new(["a"]).unwrap());
        let mask = vocab.mask_id();
        assert!(NGramModel::train(&[vec![0, mask]], 2, 0.1, vocab).is_err());
    }

    #[test]
    fn backward_model_sees_reversed_text() {
        let vocab = Arc::new(Vocabulary::new(["a", "b", "c"]).unwrap());
        let m = NGramModel::train_backward(&[vec![0, 1, 2]], 2, 0.1, vocab.clone()).unwrap();
        // reversed: </s> c b a
        assert_eq!(m.count(&[2], 1), 1);
        assert_eq!(m.count(&[1], 0), 1);
        assert_eq!(m.count(&[vocab.eos_id()], 2), 1);
    }

    #[test]
    fn serde_round_trip() {
        let (_, m) = abab();
        let s = serde_json::to_string(&m).unwrap();
        let back: NGramModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn markov_and_normalized(
            docs in prop::collection::vec(prop::collection::vec(0u32..4, 0..12), 1..6),
            history in prop::collection::vec(0u32..5, 0..6),
            extra in prop::collection::vec(0u32..5, 0..6),
            order in 1usize..4,
        ) {
            let vocab = Arc::new(Vocabulary::new(["a", "b", "c", "d"]).unwrap());
            let m = NGramModel::train(&docs, order, 0.1, vocab).unwrap();
            let d = m.conditional(&history);
            prop_assert!(d.validate().is_ok());
            let mut longer = extra.clone();
            longer.extend_from_slice(&history);
            if history.len() >= order - 1 {
                prop_assert_eq!(m.conditional(&longer), d);
            }
        }
    }
}
