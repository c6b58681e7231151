//! Plain-text corpora: one document per line, optionally prefixed with a
//! task label and a tab.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};
use crate::vocab::{Sequence, TokenId, Vocabulary, UNK_TOKEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Tokenization {
    /// Split on ASCII/Unicode whitespace; case preserved.
    #[default]
    Whitespace,
    /// One token per UTF-8 byte, written as two hex digits.
    Byte,
}

impl Tokenization {
    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            Tokenization::Whitespace => text.split_whitespace().map(str::to_string).collect(),
            Tokenization::Byte => text.bytes().map(|b| format!("{b:02x}")).collect(),
        }
    }

    pub fn detokenize<S: AsRef<str>>(self, tokens: &[S]) -> Result<String> {
        match self {
            Tokenization::Whitespace => Ok(tokens.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ")),
            Tokenization::Byte => {
                let bytes = tokens
                    .iter()
                    .map(|t| u8::from_str_radix(t.as_ref(), 16).map_err(|_| Error::UnknownToken(t.as_ref().to_string())))
                    .collect::<Result<Vec<u8>>>()?;
                String::from_utf8(bytes).map_err(|e| Error::InvalidConfig(format!("byte tokens are not UTF-8: {e}")))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub task: String,
    pub tokens: Vec<String>,
}

/// Task label used when a line carries none.
pub const DEFAULT_TASK: &str = "default";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub tokenization: Tokenization,
}

impl Corpus {
    /// Parses corpus text. Blank lines are skipped; `task<TAB>text` lines
    /// carry a task label.
    pub fn parse(text: &str, tokenization: Tokenization) -> Self {
        let documents = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .filter_map(|line| {
                let (task, body) = match line.split_once('\t') {
                    Some((t, b)) => (t.trim().to_string(), b),
                    None => (DEFAULT_TASK.to_string(), line),
                };
                let tokens = tokenization.tokenize(body);
                (!tokens.is_empty()).then_some(Document { task, tokens })
            })
            .collect();
        Self { documents, tokenization }
    }

    pub fn load(path: &Path, tokenization: Tokenization) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text, tokenization))
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.documents.iter().map(|d| d.tokens.len()).sum()
    }

    /// The first `n - ceil(n * test_fraction)` documents train, the rest test.
    pub fn split(&self, test_fraction: f64) -> Result<(Corpus, Corpus)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidConfig("test_fraction must be in [0, 1)".into()));
        }
        let n = self.documents.len();
        let n_test = (n as f64 * test_fraction).ceil() as usize;
        let cut = n - n_test.min(n);
        let part = |docs: &[Document]| Corpus {
            documents: docs.to_vec(),
            tokenization: self.tokenization,
        };
        Ok((part(&self.documents[..cut]), part(&self.documents[cut..])))
    }

    /// Vocabulary of the corpus: tokens by descending frequency, ties by
    /// text, plus `<unk>` for out-of-vocabulary input.
    pub fn build_vocab(&self) -> Result<Vocabulary> {
        if self.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for d in &self.documents {
            for t in &d.tokens {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
        freq.remove(UNK_TOKEN);
        let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut tokens: Vec<&str> = ranked.into_iter().map(|(t, _)| t).collect();
        tokens.push(UNK_TOKEN);
        Vocabulary::new(tokens)
    }

    /// Documents as id sequences; unknown tokens map to `<unk>`.
    pub fn encode(&self, vocab: &Vocabulary) -> Result<Vec<Vec<TokenId>>> {
        self.documents.iter().map(|d| encode_tokens(&d.tokens, vocab)).collect()
    }
}

pub fn encode_tokens<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Result<Vec<TokenId>> {
    tokens.iter().map(|t| vocab.id_or_unk(t.as_ref())).collect()
}

/// Ids back to text, dropping a trailing EOS.
pub fn decode_ids(ids: &[TokenId], vocab: &Vocabulary, tokenization: Tokenization) -> Result<String> {
    let body = match ids.last() {
        Some(&t) if t == vocab.eos_id() => &ids[..ids.len() - 1],
        _ => ids,
    };
    let toks = body
        .iter()
        .map(|&id| vocab.token(id).ok_or(Error::UnknownTokenId(id)))
        .collect::<Result<Vec<_>>>()?;
    tokenization.detokenize(&toks)
}

/// A decoding request: the first tokens of a held-out document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub task: String,
    pub ids: Sequence,
}

/// Picks up to `count` prompts from `test`, shuffled by `seed`, each made of
/// the document's first `prompt_tokens` tokens. Documents no longer than
/// `prompt_tokens` are skipped so every prompt has a reference continuation.
pub fn select_prompts(test: &Corpus, vocab: &Vocabulary, count: usize, prompt_tokens: usize, seed: u64) -> Result<Vec<Prompt>> {
    if prompt_tokens == 0 {
        return Err(Error::InvalidConfig("prompt_tokens must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..test.len())
        .filter(|&i| test.documents[i].tokens.len() > prompt_tokens)
        .collect();
    // Fisher-Yates with the workload stream.
    let mut rng = Rng::new(seed, Stream::Workload);
    for i in (1..order.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        order.swap(i, j);
    }
    order.truncate(count);
    order
        .into_iter()
        .map(|i| {
            let d = &test.documents[i];
            let ids = encode_tokens(&d.tokens[..prompt_tokens], vocab)?;
            Ok(Prompt {
                task: d.task.clone(),
                ids: Sequence::new(ids, vocab)?,
            })
        })
        .collect()
}

/// Prompts read from a file: one per line, optional `task<TAB>` prefix.
pub fn load_prompts(path: &Path, vocab: &Vocabulary, tokenization: Tokenization) -> Result<Vec<Prompt>> {
    let corpus = Corpus::load(path, tokenization)?;
    corpus
        .documents
        .iter()
        .map(|d| {
            Ok(Prompt {
                task: d.task.clone(),
                ids: Sequence::new(encode_tokens(&d.tokens, vocab)?, vocab)?,
            })
        })
        .collect()
}
