//! Token vocabulary and committed token sequences.
//!
//! Ids are dense `0..len`. Three reserved symbols are appended after the
//! regular tokens: end-of-sequence, the mask placeholder used by the drafter,
//! and a begin-of-sequence pad used only inside n-gram contexts. Mask and BOS
//! are never emitted; every distribution in the crate assigns them zero mass.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const EOS_TOKEN: &str = "</s>";
pub const MASK_TOKEN: &str = "<mask>";
pub const BOS_TOKEN: &str = "<s>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    eos_id: TokenId,
    mask_id: TokenId,
    bos_id: TokenId,
    unk_id: Option<TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    eos_id: TokenId,
    mask_id: TokenId,
    bos_id: TokenId,
    unk_id: Option<TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from regular tokens in the given order; reserved
    /// symbols get the three ids following them. A regular token spelled
    /// `<unk>` becomes the out-of-vocabulary fallback.
    pub fn new<I, S>(regular: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = regular.into_iter().map(Into::into).collect();
        for reserved in [EOS_TOKEN, MASK_TOKEN, BOS_TOKEN] {
            if tokens.iter().any(|t| t == reserved) {
                return Err(Error::InvalidVocabulary(format!("{reserved} is reserved")));
            }
        }
        let n = tokens.len() as TokenId;
        tokens.extend([EOS_TOKEN.to_string(), MASK_TOKEN.to_string(), BOS_TOKEN.to_string()]);
        let unk_id = tokens.iter().position(|t| t == UNK_TOKEN).map(|i| i as TokenId);
        Self::from_parts(VocabularyRepr {
            tokens,
            eos_id: n,
            mask_id: n + 1,
            bos_id: n + 2,
            unk_id,
        })
    }

    fn from_parts(repr: VocabularyRepr) -> Result<Self> {
        let len = repr.tokens.len() as TokenId;
        let mut index = HashMap::with_capacity(repr.tokens.len());
        for (i, t) in repr.tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate token {t:?}")));
            }
        }
        let specials = [repr.eos_id, repr.mask_id, repr.bos_id];
        if specials.iter().any(|&id| id >= len) {
            return Err(Error::InvalidVocabulary("reserved id out of range".into()));
        }
        if repr.eos_id == repr.mask_id || repr.eos_id == repr.bos_id || repr.mask_id == repr.bos_id {
            return Err(Error::InvalidVocabulary("reserved ids must be distinct".into()));
        }
        if let Some(unk) = repr.unk_id {
            if unk >= len || specials.contains(&unk) {
                return Err(Error::InvalidVocabulary("bad unk id".into()));
            }
        }
        Ok(Self {
            tokens: repr.tokens,
            index,
            eos_id: repr.eos_id,
            mask_id: repr.mask_id,
            bos_id: repr.bos_id,
            unk_id: repr.unk_id,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn mask_id(&self) -> TokenId {
        self.mask_id
    }

    pub fn bos_id(&self) -> TokenId {
        self.bos_id
    }

    pub fn unk_id(&self) -> Option<TokenId> {
        self.unk_id
    }

    /// Tokens a model may put probability mass on: everything except mask and BOS.
    pub fn is_emittable(&self, id: TokenId) -> bool {
        (id as usize) < self.tokens.len() && id != self.mask_id && id != self.bos_id
    }

    pub fn emittable_count(&self) -> usize {
        self.tokens.len() - 2
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Looks a token up, falling back to `<unk>` when the vocabulary has one.
    pub fn id_or_unk(&self, token: &str) -> Result<TokenId> {
        self.id(token)
            .or(self.unk_id)
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn check_id(&self, id: TokenId) -> Result<()> {
        if (id as usize) < self.tokens.len() {
            Ok(())
        } else {
            Err(Error::UnknownTokenId(id))
        }
    }
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;

    fn try_from(repr: VocabularyRepr) -> Result<Self> {
        Self::from_parts(repr)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: v.tokens,
            eos_id: v.eos_id,
            mask_id: v.mask_id,
            bos_id: v.bos_id,
            unk_id: v.unk_id,
        }
    }
}

/// A committed token sequence: valid ids, no mask or BOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Sequence(Vec<TokenId>);

impl Sequence {
    pub fn new(ids: Vec<TokenId>, vocab: &Vocabulary) -> Result<Self> {
        for &id in &ids {
            vocab.check_id(id)?;
            if !vocab.is_emittable(id) {
                return Err(Error::ReservedToken(id));
            }
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_ids(self) -> Vec<TokenId> {
        self.0
    }
}

impl AsRef<[TokenId]> for Sequence {
    fn as_ref(&self) -> &[TokenId] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_follow_regular_tokens() {
        let v = Vocabulary::new(["a", "b"]).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.eos_id(), 2);
        assert_eq!(v.mask_id(), 3);
        assert_eq!(v.bos_id(), 4);
        assert_eq!(v.emittable_count(), 3);
        assert!(v.is_emittable(v.eos_id()));
        assert!(!v.is_emittable(v.mask_id()));
    }

    #[test]
    fn bijection_and_duplicates() {
        let v = Vocabulary::new(["x", "y", "z"]).unwrap();
        for id in 0..v.len() as TokenId {
            assert_eq!(v.id(v.token(id).unwrap()), Some(id));
        }
        assert!(Vocabulary::new(["x", "x"]).is_err());
        assert!(Vocabulary::new(["<mask>"]).is_err());
    }

    #[test]
    fn unk_fallback() {
        let v = Vocabulary::new(["<unk>", "a"]).unwrap();
        assert_eq!(v.id_or_unk("zzz").unwrap(), 0);
        let w = Vocabulary::new(["a"]).unwrap();
        assert!(matches!(w.id_or_unk("zzz"), Err(Error::UnknownToken(_))));
    }

    #[test]
    fn serde_validates() {
        let v = Vocabulary::new(["a", "b"]).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        let bad = s.replace("\"mask_id\":3", "\"mask_id\":2");
        assert!(serde_json::from_str::<Vocabulary>(&bad).is_err());
    }

    #[test]
    fn sequence_rejects_mask() {
        let v = Vocabulary::new(["a"]).unwrap();
        assert!(Sequence::new(vec![0, v.eos_id()], &v).is_ok());
        assert!(matches!(Sequence::new(vec![v.mask_id()], &v), Err(Error::ReservedToken(_))));
        assert!(Sequence::new(vec![42], &v).is_err());
    }
}
