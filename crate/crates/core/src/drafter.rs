//! Block drafting with the bidirectional denoiser.
//!
//! A draft starts as the committed prefix followed by `k` masked slots. Each
//! refinement round scores every still-masked slot against the current
//! canvas, fills the most confident ones with their argmax, and repeats until
//! nothing is masked. The candidate lattice is then read off the final canvas
//! with each slot re-masked in turn.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{BidirectionalDenoiser, MaskedSeq};
use crate::prob::Categorical;
use crate::rng::Rng;
use crate::vocab::TokenId;

/// Forward corruption kernel: keep each id with probability `1 - eta`,
/// otherwise replace it with a draw from `noise_prior`.
#[derive(Debug, Clone)]
pub struct CorruptionConfig {
    pub eta: f64,
    pub noise_prior: Categorical,
}

impl CorruptionConfig {
    /// Absorbing kernel: all noise mass on the mask id.
    pub fn absorbing(eta: f64, vocab_len: usize, mask_id: TokenId) -> Self {
        Self {
            eta,
            noise_prior: Categorical::point_mass(vocab_len, mask_id),
        }
    }
}

pub fn corrupt(x: &[TokenId], cfg: &CorruptionConfig, rng: &mut Rng) -> Result<Vec<TokenId>> {
    if !(0.0..=1.0).contains(&cfg.eta) {
        return Err(Error::InvalidConfig("eta must be in [0, 1]".into()));
    }
    Ok(x
        .iter()
        .map(|&t| {
            // Both draws are taken unconditionally so the stream layout does
            // not depend on earlier outcomes.
            let resample = rng.bernoulli(cfg.eta);
            let noise = cfg.noise_prior.sample(rng);
            if resample {
                noise
            } else {
                t
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DrafterConfig {
    /// Refinement rounds `S`.
    pub steps: usize,
    /// Slots filled per round (the final round fills whatever remains).
    pub top_k_refine: usize,
    /// Candidates kept per lattice column.
    pub m_max: usize,
    /// Condition the left-to-right proxy on already-fixed in-block tokens.
    /// Off by default: the proxy sees only the committed prefix.
    pub l2r_uses_past_block: bool,
}

impl Default for DrafterConfig {
    fn default() -> Self {
        Self {
            steps: 1,
            top_k_refine: 1,
            m_max: 15,
            l2r_uses_past_block: false,
        }
    }
}

impl DrafterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.top_k_refine == 0 || self.m_max == 0 {
            return Err(Error::InvalidConfig("steps, top_k_refine and m_max must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RefinementState {
    /// Prefix plus the block being drafted.
    pub canvas: MaskedSeq,
    /// Index of the first block slot in `canvas`.
    pub block_start: usize,
    pub block_len: usize,
    /// Still-masked block offsets (0-based).
    pub masked: BTreeSet<usize>,
    /// Rounds run so far.
    pub step: usize,
    /// Offsets filled in each round, in fill order.
    pub rounds: Vec<Vec<usize>>,
    /// The conditional each block slot was filled from.
    pub fill_dists: Vec<Option<Categorical>>,
}

impl RefinementState {
    pub fn new(prefix: &[TokenId], k: usize, mask_id: TokenId) -> Self {
        Self {
            canvas: MaskedSeq::with_masked_block(prefix, k, mask_id),
            block_start: prefix.len(),
            block_len: k,
            masked: (0..k).collect(),
            step: 0,
            rounds: Vec::new(),
            fill_dists: vec![None; k],
        }
    }

    /// The block's current ids; `None` for masked slots.
    pub fn block(&self) -> Vec<Option<TokenId>> {
        (0..self.block_len).map(|i| self.canvas.get(self.block_start + i)).collect()
    }

    /// The filled draft. Panics if slots remain masked.
    pub fn draft(&self) -> Vec<TokenId> {
        self.block()
            .into_iter()
            .map(|t| t.expect("refinement finished"))
            .collect()
    }

    /// One refinement round. `last` forces every remaining slot to be filled.
    pub fn step_once(&mut self, d: &BidirectionalDenoiser, top_k: usize, last: bool) -> Result<()> {
        let mut scored = Vec::with_capacity(self.masked.len());
        for &off in &self.masked {
            let dist = d.conditional(&self.canvas, self.block_start + off)?;
            let conf = dist.prob(dist.argmax());
            scored.push((off, conf, dist));
        }
        // Most confident first; ties to the leftmost slot.
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let take = if last { scored.len() } else { top_k.min(scored.len()) };
        let mut filled = Vec::with_capacity(take);
        // All conditionals above were computed against the pre-round canvas.
        for (off, _, dist) in scored.into_iter().take(take) {
            self.canvas.fill(self.block_start + off, dist.argmax());
            self.masked.remove(&off);
            self.fill_dists[off] = Some(dist);
            filled.push(off);
        }
        self.rounds.push(filled);
        self.step += 1;
        Ok(())
    }
}

/// One lattice column: candidates by descending log-score, ties by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeColumn {
    pub entries: Vec<(TokenId, f64)>,
}

impl LatticeColumn {
    /// Top `m` entries of a full distribution, zero-probability ids excluded.
    pub fn from_distribution(dist: &Categorical, m: usize) -> Self {
        let entries = dist
            .ranked()
            .into_iter()
            .filter(|&v| dist.log_prob(v) > f64::NEG_INFINITY)
            .take(m)
            .map(|v| (v, dist.log_prob(v)))
            .collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self) -> Option<TokenId> {
        self.entries.first().map(|e| e.0)
    }

    pub fn score_of(&self, token: TokenId) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == token).map(|e| e.1)
    }

    pub fn contains(&self, token: TokenId) -> bool {
        self.entries.iter().any(|e| e.0 == token)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLattice {
    /// Absolute index of the first block position.
    pub start: usize,
    pub columns: Vec<LatticeColumn>,
}

impl TokenLattice {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Number of distinct paths through the lattice.
    pub fn path_count(&self) -> u128 {
        self.columns
            .iter()
            .fold(1u128, |acc, c| acc.saturating_mul(c.len() as u128))
    }

    /// Writes one JSON object per candidate: `{"position", "offset", "rank", "token", "score"}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (offset, col) in self.columns.iter().enumerate() {
            for (rank, &(token, score)) in col.entries.iter().enumerate() {
                let row = LatticeRow {
                    position: self.start + offset,
                    offset,
                    rank,
                    token,
                    score,
                };
                serde_json::to_writer(&mut w, &row)?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct LatticeRow {
    position: usize,
    offset: usize,
    rank: usize,
    token: TokenId,
    score: f64,
}

/// Drafts a `k`-slot block after `prefix` and extracts its candidate lattice.
pub fn refine(
    d: &BidirectionalDenoiser,
    prefix: &[TokenId],
    k: usize,
    cfg: &DrafterConfig,
) -> Result<(RefinementState, TokenLattice)> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::InvalidConfig("draft length must be >= 1".into()));
    }
    let mask_id = d.vocab().mask_id();
    let mut state = RefinementState::new(prefix, k, mask_id);
    while !state.masked.is_empty() {
        let last = state.step + 1 >= cfg.steps;
        state.step_once(d, cfg.top_k_refine, last)?;
    }
    let lattice = extract_lattice(d, &state, cfg.m_max)?;
    Ok((state, lattice))
}

/// Column `i` holds the top candidates for slot `i` given the finished canvas
/// with only slot `i` re-masked.
pub fn extract_lattice(d: &BidirectionalDenoiser, state: &RefinementState, m_max: usize) -> Result<TokenLattice> {
    let mask_id = d.vocab().mask_id();
    let mut canvas = state.canvas.clone();
    let mut columns = Vec::with_capacity(state.block_len);
    for off in 0..state.block_len {
        let pos = state.block_start + off;
        let saved = canvas.get(pos);
        canvas.mask(pos, mask_id);
        let dist = d.conditional(&canvas, pos)?;
        if let Some(t) = saved {
            canvas.fill(pos, t);
        }
        columns.push(LatticeColumn::from_distribution(&dist, m_max));
    }
    Ok(TokenLattice {
        start: state.block_start,
        columns,
    })
}

/// Left-to-right proxy for block offset `i` (1-based): the denoiser's
/// distribution at that slot with the whole block masked, so only the
/// committed prefix conditions it. With `uses_past_block`, the first `i - 1`
/// slots are instead set to `block_so_far`.
pub fn l2r_proxy(
    d: &BidirectionalDenoiser,
    prefix: &[TokenId],
    block_so_far: &[TokenId],
    k: usize,
    i: usize,
    uses_past_block: bool,
) -> Result<Categorical> {
    if i == 0 || i > k {
        return Err(Error::InvalidConfig(format!("proxy offset {i} outside 1..={k}")));
    }
    let mut canvas = MaskedSeq::with_masked_block(prefix, k, d.vocab().mask_id());
    if uses_past_block {
        if block_so_far.len() < i - 1 {
            return Err(Error::InvalidConfig("block_so_far shorter than i - 1".into()));
        }
        for (off, &t) in block_so_far.iter().take(i - 1).enumerate() {
            canvas.fill(prefix.len() + off, t);
        }
    }
    d.conditional(&canvas, prefix.len() + i - 1)
}
