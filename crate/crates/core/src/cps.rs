//! Causal-consistency path search over a draft lattice.
//!
//! Columns are first pruned to the smallest top-`m` prefix whose mass reaches
//! `tau` (capped at `m_max`, EOS optionally kept). A left-to-right beam search
//! then maximizes
//!
//! ```text
//! S(path) = sum_i [ lambda * dlm_i(path_i) + (1 - lambda) * ln p_proxy(path_i | prefix, path_<i) ]
//! ```
//!
//! Hypotheses that place EOS are frozen, and expansion never goes past the
//! first column whose top candidate is EOS.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::drafter::{LatticeColumn, TokenLattice};
use crate::error::{Error, Result};
use crate::models::NGramModel;
use crate::vocab::TokenId;

/// How cumulative mass is measured when pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassMode {
    /// Column scores are full-vocabulary log-probabilities.
    FullVocabulary,
    /// Renormalize over the candidates present in the column.
    Truncated,
}

/// Which columns cap the search depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EosStop {
    /// First column whose top candidate is EOS.
    Argmax,
    /// First column that contains EOS at all.
    Any,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub tau: f64,
    pub m_max: usize,
    pub keep_eos: bool,
    pub mass_mode: MassMode,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            tau: 0.8,
            m_max: 15,
            keep_eos: true,
            mass_mode: MassMode::FullVocabulary,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig("tau must be in (0, 1]".into()));
        }
        if self.m_max == 0 {
            return Err(Error::InvalidConfig("m_max must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpsConfig {
    pub beam: usize,
    pub lambda: f64,
    pub prune: PruneConfig,
    pub eos_stop: EosStop,
}

impl Default for CpsConfig {
    fn default() -> Self {
        Self {
            beam: 3,
            lambda: 0.5,
            prune: PruneConfig::default(),
            eos_stop: EosStop::Argmax,
        }
    }
}

impl CpsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::InvalidConfig("beam must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig("lambda must be in [0, 1]".into()));
        }
        self.prune.validate()
    }
}

/// Keeps the smallest top-`m` prefix with mass `>= tau`, at most `m_max`.
/// If EOS was among the top `m_max` candidates but got cut, it is re-appended.
pub fn prune_column(column: &LatticeColumn, cfg: &PruneConfig, eos_id: TokenId) -> Result<LatticeColumn> {
    if column.is_empty() {
        return Err(Error::EmptyColumn);
    }
    let cap = cfg.m_max.min(column.len());
    let norm = match cfg.mass_mode {
        MassMode::FullVocabulary => 1.0,
        MassMode::Truncated => column.entries[..cap].iter().map(|e| e.1.exp()).sum(),
    };
    let mut keep = cap;
    let mut mass = 0.0;
    for (m, e) in column.entries[..cap].iter().enumerate() {
        mass += e.1.exp() / norm;
        if mass >= cfg.tau {
            keep = m + 1;
            break;
        }
    }
    let mut entries = column.entries[..keep].to_vec();
    if cfg.keep_eos && !entries.iter().any(|e| e.0 == eos_id) {
        if let Some(&e) = column.entries[keep..cap].iter().find(|e| e.0 == eos_id) {
            entries.push(e);
        }
    }
    Ok(LatticeColumn { entries })
}

pub fn prune_lattice(lattice: &TokenLattice, cfg: &PruneConfig, eos_id: TokenId) -> Result<TokenLattice> {
    Ok(TokenLattice {
        start: lattice.start,
        columns: lattice
            .columns
            .iter()
            .map(|c| prune_column(c, cfg, eos_id))
            .collect::<Result<_>>()?,
    })
}

/// Search depth: the 1-based index of the first column that triggers the
/// EOS stop rule, or the full lattice length.
pub fn depth_cap(lattice: &TokenLattice, eos_id: TokenId, rule: EosStop) -> usize {
    lattice
        .columns
        .iter()
        .position(|c| match rule {
            EosStop::Argmax => c.top() == Some(eos_id),
            EosStop::Any => c.contains(eos_id),
        })
        .map_or(lattice.len(), |i| i + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub tokens: Vec<TokenId>,
    pub score: f64,
    /// Per-step drafter log-scores.
    pub dlm: Vec<f64>,
    /// Per-step proxy log-probabilities.
    pub ngram: Vec<f64>,
}

impl Path {
    fn empty() -> Self {
        Self {
            tokens: Vec::new(),
            score: 0.0,
            dlm: Vec::new(),
            ngram: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Recomputes `S` from the stored components.
    pub fn recomputed_score(&self, lambda: f64) -> f64 {
        self.dlm
            .iter()
            .zip(&self.ngram)
            .map(|(d, n)| lambda * d + (1.0 - lambda) * n)
            .sum()
    }

    pub fn ends_with(&self, token: TokenId) -> bool {
        self.tokens.last() == Some(&token)
    }

    fn extend(&self, token: TokenId, dlm: f64, ngram: f64, lambda: f64) -> Self {
        let mut next = self.clone();
        next.tokens.push(token);
        next.dlm.push(dlm);
        next.ngram.push(ngram);
        next.score += lambda * dlm + (1.0 - lambda) * ngram;
        next
    }
}

/// Higher score first, then lexicographically smaller token sequence.
fn rank(a: &Path, b: &Path) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens))
}

fn proxy_log_prob(proxy: &NGramModel, prefix: &[TokenId], path: &[TokenId], token: TokenId) -> f64 {
    // Only the last order - 1 ids of prefix ++ path matter.
    let n = proxy.order() - 1;
    let from_path = path.len().min(n);
    let from_prefix = (n - from_path).min(prefix.len());
    let mut history = Vec::with_capacity(n);
    history.extend_from_slice(&prefix[prefix.len() - from_prefix..]);
    history.extend_from_slice(&path[path.len() - from_path..]);
    proxy.log_prob(&history, token)
}

/// `S(path)` with its per-step components.
pub fn path_score(
    prefix: &[TokenId],
    tokens: &[TokenId],
    lattice: &TokenLattice,
    proxy: &NGramModel,
    lambda: f64,
) -> Result<Path> {
    let mut path = Path::empty();
    for (offset, &token) in tokens.iter().enumerate() {
        let dlm = lattice
            .columns
            .get(offset)
            .and_then(|c| c.score_of(token))
            .ok_or(Error::OffLatticeToken { offset, token })?;
        let ng = proxy_log_prob(proxy, prefix, &path.tokens, token);
        path = path.extend(token, dlm, ng, lambda);
    }
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub path: Path,
    /// Candidate extensions scored.
    pub expansions: usize,
    /// Search depth after the EOS stop rule.
    pub depth: usize,
    /// Column sizes after pruning.
    pub column_sizes: Vec<usize>,
}

/// Beam search on the pruned lattice.
pub fn beam_search(prefix: &[TokenId], lattice: &TokenLattice, proxy: &NGramModel, cfg: &CpsConfig) -> Result<SearchOutcome> {
    cfg.validate()?;
    if lattice.is_empty() {
        return Err(Error::InvalidConfig("empty lattice".into()));
    }
    let eos = proxy.vocab().eos_id();
    let pruned = prune_lattice(lattice, &cfg.prune, eos)?;
    let depth = depth_cap(&pruned, eos, cfg.eos_stop);
    let mut beams = vec![Path::empty()];
    let mut finished: Vec<Path> = Vec::new();
    let mut expansions = 0usize;
    for col in &pruned.columns[..depth] {
        let mut pool = Vec::with_capacity(beams.len() * col.len());
        for beam in &beams {
            for &(token, dlm) in &col.entries {
                expansions += 1;
                let ng = proxy_log_prob(proxy, prefix, &beam.tokens, token);
                let cand = beam.extend(token, dlm, ng, cfg.lambda);
                if token == eos {
                    finished.push(cand);
                } else {
                    pool.push(cand);
                }
            }
        }
        pool.sort_by(rank);
        pool.truncate(cfg.beam);
        beams = pool;
        if beams.is_empty() {
            break;
        }
    }
    finished.extend(beams);
    finished.sort_by(rank);
    let path = finished.into_iter().next().expect("at least one hypothesis");
    Ok(SearchOutcome {
        path,
        expansions,
        depth,
        column_sizes: pruned.columns.iter().map(LatticeColumn::len).collect(),
    })
}

/// Path of per-column top candidates, cut at the same EOS depth (and after
/// the first EOS it places). Used when path search is disabled.
pub fn argmax_path(prefix: &[TokenId], lattice: &TokenLattice, proxy: &NGramModel, lambda: f64, rule: EosStop) -> Result<Path> {
    let eos = proxy.vocab().eos_id();
    let depth = depth_cap(lattice, eos, rule);
    let mut tokens = Vec::with_capacity(depth);
    for col in &lattice.columns[..depth] {
        let t = col.top().ok_or(Error::EmptyColumn)?;
        tokens.push(t);
        if t == eos {
            break;
        }
    }
    path_score(prefix, &tokens, lattice, proxy, lambda)
}

pub const DEFAULT_ENUMERATION_BUDGET: u128 = 1 << 20;

/// Exhaustive optimum of `S` over all lattice paths under the same EOS rules
/// as [`beam_search`] (no pruning). Test oracle.
pub fn brute_force_best(
    prefix: &[TokenId],
    lattice: &TokenLattice,
    proxy: &NGramModel,
    lambda: f64,
    rule: EosStop,
    budget: u128,
) -> Result<Path> {
    let eos = proxy.vocab().eos_id();
    let depth = depth_cap(lattice, eos, rule);
    let columns = &lattice.columns[..depth];
    if columns.iter().any(LatticeColumn::is_empty) {
        return Err(Error::EmptyColumn);
    }
    let paths = columns.iter().fold(1u128, |acc, c| acc.saturating_mul(c.len() as u128));
    if paths > budget {
        return Err(Error::BudgetExceeded { paths, budget });
    }
    let mut best: Option<Path> = None;
    let mut stack = vec![Path::empty()];
    while let Some(partial) = stack.pop() {
        let d = partial.len();
        if d == depth || partial.ends_with(eos) {
            if best.as_ref().is_none_or(|b| rank(&partial, b) == Ordering::Less) {
                best = Some(partial);
            }
            continue;
        }
        for &(token, dlm) in &columns[d].entries {
            let ng = proxy_log_prob(proxy, prefix, &partial.tokens, token);
            stack.push(partial.extend(token, dlm, ng, lambda));
        }
    }
    Ok(best.expect("lattice has at least one path"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::Vocabulary;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn col(probs: &[(TokenId, f64)]) -> LatticeColumn {
        LatticeColumn {
            entries: probs.iter().map(|&(t, p)| (t, p.ln())).collect(),
        }
    }

    fn proxy() -> NGramModel {
        let vocab = Arc::new(Vocabulary::new(["a", "b", "c", "d"]).unwrap());
        NGramModel::train(&[vec![0, 1, 2, 3], vec![1, 2, 0], vec![3, 0, 1]], 3, 0.1, vocab).unwrap()
    }

    const EOS: TokenId = 4;

    #[test]
    fn worked_pruning_example() {
        let c = col(&[(0, 0.5), (1, 0.35), (2, 0.10), (3, 0.05)]);
        let cfg = PruneConfig { keep_eos: false, ..Default::default() };
        assert_eq!(prune_column(&c, &cfg, EOS).unwrap().len(), 2);
    }

    #[test]
    fn full_mass_keeps_capped_column() {
        let c = col(&[(0, 0.5), (1, 0.35), (2, 0.10), (3, 0.05)]);
        let cfg = PruneConfig { tau: 1.0, m_max: 3, keep_eos: false, ..Default::default() };
        assert_eq!(prune_column(&c, &cfg, EOS).unwrap().len(), 3);
        let cfg = PruneConfig { tau: 1.0, m_max: 15, keep_eos: false, ..Default::default() };
        assert_eq!(prune_column(&c, &cfg, EOS).unwrap().len(), 4);
    }

    #[test]
    fn cap_binds_before_tau() {
        let c = col(&[(0, 0.3), (1, 0.3), (2, 0.2), (3, 0.2)]);
        let cfg = PruneConfig { tau: 0.8, m_max: 2, keep_eos: false, ..Default::default() };
        assert_eq!(prune_column(&c, &cfg, EOS).unwrap().len(), 2);
    }

    #[test]
    fn eos_is_reappended() {
        let c = col(&[(0, 0.6), (1, 0.3), (EOS, 0.05), (3, 0.05)]);
        let cfg = PruneConfig::default();
        let p = prune_column(&c, &cfg, EOS).unwrap();
        assert_eq!(p.entries.iter().map(|e| e.0).collect::<Vec<_>>(), vec![0, 1, EOS]);
        let off = PruneConfig { keep_eos: false, ..Default::default() };
        assert_eq!(prune_column(&c, &off, EOS).unwrap().len(), 2);
        // EOS below the cap is not a candidate to bring back.
        let capped = PruneConfig { m_max: 2, ..Default::default() };
        assert_eq!(prune_column(&c, &capped, EOS).unwrap().len(), 2);
    }

    #[test]
    fn truncated_mass_mode() {
        // Candidates hold 0.5 of the full mass; renormalized they are 0.6/0.4.
        let c = col(&[(0, 0.3), (1, 0.2)]);
        let full = PruneConfig { tau: 0.55, keep_eos: false, ..Default::default() };
        assert_eq!(prune_column(&c, &full, EOS).unwrap().len(), 2);
        let trunc = PruneConfig { mass_mode: MassMode::Truncated, ..full };
        assert_eq!(prune_column(&c, &trunc, EOS).unwrap().len(), 1);
    }

    #[test]
    fn empty_column_errors() {
        let c = LatticeColumn { entries: vec![] };
        assert!(matches!(prune_column(&c, &PruneConfig::default(), EOS), Err(Error::EmptyColumn)));
    }

    #[test]
    fn score_arithmetic() {
        let p = proxy();
        let lattice = TokenLattice {
            start: 2,
            columns: vec![col(&[(1, 0.5)]), col(&[(2, 0.25)])],
        };
        let prefix = [0];
        let only_dlm = path_score(&prefix, &[1, 2], &lattice, &p, 1.0).unwrap();
        assert!((only_dlm.score - (0.5f64.ln() + 0.25f64.ln())).abs() < 1e-12);
        let only_ng = path_score(&prefix, &[1, 2], &lattice, &p, 0.0).unwrap();
        let expect = p.log_prob(&[0], 1) + p.log_prob(&[0, 1], 2);
        assert!((only_ng.score - expect).abs() < 1e-12);
        let half = path_score(&prefix, &[1, 2], &lattice, &p, 0.5).unwrap();
        assert!((half.score - half.recomputed_score(0.5)).abs() < 1e-12);
        assert!(matches!(
            path_score(&prefix, &[3], &lattice, &p, 0.5),
            Err(Error::OffLatticeToken { offset: 0, token: 3 })
        ));
    }

    #[test]
    fn mixing_is_arithmetic() {
        let dlm = [-0.1, -0.2];
        let ng = [-0.3, -0.4];
        let path = Path {
            tokens: vec![0, 1],
            score: 0.0,
            dlm: dlm.to_vec(),
            ngram: ng.to_vec(),
        };
        assert!((path.recomputed_score(0.5) - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn forced_path_for_single_candidates() {
        let p = proxy();
        let lattice = TokenLattice {
            start: 1,
            columns: vec![col(&[(2, 0.9)]), col(&[(0, 0.8)]), col(&[(3, 0.7)])],
        };
        for beam in 1..4 {
            let cfg = CpsConfig { beam, ..Default::default() };
            let out = beam_search(&[1], &lattice, &p, &cfg).unwrap();
            assert_eq!(out.path.tokens, vec![2, 0, 3]);
        }
    }

    #[test]
    fn eos_argmax_caps_depth() {
        let p = proxy();
        let lattice = TokenLattice {
            start: 1,
            columns: vec![
                col(&[(0, 0.6), (1, 0.4)]),
                col(&[(1, 0.6), (2, 0.4)]),
                col(&[(EOS, 0.7), (2, 0.3)]),
                col(&[(3, 0.9), (0, 0.1)]),
                col(&[(3, 0.9), (0, 0.1)]),
            ],
        };
        assert_eq!(depth_cap(&lattice, EOS, EosStop::Argmax), 3);
        let out = beam_search(&[1], &lattice, &p, &CpsConfig::default()).unwrap();
        assert!(out.path.len() <= 3);
        assert_eq!(out.depth, 3);
    }

    #[test]
    fn two_by_two_exhaustive() {
        let p = proxy();
        let lattice = TokenLattice {
            start: 1,
            columns: vec![col(&[(0, 0.6), (1, 0.4)]), col(&[(1, 0.5), (2, 0.5)])],
        };
        let best = brute_force_best(&[3], &lattice, &p, 0.5, EosStop::Argmax, 100).unwrap();
        let mut all = Vec::new();
        for a in [0, 1] {
            for b in [1, 2] {
                all.push(path_score(&[3], &[a, b], &lattice, &p, 0.5).unwrap().score);
            }
        }
        let max = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best.score, max);
    }

    #[test]
    fn budget_enforced() {
        let p = proxy();
        let lattice = TokenLattice {
            start: 1,
            columns: vec![col(&[(0, 0.5), (1, 0.5)]); 4],
        };
        assert!(matches!(
            brute_force_best(&[3], &lattice, &p, 0.5, EosStop::Argmax, 15),
            Err(Error::BudgetExceeded { paths: 16, .. })
        ));
    }

    fn random_lattice() -> impl Strategy<Value = TokenLattice> {
        let column = prop::collection::vec((0u32..5, 0.01f64..1.0), 1..=5).prop_map(|raw| {
            let mut seen = Vec::new();
            let mut entries = Vec::new();
            for (t, w) in raw {
                if !seen.contains(&t) {
                    seen.push(t);
                    entries.push((t, w));
                }
            }
            // Scores are log-probabilities of a distribution whose remaining
            // mass sits off-column.
            let z: f64 = entries.iter().map(|e| e.1).sum::<f64>() * 1.25;
            let mut entries: Vec<(TokenId, f64)> = entries.into_iter().map(|(t, w)| (t, (w / z).ln())).collect();
            entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            LatticeColumn { entries }
        });
        prop::collection::vec(column, 1..=6).prop_map(|columns| TokenLattice { start: 1, columns })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn oracle_dominates_and_matches_wide_beam(lattice in random_lattice(), beam in 1usize..4, lambda in 0.0f64..=1.0) {
            let p = proxy();
            let best = brute_force_best(&[0], &lattice, &p, lambda, EosStop::Argmax, DEFAULT_ENUMERATION_BUDGET).unwrap();
            let prune = PruneConfig { tau: 1.0, m_max: 5, ..Default::default() };
            let narrow = beam_search(&[0], &lattice, &p, &CpsConfig { beam, lambda, prune: prune.clone(), ..Default::default() }).unwrap();
            prop_assert!(best.score >= narrow.path.score - 1e-12);
            let wide = lattice.path_count() as usize;
            let full = beam_search(&[0], &lattice, &p, &CpsConfig { beam: wide, lambda, prune, ..Default::default() }).unwrap();
            prop_assert!((full.path.score - best.score).abs() < 1e-9);
            prop_assert_eq!(full.path.tokens, best.tokens);
        }

        #[test]
        fn returned_paths_are_valid(lattice in random_lattice(), beam in 1usize..4, tau in 0.1f64..=1.0) {
            let p = proxy();
            let cfg = CpsConfig { beam, prune: PruneConfig { tau, m_max: 3, ..Default::default() }, ..Default::default() };
            let out = beam_search(&[0], &lattice, &p, &cfg).unwrap();
            let pruned = prune_lattice(&lattice, &cfg.prune, EOS).unwrap();
            for (i, t) in out.path.tokens.iter().enumerate() {
                prop_assert!(pruned.columns[i].contains(*t));
                if *t == EOS {
                    prop_assert_eq!(i + 1, out.path.len());
                }
            }
            prop_assert!((out.path.score - out.path.recomputed_score(cfg.lambda)).abs() < 1e-9);
            let max_col = out.column_sizes.iter().copied().max().unwrap();
            prop_assert!(out.expansions <= cfg.beam * max_col * out.depth);
        }

        #[test]
        fn pruned_mass_or_cap(probs in prop::collection::vec(0.001f64..1.0, 1..30), tau in 0.05f64..=1.0, m_max in 1usize..20) {
            let z: f64 = probs.iter().sum();
            let mut entries: Vec<(TokenId, f64)> = probs.iter().enumerate().map(|(i, p)| (i as TokenId, (p / z).ln())).collect();
            entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let c = LatticeColumn { entries };
            let cfg = PruneConfig { tau, m_max, keep_eos: false, ..Default::default() };
            let kept = prune_column(&c, &cfg, 999).unwrap();
            let mass: f64 = kept.entries.iter().map(|e| e.1.exp()).sum();
            prop_assert!(mass >= tau - 1e-12 || kept.len() == m_max.min(c.len()));
        }
    }
}
