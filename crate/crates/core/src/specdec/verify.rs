use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::NGramModel;
use crate::prob::Categorical;
use crate::rng::Rng;
use crate::vocab::TokenId;

/// Residual mass below this falls back to sampling from the target.
pub const RESIDUAL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyMode {
    /// Accept with probability `min(1, p/q)`, resample from the residual on rejection.
    Stochastic,
    /// Accept while the drafted token is the target's argmax.
    #[default]
    Greedy,
}

/// `min(1, p / q)`.
pub fn acceptance_ratio(p: f64, q: f64) -> Result<f64> {
    if q <= 0.0 {
        return Err(Error::ZeroDraftProbability);
    }
    Ok((p / q).min(1.0))
}

/// Draws from `max(p - q, 0)` renormalized, or from `p` when that is
/// numerically empty.
pub fn residual_sample(p: &Categorical, q: &Categorical, rng: &mut Rng) -> TokenId {
    let pp = p.probs();
    let residual: Vec<f64> = pp.iter().zip(q.probs()).map(|(a, b)| (a - b).max(0.0)).collect();
    let total: f64 = residual.iter().sum();
    if total < RESIDUAL_EPS {
        return p.sample(rng);
    }
    Categorical::from_weights(&residual)
        .expect("positive residual mass")
        .sample(rng)
}

/// Randomness consumed by verification, one stream per purpose.
#[derive(Debug, Clone)]
pub struct VerifierRngs {
    pub acceptance: Rng,
    pub residual: Rng,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub accepted: Vec<TokenId>,
    pub replacement: Option<TokenId>,
    /// Outcomes for every examined position: all `true` up to the first
    /// rejection, which is the final entry when present.
    pub accept_bits: Vec<bool>,
    /// `p(path_i | prefix, path_<i)` for every path position.
    pub p_probs: Vec<f64>,
    /// `q_i(path_i)` for every path position.
    pub q_probs: Vec<f64>,
}

impl Verification {
    pub fn l_acc(&self) -> usize {
        self.accepted.len()
    }
}

/// Checks `path` against the target left to right. `q_dists[i]` is the
/// proposal distribution that position `i` is judged against.
pub fn verify_block(
    target: &NGramModel,
    prefix: &[TokenId],
    path: &[TokenId],
    q_dists: &[Categorical],
    mode: VerifyMode,
    rngs: &mut VerifierRngs,
) -> Result<Verification> {
    if q_dists.len() < path.len() {
        return Err(Error::InvalidConfig("one proposal distribution per path position required".into()));
    }
    // One batched pass: every conditional along the drafted path.
    let mut history = prefix.to_vec();
    let mut p_dists = Vec::with_capacity(path.len());
    for &t in path {
        p_dists.push(target.conditional(&history));
        history.push(t);
    }
    let p_probs: Vec<f64> = path.iter().zip(&p_dists).map(|(&t, p)| p.prob(t)).collect();
    let q_probs: Vec<f64> = path.iter().zip(q_dists).map(|(&t, q)| q.prob(t)).collect();

    let mut accepted = Vec::with_capacity(path.len());
    let mut accept_bits = Vec::with_capacity(path.len());
    let mut replacement = None;
    for (i, &t) in path.iter().enumerate() {
        let ok = match mode {
            VerifyMode::Greedy => p_dists[i].argmax() == t,
            VerifyMode::Stochastic => {
                let alpha = acceptance_ratio(p_probs[i], q_probs[i])?;
                rngs.acceptance.next_f64() < alpha
            }
        };
        accept_bits.push(ok);
        if ok {
            accepted.push(t);
            continue;
        }
        replacement = Some(match mode {
            VerifyMode::Greedy => p_dists[i].argmax(),
            VerifyMode::Stochastic => residual_sample(&p_dists[i], &q_dists[i], &mut rngs.residual),
        });
        break;
    }
    Ok(Verification {
        accepted,
        replacement,
        accept_bits,
        p_probs,
        q_probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use crate::vocab::Vocabulary;
    use std::sync::Arc;

    fn rngs(seed: u64) -> VerifierRngs {
        VerifierRngs {
            acceptance: Rng::new(seed, Stream::Acceptance),
            residual: Rng::new(seed, Stream::Residual),
        }
    }

    #[test]
    fn ratio_examples() {
        assert!((acceptance_ratio(0.2, 0.5).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(acceptance_ratio(0.6, 0.3).unwrap(), 1.0);
        assert_eq!(acceptance_ratio(0.37, 0.37).unwrap(), 1.0);
        assert!(matches!(acceptance_ratio(0.1, 0.0), Err(Error::ZeroDraftProbability)));
    }

    #[test]
    fn residual_single_survivor() {
        let p = Categorical::from_weights(&[0.5, 0.3, 0.2]).unwrap();
        let q = Categorical::from_weights(&[0.2, 0.5, 0.3]).unwrap();
        let mut r = Rng::new(1, Stream::Residual);
        for _ in 0..200 {
            assert_eq!(residual_sample(&p, &q, &mut r), 0);
        }
    }

    #[test]
    fn residual_equal_falls_back_to_target() {
        let p = Categorical::from_weights(&[0.25, 0.5, 0.25]).unwrap();
        let mut r = Rng::new(2, Stream::Residual);
        let n = 60_000;
        let ones = (0..n).filter(|_| residual_sample(&p, &p, &mut r) == 1).count();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn residual_one_hot_proposal() {
        let p = Categorical::from_weights(&[1.0, 1.0, 1.0]).unwrap();
        let q = Categorical::point_mass(3, 1);
        let mut r = Rng::new(3, Stream::Residual);
        let n = 60_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[residual_sample(&p, &q, &mut r) as usize] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[0] as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    fn target() -> NGramModel {
        let vocab = Arc::new(Vocabulary::new(["a", "b", "c"]).unwrap());
        NGramModel::train(&[vec![0, 1, 2, 0, 1, 2], vec![0, 1, 2]], 2, 0.1, vocab).unwrap()
    }

    fn greedy_rollout(m: &NGramModel, prefix: &[TokenId], n: usize) -> Vec<TokenId> {
        let mut h = prefix.to_vec();
        for _ in 0..n {
            h.push(m.conditional(&h).argmax());
        }
        h[prefix.len()..].to_vec()
    }

    #[test]
    fn greedy_accepts_target_rollout() {
        let m = target();
        let path = greedy_rollout(&m, &[0], 4);
        let q = vec![Categorical::point_mass(6, 0); 4];
        let v = verify_block(&m, &[0], &path, &q, VerifyMode::Greedy, &mut rngs(0)).unwrap();
        assert_eq!(v.accepted, path);
        assert_eq!(v.replacement, None);
        assert_eq!(v.accept_bits, vec![true; 4]);
    }

    #[test]
    fn greedy_first_mismatch() {
        let m = target();
        let best = m.conditional(&[0]).argmax();
        let wrong = (best + 1) % 3;
        let q = vec![Categorical::point_mass(6, 0); 2];
        let v = verify_block(&m, &[0], &[wrong, 0], &q, VerifyMode::Greedy, &mut rngs(0)).unwrap();
        assert_eq!(v.l_acc(), 0);
        assert_eq!(v.replacement, Some(best));
        assert_eq!(v.accept_bits, vec![false]);
    }

    #[test]
    fn stochastic_accepts_when_proposal_equals_target() {
        let m = target();
        let path = vec![1, 2, 0, 2];
        let mut h = vec![0];
        let mut q = Vec::new();
        for &t in &path {
            q.push(m.conditional(&h));
            h.push(t);
        }
        for seed in 0..50 {
            let v = verify_block(&m, &[0], &path, &q, VerifyMode::Stochastic, &mut rngs(seed)).unwrap();
            assert_eq!(v.accepted, path);
        }
    }

    #[test]
    fn bits_are_prefix_consistent() {
        let m = target();
        let path = vec![2, 2, 2, 2];
        let q = vec![Categorical::point_mass(6, 2); 4];
        for seed in 0..100 {
            let v = verify_block(&m, &[0], &path, &q, VerifyMode::Stochastic, &mut rngs(seed)).unwrap();
            let l: usize = (1..=v.accept_bits.len()).map(|i| v.accept_bits[..i].iter().all(|&b| b) as usize).sum();
            assert_eq!(l, v.l_acc());
            assert_eq!(v.replacement.is_some(), v.l_acc() < path.len());
            if let Some(r) = v.replacement {
                assert_ne!(r, 2, "point-mass residual excludes the proposed token");
            }
        }
    }
}
