//! Categorical distributions in natural-log space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::vocab::TokenId;

/// Probabilities below this are treated as exactly zero.
pub const PROB_FLOOR: f64 = 1e-300;

/// Tolerance for the sum-to-one check.
pub const NORM_TOL: f64 = 1e-9;

/// Dense distribution over token ids, stored as natural-log probabilities.
/// Zero-probability entries hold `f64::NEG_INFINITY`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    log_probs: Vec<f64>,
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

fn floor_log(p: f64) -> f64 {
    if p < PROB_FLOOR {
        f64::NEG_INFINITY
    } else {
        p.ln()
    }
}

impl Categorical {
    /// Normalizes unnormalized log-weights. Fails on NaN, `+inf`, or when
    /// every weight is `-inf`.
    pub fn from_log_weights(mut weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::InvalidDistribution("NaN or +inf weight".into()));
        }
        let z = log_sum_exp(&weights);
        if z == f64::NEG_INFINITY {
            return Err(Error::InvalidDistribution("no support".into()));
        }
        for w in &mut weights {
            let lp = *w - z;
            *w = if lp.exp() < PROB_FLOOR { f64::NEG_INFINITY } else { lp };
        }
        Ok(Self { log_probs: weights })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidDistribution("weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution("no support".into()));
        }
        Ok(Self {
            log_probs: weights.iter().map(|w| floor_log(w / total)).collect(),
        })
    }

    pub fn point_mass(len: usize, id: TokenId) -> Self {
        let mut log_probs = vec![f64::NEG_INFINITY; len];
        log_probs[id as usize] = 0.0;
        Self { log_probs }
    }

    /// Uniform over the ids for which `support` is true.
    pub fn uniform_where(len: usize, support: impl Fn(TokenId) -> bool) -> Result<Self> {
        let w: Vec<f64> = (0..len as TokenId).map(|i| if support(i) { 1.0 } else { 0.0 }).collect();
        Self::from_weights(&w)
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn log_prob(&self, id: TokenId) -> f64 {
        self.log_probs[id as usize]
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        let p = self.log_probs[id as usize].exp();
        if p < PROB_FLOOR {
            0.0
        } else {
            p
        }
    }

    pub fn probs(&self) -> Vec<f64> {
        (0..self.len() as TokenId).map(|i| self.prob(i)).collect()
    }

    /// Checks the invariants: entries finite or `-inf`, some support, mass 1.
    pub fn validate(&self) -> Result<()> {
        if self.log_probs.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(Error::InvalidDistribution("NaN or +inf entry".into()));
        }
        let total: f64 = self.probs().iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidDistribution(format!("mass {total} != 1")));
        }
        Ok(())
    }

    /// Highest-probability id; ties go to the lowest id.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0usize;
        for (i, &lp) in self.log_probs.iter().enumerate().skip(1) {
            if lp > self.log_probs[best] {
                best = i;
            }
        }
        best as TokenId
    }

    /// Inverse-CDF draw; consumes exactly one uniform from `rng`.
    pub fn sample(&self, rng: &mut Rng) -> TokenId {
        let u = rng.next_f64();
        let mut acc = 0.0;
        let mut last = None;
        for (i, &lp) in self.log_probs.iter().enumerate() {
            if lp == f64::NEG_INFINITY {
                continue;
            }
            acc += lp.exp();
            last = Some(i);
            if u < acc {
                return i as TokenId;
            }
        }
        // Rounding left `acc` a hair under 1.
        last.expect("distribution has support") as TokenId
    }

    /// Ids ordered by probability descending, ties by id ascending.
    pub fn ranked(&self) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = (0..self.len() as TokenId).collect();
        ids.sort_by(|&a, &b| {
            self.log_probs[b as usize]
                .total_cmp(&self.log_probs[a as usize])
                .then(a.cmp(&b))
        });
        ids
    }

    pub fn total_variation(&self, other: &Categorical) -> f64 {
        0.5 * self
            .probs()
            .iter()
            .zip(other.probs())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}
