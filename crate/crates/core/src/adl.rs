//! Adaptive draft length.
//!
//! Tracks EMAs of the EOS-aware generated length and of the accepted length,
//! then sets the next block size to `ceil(ema_gen + delta * [ema_acc >= ema_gen])`
//! clipped to `[k_min, k_max]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdlConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub delta: usize,
    pub rho: f64,
}

impl Default for AdlConfig {
    fn default() -> Self {
        Self {
            k_min: 20,
            k_max: 30,
            delta: 10,
            rho: 0.5,
        }
    }
}

impl AdlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_min < 1 || self.k_min > self.k_max {
            return Err(Error::InvalidConfig("need 1 <= k_min <= k_max".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidConfig("rho must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdlState {
    pub ema_gen: f64,
    pub ema_acc: f64,
    pub k_next: usize,
}

impl AdlState {
    /// EMAs start at zero; the first block uses `k_max`.
    pub fn initial(cfg: &AdlConfig) -> Self {
        Self {
            ema_gen: 0.0,
            ema_acc: 0.0,
            k_next: cfg.k_max,
        }
    }
}

/// `min(s - 1, k)` where `s` is the 1-based index of the first EOS in the raw
/// draft (infinite when there is none).
pub fn gen_signal(draft: &[TokenId], k: usize, eos_id: TokenId) -> usize {
    draft.iter().position(|&t| t == eos_id).map_or(k, |i| i.min(k))
}

pub fn update(state: &AdlState, l_gen: usize, l_acc: usize, cfg: &AdlConfig) -> AdlState {
    let rho = cfg.rho;
    // `e + rho * (x - e)` equals `(1 - rho) * e + rho * x` but cannot round
    // past `x` when approaching it from below, which the ceiling would turn
    // into a whole extra token.
    let ema_gen = state.ema_gen + rho * (l_gen as f64 - state.ema_gen);
    let ema_acc = state.ema_acc + rho * (l_acc as f64 - state.ema_acc);
    AdlState {
        ema_gen,
        ema_acc,
        k_next: next_length(ema_gen, ema_acc, cfg),
    }
}

/// The clipped controller on already-updated EMAs.
pub fn next_length(ema_gen: f64, ema_acc: f64, cfg: &AdlConfig) -> usize {
    let bump = if ema_acc >= ema_gen { cfg.delta as f64 } else { 0.0 };
    let raw = (ema_gen + bump).ceil();
    if raw.is_nan() {
        return cfg.k_min;
    }
    // Clip in floating point first so huge inputs cannot overflow the cast.
    raw.clamp(cfg.k_min as f64, cfg.k_max as f64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EOS: TokenId = 9;

    #[test]
    fn generation_signal() {
        assert_eq!(gen_signal(&[1; 20], 20, EOS), 20);
        let mut d = vec![1; 20];
        d[0] = EOS;
        assert_eq!(gen_signal(&d, 20, EOS), 0);
        let mut d = vec![1; 20];
        d[6] = EOS;
        d[10] = EOS;
        assert_eq!(gen_signal(&d, 20, EOS), 6);
    }

    #[test]
    fn controller_examples() {
        let cfg = AdlConfig::default();
        assert_eq!(next_length(12.0, 12.0, &cfg), 22);
        assert_eq!(next_length(25.4, 20.1, &cfg), 26);
        assert_eq!(next_length(3.0, 3.0, &cfg), 20);
    }

    #[test]
    fn update_uses_post_update_emas() {
        let cfg = AdlConfig::default();
        let s0 = AdlState {
            ema_gen: 10.0,
            ema_acc: 14.0,
            k_next: 20,
        };
        // gen' = 12, acc' = 12: indicator fires on equality.
        let s1 = update(&s0, 14, 10, &cfg);
        assert_eq!(s1.ema_gen, 12.0);
        assert_eq!(s1.ema_acc, 12.0);
        assert_eq!(s1.k_next, 22);
    }

    #[test]
    fn rho_one_tracks_last_observation() {
        let cfg = AdlConfig { rho: 1.0, ..Default::default() };
        let s = update(&AdlState::initial(&cfg), 25, 7, &cfg);
        assert_eq!((s.ema_gen, s.ema_acc), (25.0, 7.0));
        assert_eq!(s.k_next, 25);
    }

    #[test]
    fn non_finite_inputs_stay_in_range() {
        let cfg = AdlConfig::default();
        assert_eq!(next_length(f64::NAN, 1.0, &cfg), 20);
        assert_eq!(next_length(f64::INFINITY, 0.0, &cfg), 30);
        assert_eq!(next_length(f64::NEG_INFINITY, 0.0, &cfg), 20);
        assert_eq!(next_length(1e300, 1e300, &cfg), 30);
    }

    #[test]
    fn initial_uses_k_max() {
        assert_eq!(AdlState::initial(&AdlConfig::default()).k_next, 30);
    }

    proptest! {
        #[test]
        fn k_next_stays_clipped(
            gen in prop::collection::vec(0usize..200, 1..50),
            acc in prop::collection::vec(0usize..200, 50),
            k_min in 1usize..40,
            span in 0usize..40,
            delta in 0usize..50,
            rho in 0.01f64..=1.0,
        ) {
            let cfg = AdlConfig { k_min, k_max: k_min + span, delta, rho };
            let mut s = AdlState::initial(&cfg);
            for (g, a) in gen.iter().zip(&acc) {
                s = update(&s, *g, *a, &cfg);
                prop_assert!(s.k_next >= cfg.k_min && s.k_next <= cfg.k_max);
            }
        }

        #[test]
        fn geometric_convergence(l in 0usize..40, rho in 0.05f64..=1.0, g0 in 0.0f64..40.0, a0 in 0.0f64..40.0) {
            let cfg = AdlConfig { rho, ..Default::default() };
            let mut s = AdlState { ema_gen: g0, ema_acc: a0, k_next: 20 };
            let target = l as f64;
            for t in 1..=60 {
                s = update(&s, l, l, &cfg);
                let decay = (1.0 - rho).powi(t);
                prop_assert!(((s.ema_gen - target).abs() - decay * (g0 - target).abs()).abs() < 1e-9);
                prop_assert!(((s.ema_acc - target).abs() - decay * (a0 - target).abs()).abs() < 1e-9);
            }
        }
    }
}
