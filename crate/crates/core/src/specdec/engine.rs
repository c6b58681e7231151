use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::trace::StepRecord;
use super::verify::{verify_block, VerifierRngs, VerifyMode};
use crate::adl::{self, AdlConfig, AdlState};
use crate::cps::{self, CpsConfig};
use crate::drafter::{self, DrafterConfig};
use crate::error::{Error, Result};
use crate::models::{BidirectionalDenoiser, NGramModel};
use crate::prob::Categorical;
use crate::rng::{Rng, Stream};
use crate::vocab::{Sequence, TokenId};

/// What the stochastic verifier treats as the proposal distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StochasticProposal {
    /// The searched path is a deterministic function of the prefix, so each
    /// path token is proposed with probability one. Acceptance is then
    /// `p(token)` and the residual is the target with that token removed.
    #[default]
    PathPointMass,
    /// Draw each block token from the left-to-right proxy and verify against
    /// that same proxy. The search only fixes the block length.
    SampleL2r,
    /// Verify the searched path with the left-to-right proxy as `q`. The
    /// proposal did not come from `q`, so the output is biased; kept for
    /// comparison.
    PathWithL2rRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub mode: VerifyMode,
    /// Cap on generated tokens (prompt excluded).
    pub max_output_len: usize,
    pub cps_enabled: bool,
    pub adl_enabled: bool,
    /// Block size when the controller is off; `None` means `adl.k_max`.
    pub fixed_k: Option<usize>,
    pub cps: CpsConfig,
    pub adl: AdlConfig,
    pub drafter: DrafterConfig,
    pub proposal: StochasticProposal,
    /// Session seed. Not part of config files: the harness derives one per
    /// prompt from the run seed.
    #[serde(skip)]
    pub seed: u64,
    /// Record per-step wall-clock time in the trace. Off by default because
    /// timings make traces differ between runs.
    pub record_wall_clock: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: VerifyMode::Greedy,
            max_output_len: 64,
            cps_enabled: true,
            adl_enabled: true,
            fixed_k: None,
            cps: CpsConfig::default(),
            adl: AdlConfig::default(),
            drafter: DrafterConfig::default(),
            proposal: StochasticProposal::default(),
            seed: 0,
            record_wall_clock: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_output_len == 0 {
            return Err(Error::InvalidConfig("max_output_len must be >= 1".into()));
        }
        if self.fixed_k == Some(0) {
            return Err(Error::InvalidConfig("fixed_k must be >= 1".into()));
        }
        self.cps.validate()?;
        self.adl.validate()?;
        self.drafter.validate()
    }

    fn block_size(&self, state: &AdlState) -> usize {
        if self.adl_enabled {
            state.k_next
        } else {
            self.fixed_k.unwrap_or(self.adl.k_max)
        }
    }
}

/// The three models a session needs, sharing one vocabulary.
#[derive(Debug, Clone)]
pub struct Models {
    pub target: NGramModel,
    pub proxy: NGramModel,
    pub denoiser: BidirectionalDenoiser,
}

impl Models {
    pub fn new(target: NGramModel, proxy: NGramModel, denoiser: BidirectionalDenoiser) -> Result<Self> {
        if target.vocab() != proxy.vocab() || target.vocab() != denoiser.vocab() {
            return Err(Error::InvalidVocabulary("target, proxy and denoiser vocabularies differ".into()));
        }
        Ok(Self { target, proxy, denoiser })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// Prompt followed by the generated tokens.
    pub sequence: Vec<TokenId>,
    pub prompt_len: usize,
    pub trace: Vec<StepRecord>,
    /// Stopped by `max_output_len` rather than EOS.
    pub truncated: bool,
}

impl DecodeOutput {
    pub fn generated(&self) -> &[TokenId] {
        &self.sequence[self.prompt_len..]
    }
}

/// Runs speculative decoding from `prompt` until EOS is committed or
/// `max_output_len` tokens have been generated.
pub fn decode(models: &Models, prompt: &Sequence, cfg: &EngineConfig) -> Result<DecodeOutput> {
    cfg.validate()?;
    if prompt.is_empty() {
        return Err(Error::InvalidConfig("prompt must be non-empty".into()));
    }
    let vocab = models.target.vocab();
    let eos = vocab.eos_id();
    let stochastic = cfg.mode == VerifyMode::Stochastic;

    let mut seq = prompt.ids().to_vec();
    let mut draft_rng = Rng::new(cfg.seed, Stream::Draft);
    let mut rngs = VerifierRngs {
        acceptance: Rng::new(cfg.seed, Stream::Acceptance),
        residual: Rng::new(cfg.seed, Stream::Residual),
    };
    let mut ctrl = AdlState::initial(&cfg.adl);
    let mut trace = Vec::new();
    let mut truncated = false;

    loop {
        let produced = seq.len() - prompt.len();
        if produced >= cfg.max_output_len {
            truncated = true;
            break;
        }
        let remaining = cfg.max_output_len - produced;
        let k = cfg.block_size(&ctrl);
        let started = cfg.record_wall_clock.then(Instant::now);

        let (state, lattice) = drafter::refine(&models.denoiser, &seq, k, &cfg.drafter)?;
        let draft = state.draft();

        let (path, expansions) = if cfg.cps_enabled {
            let out = cps::beam_search(&seq, &lattice, &models.proxy, &cfg.cps)?;
            (out.path, out.expansions)
        } else {
            let p = cps::argmax_path(&seq, &lattice, &models.proxy, cfg.cps.lambda, cfg.cps.eos_stop)?;
            (p, 0)
        };
        let mut tokens = path.tokens;
        tokens.truncate(remaining);

        let sample_block = stochastic && cfg.proposal == StochasticProposal::SampleL2r;
        let mut l2r = Vec::with_capacity(tokens.len());
        for i in 1..=tokens.len() {
            let q = drafter::l2r_proxy(&models.denoiser, &seq, &tokens, k, i, cfg.drafter.l2r_uses_past_block)?;
            if sample_block {
                tokens[i - 1] = q.sample(&mut draft_rng);
            }
            l2r.push(q);
            if sample_block && tokens[i - 1] == eos {
                tokens.truncate(i);
                break;
            }
        }
        let l2r_probs: Vec<f64> = tokens.iter().zip(&l2r).map(|(&t, q)| q.prob(t)).collect();
        let proposals: Vec<Categorical> = match (stochastic, cfg.proposal) {
            (true, StochasticProposal::PathPointMass) => {
                tokens.iter().map(|&t| Categorical::point_mass(vocab.len(), t)).collect()
            }
            _ => l2r,
        };

        let v = verify_block(&models.target, &seq, &tokens, &proposals, cfg.mode, &mut rngs)?;
        seq.extend_from_slice(&v.accepted);
        if let Some(r) = v.replacement {
            seq.push(r);
        }
        let committed = v.l_acc() + usize::from(v.replacement.is_some());
        let terminated = v.accepted.last() == Some(&eos) || v.replacement == Some(eos);

        let l_gen = adl::gen_signal(&draft, k, eos);
        if !terminated {
            ctrl = adl::update(&ctrl, l_gen, v.l_acc(), &cfg.adl);
        }

        trace.push(StepRecord {
            step: trace.len(),
            k,
            draft,
            path: tokens,
            path_score: path.score,
            l_acc: v.l_acc(),
            accept_bits: v.accept_bits,
            l_gen,
            replacement: v.replacement,
            committed,
            q_probs: v.q_probs,
            l2r_probs,
            p_probs: v.p_probs,
            target_passes: 1,
            drafter_passes: state.step,
            cps_expansions: expansions,
            ema_gen: ctrl.ema_gen,
            ema_acc: ctrl.ema_acc,
            k_next: cfg.block_size(&ctrl),
            terminated,
            wall_us: started.map(|t| t.elapsed().as_micros() as u64),
        });
        if terminated {
            break;
        }
    }

    Ok(DecodeOutput {
        sequence: seq,
        prompt_len: prompt.len(),
        trace,
        truncated,
    })
}

/// Target argmax decoding: stops after EOS or `max_len` tokens.
pub fn ar_greedy(target: &NGramModel, prompt: &[TokenId], max_len: usize) -> Vec<TokenId> {
    let eos = target.vocab().eos_id();
    let mut seq = prompt.to_vec();
    for _ in 0..max_len {
        let t = target.conditional(&seq).argmax();
        seq.push(t);
        if t == eos {
            break;
        }
    }
    seq
}

/// Direct sampling from the target, token by token.
pub fn ancestral_sample(target: &NGramModel, prompt: &[TokenId], max_len: usize, rng: &mut Rng) -> Vec<TokenId> {
    let eos = target.vocab().eos_id();
    let mut seq = prompt.to_vec();
    for _ in 0..max_len {
        let t = target.conditional(&seq).sample(rng);
        seq.push(t);
        if t == eos {
            break;
        }
    }
    seq
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::Vocabulary;
    use std::sync::Arc;

    fn corpus() -> Vec<Vec<TokenId>> {
        vec![
            vec![0, 1, 2, 3, 0, 4],
            vec![0, 5, 2, 3, 0, 4],
            vec![0, 1, 2],
            vec![0, 5, 2, 3, 0, 1, 2, 3],
            vec![4, 2, 1, 0, 5],
        ]
    }

    fn models(drafter_is_target: bool) -> Models {
        let vocab = Arc::new(Vocabulary::new(["the", "cat", "sat", "on", "mat", "dog"]).unwrap());
        let target = NGramModel::train(&corpus(), 3, 0.1, vocab.clone()).unwrap();
        let proxy = NGramModel::train(&corpus(), 2, 0.1, vocab.clone()).unwrap();
        let denoiser = if drafter_is_target {
            let back = NGramModel::train_backward(&corpus(), 3, 0.1, vocab.clone()).unwrap();
            BidirectionalDenoiser::new(target.clone(), back, 1.0).unwrap()
        } else {
            BidirectionalDenoiser::train(&corpus(), 2, 0.5, 0.5, vocab).unwrap()
        };
        Models::new(target, proxy, denoiser).unwrap()
    }

    fn prompt(m: &Models, ids: &[TokenId]) -> Sequence {
        Sequence::new(ids.to_vec(), m.target.vocab()).unwrap()
    }

    #[test]
    fn greedy_matches_ar_in_every_toggle() {
        let m = models(false);
        for cps_enabled in [true, false] {
            for adl_enabled in [true, false] {
                let cfg = EngineConfig {
                    cps_enabled,
                    adl_enabled,
                    max_output_len: 20,
                    adl: AdlConfig { k_min: 2, k_max: 5, ..Default::default() },
                    ..Default::default()
                };
                for p in [&[0][..], &[0, 1], &[5, 2, 3], &[4]] {
                    let out = decode(&m, &prompt(&m, p), &cfg).unwrap();
                    assert_eq!(out.sequence, ar_greedy(&m.target, p, 20));
                }
            }
        }
    }

    #[test]
    fn drafter_equal_to_target_accepts_everything() {
        let m = models(true);
        let cfg = EngineConfig {
            cps_enabled: false,
            adl_enabled: false,
            fixed_k: Some(1),
            max_output_len: 12,
            ..Default::default()
        };
        let out = decode(&m, &prompt(&m, &[0, 1]), &cfg).unwrap();
        assert_eq!(out.sequence, ar_greedy(&m.target, &[0, 1], 12));
        assert!(out.trace.iter().all(|s| s.l_acc == 1 && s.replacement.is_none()));
    }

    #[test]
    fn trace_accounts_for_every_token() {
        let m = models(false);
        for mode in [VerifyMode::Greedy, VerifyMode::Stochastic] {
            for seed in 0..20 {
                let cfg = EngineConfig {
                    mode,
                    seed,
                    max_output_len: 15,
                    adl: AdlConfig { k_min: 1, k_max: 6, ..Default::default() },
                    ..Default::default()
                };
                let out = decode(&m, &prompt(&m, &[0]), &cfg).unwrap();
                let total: usize = out.trace.iter().map(|s| s.committed).sum();
                assert_eq!(total, out.generated().len());
                for s in &out.trace {
                    assert!(s.committed >= 1);
                    assert!(s.l_acc <= s.path.len());
                    let prefix_ones = s.accept_bits.iter().take_while(|&&b| b).count();
                    assert_eq!(prefix_ones, s.l_acc);
                    assert!(s.k_next >= 1 && s.k_next <= 6);
                }
                assert!(out.generated().len() <= 15);
                let ended = out.generated().last() == Some(&m.target.vocab().eos_id());
                assert_eq!(out.truncated, !ended);
            }
        }
    }

    #[test]
    fn seeded_runs_repeat() {
        let m = models(false);
        for proposal in [StochasticProposal::PathPointMass, StochasticProposal::SampleL2r] {
            let cfg = EngineConfig {
                mode: VerifyMode::Stochastic,
                proposal,
                seed: 42,
                adl: AdlConfig { k_min: 2, k_max: 4, ..Default::default() },
                ..Default::default()
            };
            let a = decode(&m, &prompt(&m, &[0]), &cfg).unwrap();
            let b = decode(&m, &prompt(&m, &[0]), &cfg).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empty_prompt_rejected() {
        let m = models(false);
        let empty = Sequence::new(vec![], m.target.vocab()).unwrap();
        assert!(decode(&m, &empty, &EngineConfig::default()).is_err());
    }
}
