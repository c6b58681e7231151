//! Corpus-to-summary pipelines: benchmark, ablation grid and sweeps.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use super::config::{Knob, RunConfig};
use super::corpus::{select_prompts, Corpus, Prompt};
use super::synth;
use crate::error::{Error, Result};
use crate::metrics::{RunRecord, RunSummary, SweepRow};
use crate::models::{BidirectionalDenoiser, NGramModel};
use crate::rng::derive_seed;
use crate::specdec::{decode, DecodeOutput, EngineConfig, Models};
use crate::vocab::Vocabulary;

/// Everything a benchmark needs, built once per run seed.
#[derive(Debug, Clone)]
pub struct Workbench {
    pub vocab: Arc<Vocabulary>,
    pub models: Models,
    pub prompts: Vec<Prompt>,
    pub train_tokens: usize,
}

pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    match &cfg.data.corpus {
        Some(path) => Corpus::load(path, cfg.data.tokenization),
        None => Ok(Corpus::parse(
            &synth::synthesize(cfg.seed, cfg.data.synthetic_docs),
            cfg.data.tokenization,
        )),
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer(&mut w, value).map_err(|e| Error::json(path.display().to_string(), e))?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
}

/// Splits the corpus, fits (or loads) the three models on the training part
/// only, and picks prompts from the held-out part.
pub fn prepare(cfg: &RunConfig) -> Result<Workbench> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    let (train, test) = corpus.split(cfg.data.test_fraction)?;
    let m = &cfg.models;

    let loaded_target: Option<NGramModel> = m.target.as_deref().map(read_json).transpose()?;
    let vocab = match &loaded_target {
        Some(t) => t.vocab().clone(),
        None => Arc::new(train.build_vocab()?),
    };
    let docs = train.encode(&vocab)?;
    let target = match loaded_target {
        Some(t) => t,
        None => NGramModel::train(&docs, m.target_order, m.target_k_add, vocab.clone())?,
    };
    let proxy = match &m.proxy {
        Some(p) => read_json(p)?,
        None => NGramModel::train(&docs, m.proxy_order, m.proxy_k_add, vocab.clone())?,
    };
    let denoiser = match &m.denoiser {
        Some(p) => read_json::<BidirectionalDenoiser>(p)?.with_w_bi(m.w_bi)?,
        None => BidirectionalDenoiser::train(&docs, m.denoiser_order, m.denoiser_k_add, m.w_bi, vocab.clone())?,
    };
    let models = Models::new(target, proxy, denoiser)?;
    let prompts = select_prompts(&test, &vocab, cfg.data.prompts, cfg.data.prompt_tokens, cfg.seed)?;
    if prompts.is_empty() {
        return Err(Error::InvalidConfig("no held-out document is longer than prompt_tokens".into()));
    }
    Ok(Workbench {
        vocab,
        models,
        prompts,
        train_tokens: train.token_count(),
    })
}

/// Decodes every prompt in parallel; prompt `i` uses `derive_seed(seed, i)`.
/// Results come back in prompt order.
pub fn run_prompts(models: &Models, prompts: &[Prompt], engine: &EngineConfig, seed: u64) -> Result<Vec<DecodeOutput>> {
    prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let cfg = EngineConfig {
                seed: derive_seed(seed, i as u64),
                ..engine.clone()
            };
            decode(models, &p.ids, &cfg)
        })
        .collect()
}

pub fn summarize(cfg: &RunConfig, prompts: &[Prompt], outputs: &[DecodeOutput]) -> Result<RunSummary> {
    let runs: Vec<RunRecord<'_>> = prompts
        .iter()
        .zip(outputs)
        .map(|(p, o)| RunRecord {
            task: &p.task,
            trace: &o.trace,
            truncated: o.truncated,
        })
        .collect();
    RunSummary::from_runs(&runs, &cfg.cost, &cfg.hash()?)
}

pub fn bench(cfg: &RunConfig, wb: &Workbench) -> Result<(RunSummary, Vec<DecodeOutput>)> {
    let outputs = run_prompts(&wb.models, &wb.prompts, &cfg.engine, cfg.seed)?;
    Ok((summarize(cfg, &wb.prompts, &outputs)?, outputs))
}

fn row(cfg: &RunConfig, wb: &Workbench, knob: &str, value: String) -> Result<SweepRow> {
    let (summary, _) = bench(cfg, wb)?;
    Ok(SweepRow::from_summary(knob, value, &summary))
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// The four path-search/controller toggle combinations, all-on first.
pub fn ablate(cfg: &RunConfig, wb: &Workbench) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(4);
    for cps in [true, false] {
        for adl in [true, false] {
            let mut c = cfg.clone();
            c.engine.cps_enabled = cps;
            c.engine.adl_enabled = adl;
            c.engine.fixed_k = None;
            rows.push(row(&c, wb, "cps/adl", format!("{}/{}", on_off(cps), on_off(adl)))?);
        }
    }
    Ok(rows)
}

fn as_count(v: f64, knob: Knob) -> Result<usize> {
    if v < 1.0 || v.fract() != 0.0 {
        return Err(Error::InvalidConfig(format!("{} values must be positive integers, got {v}", knob.name())));
    }
    Ok(v as usize)
}

/// Applies one knob value to a copy of `cfg`.
pub fn with_knob(cfg: &RunConfig, knob: Knob, v: f64) -> Result<RunConfig> {
    let mut c = cfg.clone();
    let e = &mut c.engine;
    match knob {
        Knob::Steps => e.drafter.steps = as_count(v, knob)?,
        Knob::Beam => e.cps.beam = as_count(v, knob)?,
        Knob::MMax => {
            let m = as_count(v, knob)?;
            e.drafter.m_max = m;
            e.cps.prune.m_max = m;
        }
        Knob::Tau => e.cps.prune.tau = v,
        Knob::FixedK => {
            e.adl_enabled = false;
            e.fixed_k = Some(as_count(v, knob)?);
        }
    }
    c.validate()?;
    Ok(c)
}

/// One row per knob value; a fixed-k sweep adds a final controller row.
pub fn sweep(cfg: &RunConfig, wb: &Workbench, knob: Knob, values: &[f64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(values.len() + 1);
    for &v in values {
        rows.push(row(&with_knob(cfg, knob, v)?, wb, knob.name(), format!("{v}"))?);
    }
    if knob == Knob::FixedK {
        let mut c = cfg.clone();
        c.engine.adl_enabled = true;
        c.engine.fixed_k = None;
        rows.push(row(&c, wb, knob.name(), "adl".into())?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.data.synthetic_docs = 300;
        cfg.data.prompts = 8;
        cfg.engine.max_output_len = 16;
        cfg
    }

    #[test]
    fn held_out_prompts_and_training_split() {
        let cfg = small();
        let wb = prepare(&cfg).unwrap();
        assert_eq!(wb.prompts.len(), 8);
        let corpus = load_corpus(&cfg).unwrap();
        let (train, _) = corpus.split(cfg.data.test_fraction).unwrap();
        assert_eq!(wb.train_tokens, train.token_count());
    }

    #[test]
    fn ablation_has_four_rows() {
        let cfg = small();
        let wb = prepare(&cfg).unwrap();
        let rows = ablate(&cfg, &wb).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].value, "on/on");
        assert_eq!(rows[3].value, "off/off");
    }

    #[test]
    fn fixed_k_sweep_shape() {
        let cfg = small();
        let wb = prepare(&cfg).unwrap();
        let rows = sweep(&cfg, &wb, Knob::FixedK, &[1.0, 4.0]).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].value, "adl");
        assert!(with_knob(&cfg, Knob::Beam, 0.0).is_err());
        assert!(with_knob(&cfg, Knob::Beam, 2.5).is_err());
    }
}
