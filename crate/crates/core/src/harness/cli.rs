//! `diffdraft` subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::config::{Knob, RunConfig};
use super::corpus::{decode_ids, encode_tokens, load_prompts, Corpus, Tokenization};
use super::experiments::{self, read_json, write_json};
use super::synth;
use crate::drafter::{refine, DrafterConfig};
use crate::error::{Error, Result};
use crate::metrics::{write_rows_csv, SweepRow};
use crate::models::{BidirectionalDenoiser, NGramModel};
use crate::specdec::{ar_greedy, write_trace_header, write_trace_steps, Models, StochasticProposal, VerifyMode};
use crate::vocab::{Sequence, Vocabulary};

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "DIFFDRAFT_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "diffdraft", version, about = "Speculative decoding with a bidirectional block drafter")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn enabled(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Greedy,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProposalArg {
    PathPointMass,
    SampleL2r,
    PathWithL2rRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KnobArg {
    Steps,
    Beam,
    MMax,
    Tau,
    FixedK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    ArGreedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TokenizationArg {
    Whitespace,
    Byte,
}

impl From<TokenizationArg> for Tokenization {
    fn from(t: TokenizationArg) -> Self {
        match t {
            TokenizationArg::Whitespace => Tokenization::Whitespace,
            TokenizationArg::Byte => Tokenization::Byte,
        }
    }
}

/// Settings shared by every decoding subcommand. Flags override the file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (also settable through DIFFDRAFT_OUT_DIR).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub proposal: Option<ProposalArg>,
    #[arg(long, value_enum)]
    pub cps: Option<Switch>,
    #[arg(long, value_enum)]
    pub adl: Option<Switch>,
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Block size used while the controller is off.
    #[arg(long)]
    pub fixed_k: Option<usize>,
    #[arg(long)]
    pub delta: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub m_max: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub top_k_refine: Option<usize>,
    #[arg(long)]
    pub w_bi: Option<f64>,
    #[arg(long)]
    pub max_output_len: Option<usize>,
    /// Corpus file (a synthetic corpus is generated when none is given).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub tokenization: Option<TokenizationArg>,
    /// Number of held-out prompts.
    #[arg(long)]
    pub num_prompts: Option<usize>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub proxy: Option<PathBuf>,
    #[arg(long)]
    pub denoiser: Option<PathBuf>,
    /// Record per-step wall-clock time (makes traces non-reproducible).
    #[arg(long)]
    pub wall_clock: bool,
}

impl RunArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        let e = &mut c.engine;
        if let Some(m) = self.mode {
            e.mode = match m {
                ModeArg::Greedy => VerifyMode::Greedy,
                ModeArg::Stochastic => VerifyMode::Stochastic,
            };
        }
        if let Some(p) = self.proposal {
            e.proposal = match p {
                ProposalArg::PathPointMass => StochasticProposal::PathPointMass,
                ProposalArg::SampleL2r => StochasticProposal::SampleL2r,
                ProposalArg::PathWithL2rRatio => StochasticProposal::PathWithL2rRatio,
            };
        }
        if let Some(s) = self.cps {
            e.cps_enabled = s.enabled();
        }
        if let Some(s) = self.adl {
            e.adl_enabled = s.enabled();
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$($field).+ = v; })*
            };
        }
        set!(
            k_min => engine.adl.k_min,
            k_max => engine.adl.k_max,
            delta => engine.adl.delta,
            rho => engine.adl.rho,
            beam => engine.cps.beam,
            tau => engine.cps.prune.tau,
            lambda => engine.cps.lambda,
            steps => engine.drafter.steps,
            top_k_refine => engine.drafter.top_k_refine,
            max_output_len => engine.max_output_len,
            w_bi => models.w_bi,
            num_prompts => data.prompts,
        );
        if let Some(k) = self.fixed_k {
            c.engine.fixed_k = Some(k);
        }
        if let Some(m) = self.m_max {
            c.engine.cps.prune.m_max = m;
            c.engine.drafter.m_max = m;
        }
        if let Some(t) = self.tokenization {
            c.data.tokenization = t.into();
        }
        if self.corpus.is_some() {
            c.data.corpus = self.corpus.clone();
        }
        if self.target.is_some() {
            c.models.target = self.target.clone();
        }
        if self.proxy.is_some() {
            c.models.proxy = self.proxy.clone();
        }
        if self.denoiser.is_some() {
            c.models.denoiser = self.denoiser.clone();
        }
        if self.wall_clock {
            c.engine.record_wall_clock = true;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        let dir = self
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic corpus (`task<TAB>text` per line).
    SynthCorpus {
        #[arg(long, default_value_t = 8000)]
        docs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build a vocabulary from a corpus.
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "whitespace")]
        tokenization: TokenizationArg,
        #[arg(long)]
        output: PathBuf,
    },
    /// Fit an add-k n-gram model.
    TrainNgram {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 0.1)]
        k_add: f64,
        /// Vocabulary file; built from the corpus when absent.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "whitespace")]
        tokenization: TokenizationArg,
        /// Hold out this trailing fraction of documents.
        #[arg(long, default_value_t = 0.0)]
        test_fraction: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Fit the forward and backward halves of the bidirectional denoiser.
    TrainDenoiser {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 0.1)]
        k_add: f64,
        #[arg(long, default_value_t = 0.5)]
        w_bi: f64,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "whitespace")]
        tokenization: TokenizationArg,
        #[arg(long, default_value_t = 0.0)]
        test_fraction: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Decode a prompt file with trained models.
    Decode {
        #[command(flatten)]
        run: RunArgs,
        /// One prompt per line.
        #[arg(long)]
        prompts: PathBuf,
        /// Decode with a baseline instead of speculation.
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
    /// Decode held-out prompts and write summary CSV/JSON plus the trace.
    Bench {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Path-search and controller on/off grid.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// One-knob sensitivity sweep.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        knob: Option<KnobArg>,
        /// Comma-separated values; defaults to the knob's standard grid.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Draft one block after a prompt and write its candidate lattice as JSONL.
    DumpLattice {
        #[arg(long)]
        denoiser: PathBuf,
        /// Prompt text.
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        top_k_refine: usize,
        #[arg(long, default_value_t = 15)]
        m_max: usize,
        #[arg(long, value_enum, default_value = "whitespace")]
        tokenization: TokenizationArg,
        /// Output file; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the fully resolved configuration as TOML.
    ShowConfig {
        #[command(flatten)]
        run: RunArgs,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn vocab_for(corpus: &Corpus, vocab: &Option<PathBuf>) -> Result<Arc<Vocabulary>> {
    Ok(Arc::new(match vocab {
        Some(p) => read_json(p)?,
        None => corpus.build_vocab()?,
    }))
}

fn training_docs(corpus: &Path, tok: TokenizationArg, test_fraction: f64, vocab: &Option<PathBuf>) -> Result<(Arc<Vocabulary>, Vec<Vec<u32>>)> {
    let (train, _) = Corpus::load(corpus, tok.into())?.split(test_fraction)?;
    let vocab = vocab_for(&train, vocab)?;
    let docs = train.encode(&vocab)?;
    Ok((vocab, docs))
}

fn write_rows(dir: &Path, stem: &str, rows: &[SweepRow]) -> Result<()> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let w = create(&csv_path)?;
    write_rows_csv(rows, w)?;
    write_json(&dir.join(format!("{stem}.json")), &rows)
}

fn model_path(p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    p.clone()
        .ok_or_else(|| Error::InvalidConfig(format!("decode needs --{what} (or models.{what} in the config)")))
}

/// Loads the proxy and denoiser to go with an already loaded target.
fn load_models(cfg: &RunConfig, target: NGramModel) -> Result<Models> {
    let proxy: NGramModel = read_json(&model_path(&cfg.models.proxy, "proxy")?)?;
    let denoiser = read_json::<BidirectionalDenoiser>(&model_path(&cfg.models.denoiser, "denoiser")?)?.with_w_bi(cfg.models.w_bi)?;
    Models::new(target, proxy, denoiser)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthCorpus { docs, seed, output } => {
            std::fs::write(&output, synth::synthesize(seed, docs)).map_err(|e| Error::io(&output, e))
        }
        Command::BuildVocab { corpus, tokenization, output } => {
            let c = Corpus::load(&corpus, tokenization.into())?;
            write_json(&output, &c.build_vocab()?)
        }
        Command::TrainNgram { corpus, order, k_add, vocab, tokenization, test_fraction, output } => {
            let (vocab, docs) = training_docs(&corpus, tokenization, test_fraction, &vocab)?;
            write_json(&output, &NGramModel::train(&docs, order, k_add, vocab)?)
        }
        Command::TrainDenoiser { corpus, order, k_add, w_bi, vocab, tokenization, test_fraction, output } => {
            let (vocab, docs) = training_docs(&corpus, tokenization, test_fraction, &vocab)?;
            write_json(&output, &BidirectionalDenoiser::train(&docs, order, k_add, w_bi, vocab)?)
        }
        Command::Decode { run, prompts, baseline } => decode_cmd(&run, &prompts, baseline),
        Command::Bench { run } => {
            let cfg = run.resolve()?;
            let dir = run.out_dir()?;
            let wb = experiments::prepare(&cfg)?;
            let (summary, outputs) = experiments::bench(&cfg, &wb)?;
            let hash = cfg.hash()?;
            let trace_path = dir.join("trace.jsonl");
            let mut w = create(&trace_path)?;
            write_trace_header(&mut w, &hash, cfg.canonical_json()?)?;
            for (i, o) in outputs.iter().enumerate() {
                write_trace_steps(&mut w, i, &o.trace)?;
            }
            finish(w, &trace_path)?;
            let text_path = dir.join("decoded.txt");
            let mut text = create(&text_path)?;
            for o in &outputs {
                let line = decode_ids(&o.sequence, &wb.vocab, cfg.data.tokenization)?;
                writeln!(text, "{line}").map_err(|e| Error::io(&text_path, e))?;
            }
            finish(text, &text_path)?;
            let csv_path = dir.join("summary.csv");
            let w = create(&csv_path)?;
            summary.write_csv(w)?;
            write_json(&dir.join("summary.json"), &serde_json::json!({
                "config": cfg.canonical_json()?,
                "summary": summary,
            }))?;
            println!("mat {:.4} speedup {:.4} over {} prompts ({})", summary.mat, summary.speedup, summary.prompts, hash);
            Ok(())
        }
        Command::Ablate { run } => {
            let cfg = run.resolve()?;
            let dir = run.out_dir()?;
            let wb = experiments::prepare(&cfg)?;
            let rows = experiments::ablate(&cfg, &wb)?;
            for r in &rows {
                println!("cps/adl {:7} mat {:.4} speedup {:.4}", r.value, r.mat, r.speedup);
            }
            write_rows(&dir, "ablation", &rows)
        }
        Command::Sweep { run, knob, values } => {
            let mut cfg = run.resolve()?;
            if let Some(k) = knob {
                cfg.sweep.knob = match k {
                    KnobArg::Steps => Knob::Steps,
                    KnobArg::Beam => Knob::Beam,
                    KnobArg::MMax => Knob::MMax,
                    KnobArg::Tau => Knob::Tau,
                    KnobArg::FixedK => Knob::FixedK,
                };
            }
            if !values.is_empty() {
                cfg.sweep.values = values;
            }
            let dir = run.out_dir()?;
            let wb = experiments::prepare(&cfg)?;
            let rows = experiments::sweep(&cfg, &wb, cfg.sweep.knob, &cfg.sweep.grid())?;
            for r in &rows {
                println!("{} {:>6} mat {:.4} speedup {:.4}", r.knob, r.value, r.mat, r.speedup);
            }
            write_rows(&dir, &format!("sweep-{}", cfg.sweep.knob.name()), &rows)
        }
        Command::DumpLattice { denoiser, prompt, k, steps, top_k_refine, m_max, tokenization, output } => {
            let d: BidirectionalDenoiser = read_json(&denoiser)?;
            let tok: Tokenization = tokenization.into();
            let ids = encode_tokens(&tok.tokenize(&prompt), d.vocab())?;
            let prefix = Sequence::new(ids, d.vocab())?;
            let cfg = DrafterConfig { steps, top_k_refine, m_max, ..Default::default() };
            let (_, lattice) = refine(&d, prefix.ids(), k, &cfg)?;
            match output {
                Some(p) => {
                    let mut w = create(&p)?;
                    lattice.write_jsonl(&mut w).map_err(|e| Error::io(&p, e))?;
                    finish(w, &p)
                }
                None => lattice.write_jsonl(std::io::stdout().lock()).map_err(|e| Error::io("<stdout>", e)),
            }
        }
        Command::ShowConfig { run } => {
            let cfg = run.resolve()?;
            print!("{}", cfg.to_toml()?);
            println!("# hash {}", cfg.hash()?);
            Ok(())
        }
    }
}

fn decode_cmd(run: &RunArgs, prompts: &Path, baseline: Option<Baseline>) -> Result<()> {
    let cfg = run.resolve()?;
    let dir = run.out_dir()?;
    let target: NGramModel = read_json(&model_path(&cfg.models.target, "target")?)?;
    let vocab = target.vocab().clone();
    let tok = cfg.data.tokenization;
    let prompts = load_prompts(prompts, &vocab, tok)?;

    let text_path = dir.join("decoded.txt");
    let mut text = create(&text_path)?;
    match baseline {
        Some(Baseline::ArGreedy) => {
            for p in &prompts {
                let seq = ar_greedy(&target, p.ids.ids(), cfg.engine.max_output_len);
                writeln!(text, "{}", decode_ids(&seq, &vocab, tok)?).map_err(|e| Error::io(&text_path, e))?;
            }
        }
        None => {
            let models = load_models(&cfg, target)?;
            let outputs = experiments::run_prompts(&models, &prompts, &cfg.engine, cfg.seed)?;
            let trace_path = dir.join("trace.jsonl");
            let mut trace = create(&trace_path)?;
            write_trace_header(&mut trace, &cfg.hash()?, cfg.canonical_json()?)?;
            for (i, o) in outputs.iter().enumerate() {
                writeln!(text, "{}", decode_ids(&o.sequence, &vocab, tok)?).map_err(|e| Error::io(&text_path, e))?;
                write_trace_steps(&mut trace, i, &o.trace)?;
            }
            finish(trace, &trace_path)?;
        }
    }
    finish(text, &text_path)
}
