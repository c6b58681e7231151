//! Mean accepted tokens, simulated speedup and run summaries.
//!
//! Speed is measured with an explicit cost model instead of wall-clock time:
//! each step pays for one batched target pass, one unit per drafter
//! refinement round and a small amount per beam expansion, against an
//! autoregressive baseline that pays one target pass per generated token.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specdec::StepRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub c_target: f64,
    pub c_draft: f64,
    pub c_cps: f64,
    pub c_ar_token: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            c_target: 1.0,
            c_draft: 0.2,
            c_cps: 0.001,
            c_ar_token: 1.0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let all = [self.c_target, self.c_draft, self.c_cps, self.c_ar_token];
        if all.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidConfig("costs must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn step(&self, s: &StepRecord) -> CostShares {
        let draft = self.c_draft * s.drafter_passes as f64;
        let verify = self.c_target * s.target_passes as f64;
        let cps = self.c_cps * s.cps_expansions as f64;
        CostShares {
            draft,
            verify,
            cps,
            total: draft + verify + cps,
        }
    }
}

/// Simulated cost split by component.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostShares {
    pub draft: f64,
    pub verify: f64,
    pub cps: f64,
    pub total: f64,
}

impl CostShares {
    fn add(&mut self, o: &CostShares) {
        self.draft += o.draft;
        self.verify += o.verify;
        self.cps += o.cps;
        self.total += o.total;
    }
}

fn all_steps<'a, T: AsRef<[StepRecord]> + 'a>(traces: &'a [T]) -> impl Iterator<Item = &'a StepRecord> + 'a {
    traces.iter().flat_map(|t| t.as_ref().iter())
}

/// Mean `L_acc` over every step of every trace. Replacement tokens are not
/// counted.
pub fn mat<T: AsRef<[StepRecord]>>(traces: &[T]) -> Result<f64> {
    let (n, sum) = all_steps(traces).fold((0usize, 0usize), |(n, s), r| (n + 1, s + r.l_acc));
    if n == 0 {
        return Err(Error::EmptyTrace);
    }
    Ok(sum as f64 / n as f64)
}

/// Tokens appended to outputs across all traces.
pub fn tokens_generated<T: AsRef<[StepRecord]>>(traces: &[T]) -> usize {
    all_steps(traces).map(|s| s.committed).sum()
}

pub fn total_cost<T: AsRef<[StepRecord]>>(traces: &[T], cost: &CostModel) -> CostShares {
    let mut acc = CostShares::default();
    for s in all_steps(traces) {
        acc.add(&cost.step(s));
    }
    acc
}

/// Autoregressive cost of the same output divided by the speculative cost.
pub fn speedup<T: AsRef<[StepRecord]>>(traces: &[T], cost: &CostModel) -> Result<f64> {
    if all_steps(traces).next().is_none() {
        return Err(Error::EmptyTrace);
    }
    let denom = total_cost(traces, cost).total;
    if denom <= 0.0 {
        return Err(Error::ZeroCost);
    }
    Ok(tokens_generated(traces) as f64 * cost.c_ar_token / denom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: String,
    pub prompts: usize,
    pub steps: usize,
    pub tokens: usize,
    pub mat: f64,
    pub speedup: f64,
}

/// Acceptance statistics for the steps that used a given block size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceAtK {
    pub k: usize,
    pub steps: usize,
    pub mean_l_acc: f64,
    /// Mean of `L_acc / k`.
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub prompts: usize,
    pub steps: usize,
    pub tokens: usize,
    pub truncated: usize,
    pub mat: f64,
    pub speedup: f64,
    pub cost: CostShares,
    pub per_task: Vec<TaskSummary>,
    pub acceptance_by_k: Vec<AcceptanceAtK>,
}

/// One decoded prompt as seen by the aggregator.
#[derive(Debug, Clone, Copy)]
pub struct RunRecord<'a> {
    pub task: &'a str,
    pub trace: &'a [StepRecord],
    pub truncated: bool,
}

impl RunSummary {
    pub fn from_runs(runs: &[RunRecord<'_>], cost: &CostModel, config_hash: &str) -> Result<Self> {
        cost.validate()?;
        let traces: Vec<&[StepRecord]> = runs.iter().map(|r| r.trace).collect();

        let mut tasks: BTreeMap<&str, Vec<&[StepRecord]>> = BTreeMap::new();
        for r in runs {
            tasks.entry(r.task).or_default().push(r.trace);
        }
        let per_task = tasks
            .into_iter()
            .map(|(task, ts)| {
                Ok(TaskSummary {
                    task: task.to_string(),
                    prompts: ts.len(),
                    steps: ts.iter().map(|t| t.len()).sum(),
                    tokens: tokens_generated(&ts),
                    mat: mat(&ts)?,
                    speedup: speedup(&ts, cost)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut by_k: BTreeMap<usize, (usize, usize, f64)> = BTreeMap::new();
        for s in all_steps(&traces) {
            let e = by_k.entry(s.k).or_default();
            e.0 += 1;
            e.1 += s.l_acc;
            e.2 += s.l_acc as f64 / s.k as f64;
        }
        let acceptance_by_k = by_k
            .into_iter()
            .map(|(k, (n, sum, rate))| AcceptanceAtK {
                k,
                steps: n,
                mean_l_acc: sum as f64 / n as f64,
                acceptance_rate: rate / n as f64,
            })
            .collect();

        Ok(Self {
            config_hash: config_hash.to_string(),
            prompts: runs.len(),
            steps: traces.iter().map(|t| t.len()).sum(),
            tokens: tokens_generated(&traces),
            truncated: runs.iter().filter(|r| r.truncated).count(),
            mat: mat(&traces)?,
            speedup: speedup(&traces, cost)?,
            cost: total_cost(&traces, cost),
            per_task,
            acceptance_by_k,
        })
    }

    /// Per-task rows plus an `all` row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut write = |task: &str, prompts, steps, tokens, mat: f64, speedup: f64| {
            out.serialize(SummaryRow {
                config_hash: &self.config_hash,
                task,
                prompts,
                steps,
                tokens,
                mat,
                speedup,
            })
        };
        write("all", self.prompts, self.steps, self.tokens, self.mat, self.speedup).map_err(csv_err)?;
        for t in &self.per_task {
            write(&t.task, t.prompts, t.steps, t.tokens, t.mat, t.speedup).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))
    }
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    config_hash: &'a str,
    task: &'a str,
    prompts: usize,
    steps: usize,
    tokens: usize,
    mat: f64,
    speedup: f64,
}

/// One row of an ablation grid or a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub knob: String,
    pub value: String,
    pub config_hash: String,
    pub prompts: usize,
    pub steps: usize,
    pub tokens: usize,
    pub mat: f64,
    pub speedup: f64,
    pub draft_cost: f64,
    pub verify_cost: f64,
    pub cps_cost: f64,
}

impl SweepRow {
    pub fn from_summary(knob: &str, value: impl Into<String>, s: &RunSummary) -> Self {
        Self {
            knob: knob.to_string(),
            value: value.into(),
            config_hash: s.config_hash.clone(),
            prompts: s.prompts,
            steps: s.steps,
            tokens: s.tokens,
            mat: s.mat,
            speedup: s.speedup,
            draft_cost: s.cost.draft,
            verify_cost: s.cost.verify,
            cps_cost: s.cost.cps,
        }
    }
}

pub fn write_rows_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("<csv>", io),
        other => Error::InvalidConfig(format!("csv: {other:?}")),
    }
}
