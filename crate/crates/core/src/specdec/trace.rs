use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::TokenId;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// One speculative step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Block size requested from the drafter.
    pub k: usize,
    /// Raw drafter output before path search.
    pub draft: Vec<TokenId>,
    /// The verified path (after search and length truncation).
    pub path: Vec<TokenId>,
    pub path_score: f64,
    pub accept_bits: Vec<bool>,
    pub l_acc: usize,
    pub l_gen: usize,
    pub replacement: Option<TokenId>,
    /// Tokens appended to the output this step.
    pub committed: usize,
    /// Proposal probability of each path token as used in the acceptance ratio.
    pub q_probs: Vec<f64>,
    /// Left-to-right proxy probability of each path token.
    pub l2r_probs: Vec<f64>,
    /// Target probability of each path token.
    pub p_probs: Vec<f64>,
    pub target_passes: usize,
    pub drafter_passes: usize,
    pub cps_expansions: usize,
    /// Controller state after this step (unchanged on the terminating step).
    pub ema_gen: f64,
    pub ema_acc: f64,
    pub k_next: usize,
    pub terminated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_us: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: u32,
    pub config_hash: String,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub schema: u32,
    pub prompt: usize,
    #[serde(flatten)]
    pub record: StepRecord,
}

pub fn write_trace_header<W: Write>(mut w: W, config_hash: &str, config: serde_json::Value) -> Result<()> {
    let header = TraceHeader {
        schema: TRACE_SCHEMA_VERSION,
        config_hash: config_hash.to_string(),
        config,
    };
    let line = serde_json::to_string(&header).map_err(|e| Error::json("trace header", e))?;
    writeln!(w, "{line}").map_err(|e| Error::io("<trace>", e))
}

pub fn write_trace_steps<W: Write>(mut w: W, prompt: usize, records: &[StepRecord]) -> Result<()> {
    for record in records {
        let step = TraceStep {
            schema: TRACE_SCHEMA_VERSION,
            prompt,
            record: record.clone(),
        };
        let line = serde_json::to_string(&step).map_err(|e| Error::json("trace step", e))?;
        writeln!(w, "{line}").map_err(|e| Error::io("<trace>", e))?;
    }
    Ok(())
}

fn check_schema(found: u32) -> Result<()> {
    if found != TRACE_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found,
            expected: TRACE_SCHEMA_VERSION,
        });
    }
    Ok(())
}

/// Reads a trace written by [`write_trace_header`] and [`write_trace_steps`].
pub fn read_trace<R: BufRead>(r: R) -> Result<(TraceHeader, Vec<TraceStep>)> {
    let mut lines = r.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::InvalidConfig("empty trace file".into()))?
        .map_err(|e| Error::io("<trace>", e))?;
    let header: TraceHeader = serde_json::from_str(&first).map_err(|e| Error::json("trace header", e))?;
    check_schema(header.schema)?;
    let mut steps = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io("<trace>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let step: TraceStep = serde_json::from_str(&line).map_err(|e| Error::json(format!("trace line {}", n + 2), e))?;
        check_schema(step.schema)?;
        steps.push(step);
    }
    Ok((header, steps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> StepRecord {
        StepRecord {
            step: 0,
            k: 4,
            draft: vec![1, 2, 3, 4],
            path: vec![1, 2, 3],
            path_score: -2.5,
            accept_bits: vec![true, false],
            l_acc: 1,
            l_gen: 3,
            replacement: Some(7),
            committed: 2,
            q_probs: vec![1.0, 1.0, 1.0],
            l2r_probs: vec![0.3, 0.2, 0.1],
            p_probs: vec![0.4, 0.1, 0.05],
            target_passes: 1,
            drafter_passes: 1,
            cps_expansions: 12,
            ema_gen: 3.5,
            ema_acc: 2.5,
            k_next: 20,
            terminated: false,
            wall_us: None,
        }
    }

    #[test]
    fn round_trip() {
        let mut buf = Vec::new();
        write_trace_header(&mut buf, "abc", serde_json::json!({"seed": 1})).unwrap();
        write_trace_steps(&mut buf, 3, &[record(), record()]).unwrap();
        let (header, steps) = read_trace(buf.as_slice()).unwrap();
        assert_eq!(header.config_hash, "abc");
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[0].prompt, 3);
        assert_eq!(steps[1].record, record());
    }

    #[test]
    fn unknown_version_rejected() {
        let line = r#"{"schema":99,"config_hash":"x","config":null}"#;
        assert!(matches!(
            read_trace(line.as_bytes()),
            Err(Error::SchemaVersion { found: 99, .. })
        ));
    }
}
