//! Dataset records, JSONL interchange, synthetic benchmarks, recommendation
//! preprocessing and evidence-overlap scoring.

mod covis;
mod synth;

pub use covis::{build_covis, candidates, popularity, recency_scores, CoVisGraph};
pub use synth::{gen_needle, gen_needles, NeedleTemplate, SynthSpec};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::policy::ScoreMap;
use crate::rewards::{overlap_prf, Gold};
use crate::text::TokenizedContext;

/// Item metadata shown to a re-ranking solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: i64,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brand: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cat: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_band: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrases: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// One dataset record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub query: String,
    pub context: String,
    pub gold: Gold,
    /// Byte ranges `[start, end)` of gold evidence within `context`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_spans: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<Candidate>>,
    /// Fields this schema does not know about, kept for round-trips.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Instance {
    pub fn evidence_ranges(&self) -> Vec<Range<usize>> {
        self.evidence_spans
            .iter()
            .flatten()
            .map(|&[s, e]| s..e)
            .collect()
    }

    /// Evidence spans must lie inside the context, on character boundaries,
    /// and must not overlap.
    pub fn validate(&self) -> Result<()> {
        let mut spans = self.evidence_ranges();
        spans.sort_by_key(|r| r.start);
        let mut prev_end = 0;
        for r in &spans {
            if r.start > r.end || r.end > self.context.len() {
                return Err(Error::Range {
                    start: r.start,
                    end: r.end,
                    len: self.context.len(),
                });
            }
            if !self.context.is_char_boundary(r.start) || !self.context.is_char_boundary(r.end) {
                return Err(Error::Structural(format!(
                    "evidence span {}..{} splits a character",
                    r.start, r.end
                )));
            }
            if r.start < prev_end {
                return Err(Error::Structural("evidence spans overlap".into()));
            }
            prev_end = r.end;
        }
        Ok(())
    }
}

/// Read one instance per non-blank line.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Instance>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: Instance = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        inst.validate().map_err(|e| Error::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(inst);
    }
    Ok(out)
}

pub fn save_jsonl(dataset: &[Instance], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for inst in dataset {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Indices in omega of tokens that intersect any of `spans`.
pub fn tokens_in_spans(ctx: &TokenizedContext, spans: &[Range<usize>]) -> Vec<usize> {
    ctx.omega()
        .iter()
        .copied()
        .filter(|&i| {
            let t = &ctx.tokens()[i];
            spans.iter().any(|r| t.start < r.end && r.start < t.end)
        })
        .collect()
}

/// Token-level precision, recall and F1 of thresholded scores against gold
/// evidence spans.
pub fn evidence_overlap(
    scores: &ScoreMap,
    threshold: f64,
    gold_spans: &[Range<usize>],
    ctx: &TokenizedContext,
) -> (f64, f64, f64) {
    let gold = tokens_in_spans(ctx, gold_spans);
    let predicted: Vec<usize> = ctx
        .omega()
        .iter()
        .copied()
        .filter(|&i| scores.get(i) >= threshold)
        .collect();
    let tp = predicted.iter().filter(|i| gold.binary_search(i).is_ok()).count();
    overlap_prf(tp, predicted.len(), gold.len())
}
