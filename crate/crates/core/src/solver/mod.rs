//! Frozen solver clients: prompt rendering, output parsing, an HTTP client
//! and a deterministic oracle.

mod http;
mod oracle;

pub use http::{HttpSolver, HttpSolverConfig};
pub use oracle::{OracleConfig, OracleSolver};

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::error::{Error, Result};
use crate::rewards::Answer;

/// How a solver's raw text is turned into a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputContract {
    AnswerTag,
    FinalJson,
    FreeText,
}

impl OutputContract {
    pub fn parse(self, raw: &str) -> Result<Answer> {
        match self {
            OutputContract::AnswerTag => parse_answer(raw).map(Answer::Text),
            OutputContract::FinalJson => parse_final_json(raw).map(Answer::Ranking),
            OutputContract::FreeText => Ok(Answer::Text(raw.trim().to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Query,
    Context,
    Instruction,
}

impl Slot {
    const ALL: [(Slot, &'static str); 3] = [
        (Slot::Query, "{query}"),
        (Slot::Context, "{context}"),
        (Slot::Instruction, "{instruction}"),
    ];
}

/// A prompt body with `{context}` and `{instruction}` placeholders (exactly
/// one each) and an optional `{query}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub instruction: String,
    pub contract: OutputContract,
}

impl PromptTemplate {
    pub fn new(
        name: impl Into<String>,
        body: impl Into<String>,
        instruction: impl Into<String>,
        contract: OutputContract,
    ) -> Result<Self> {
        let t = Self {
            name: name.into(),
            body: body.into(),
            instruction: instruction.into(),
            contract,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (slot, tag) in Slot::ALL {
            let n = self.body.matches(tag).count();
            let ok = match slot {
                Slot::Query => n <= 1,
                _ => n == 1,
            };
            if !ok {
                return Err(Error::Template(format!(
                    "template '{}' has {n} occurrences of {tag}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Plain layout: context block, query, instruction.
    pub fn plain() -> Self {
        Self {
            name: "plain".into(),
            body: "[CONTEXT]\n{context}\n\n[QUERY]\n{query}\n\n[INSTRUCTION]\n{instruction}\n".into(),
            instruction: "Answer the query from the context. Emphasis markers flag key evidence.".into(),
            contract: OutputContract::FreeText,
        }
    }

    /// Question answering with an `<answer>` tag contract.
    pub fn qa() -> Self {
        Self {
            name: "qa".into(),
            body: "You answer questions with a short phrase.\n\
                   {instruction}\n\
                   Marked spans in the EVIDENCE section carry the key facts.\n\n\
                   QUESTION:\n{query}\n\n\
                   EVIDENCE:\n{context}\n\n\
                   OUTPUT:\n"
                .into(),
            instruction: "Reply with the answer alone, wrapped as <answer>...</answer>.".into(),
            contract: OutputContract::AnswerTag,
        }
    }

    /// Candidate re-ranking with a `<FINAL_JSON>` contract. The context block
    /// holds the history and the candidate list.
    pub fn rerank() -> Self {
        Self {
            name: "rerank".into(),
            body: "Rank the candidate items by how likely the user is to pick one next.\n\
                   {instruction}\n\
                   Marked spans in the history carry the strongest preference signals.\n\n\
                   {context}\n\n\
                   Final JSON Output:\n"
                .into(),
            instruction: "Return a JSON array of {\"id\": int, \"score\": number} objects \
                          between <FINAL_JSON> and </FINAL_JSON>, and nothing else."
                .into(),
            contract: OutputContract::FinalJson,
        }
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "plain" => Ok(Self::plain()),
            "qa" => Ok(Self::qa()),
            "rerank" => Ok(Self::rerank()),
            _ => Err(Error::Config(format!("unknown prompt template '{name}'"))),
        }
    }
}

/// Substitute placeholders in one left-to-right pass, so text inside the
/// query or context is never re-scanned for placeholders.
pub fn render_prompt(query: &str, emphasized: &str, template: &PromptTemplate) -> Result<String> {
    template.validate()?;
    let mut out = String::with_capacity(template.body.len() + emphasized.len() + query.len());
    let mut rest = template.body.as_str();
    loop {
        let next = Slot::ALL
            .iter()
            .filter_map(|&(slot, tag)| rest.find(tag).map(|i| (i, slot, tag)))
            .min_by_key(|&(i, _, _)| i);
        let Some((i, slot, tag)) = next else {
            out.push_str(rest);
            return Ok(out);
        };
        out.push_str(&rest[..i]);
        out.push_str(match slot {
            Slot::Query => query,
            Slot::Context => emphasized,
            Slot::Instruction => &template.instruction,
        });
        rest = &rest[i + tag.len()..];
    }
}

fn tag_payload<'a>(raw: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let end = raw.find(close)?;
    let start = raw[..end].rfind(open)? + open.len();
    Some(&raw[start..end])
}

/// Payload of the first complete `<answer>...</answer>` pair, trimmed.
pub fn parse_answer(raw: &str) -> Result<String> {
    tag_payload(raw, "<answer>", "</answer>")
        .map(|s| s.trim().to_string())
        .ok_or_else(|| Error::Parse("no <answer>...</answer> pair".into()))
}

#[derive(Deserialize)]
struct Scored {
    id: i64,
    score: f64,
}

/// Item ids from the first `<FINAL_JSON>` block, by score descending then id
/// ascending.
pub fn parse_final_json(raw: &str) -> Result<Vec<i64>> {
    let payload = tag_payload(raw, "<FINAL_JSON>", "</FINAL_JSON>")
        .ok_or_else(|| Error::Parse("no <FINAL_JSON>...</FINAL_JSON> pair".into()))?;
    let mut rows: Vec<Scored> =
        serde_json::from_str(payload.trim()).map_err(|e| Error::Parse(format!("FINAL_JSON payload: {e}")))?;
    rows.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    Ok(rows.into_iter().map(|r| r.id).collect())
}

/// Result of one solver call.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutput {
    pub raw_text: String,
    /// `None` when the raw text violated the output contract.
    pub parsed: Option<Answer>,
    pub latency: Duration,
    pub attempts: u32,
}

impl SolverOutput {
    pub fn new(raw_text: String, contract: OutputContract, latency: Duration, attempts: u32) -> Self {
        let parsed = match contract.parse(&raw_text) {
            Ok(a) => Some(a),
            Err(e) => {
                log::debug!("unparseable solver output: {e}");
                None
            }
        };
        Self {
            raw_text,
            parsed,
            latency,
            attempts,
        }
    }
}

/// One query for the solver: the instance and its emphasized context.
#[derive(Debug, Clone, Copy)]
pub struct SolveRequest<'a> {
    pub instance: &'a Instance,
    pub emphasized: &'a str,
}

/// A frozen black-box generator. Implementations must be safe to call from
/// several threads at once.
pub trait Solver: Send + Sync {
    fn solve(&self, req: SolveRequest<'_>) -> Result<SolverOutput>;

    /// Solve a group of requests; results come back in request order.
    fn solve_batch(&self, reqs: &[SolveRequest<'_>]) -> Vec<Result<SolverOutput>> {
        reqs.iter().map(|r| self.solve(*r)).collect()
    }
}
