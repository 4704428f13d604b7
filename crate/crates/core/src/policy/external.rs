//! Inference-only scorers that live outside this process.
//!
//! Wire protocol, one JSON object per line (or per HTTP body):
//!
//! ```text
//! -> {"op":"score","query":"...","tokens":["...", ...]}
//! <- {"probs":[0.12, ...]}
//! ```
//!
//! The response must carry exactly one probability in `[0, 1]` per token.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::ScoreMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest<'a> {
    pub op: &'a str,
    pub query: &'a str,
    pub tokens: Vec<&'a str>,
}

impl<'a> ScoreRequest<'a> {
    pub fn new(query: &'a str, tokens: &'a [String]) -> Self {
        Self {
            op: "score",
            query,
            tokens: tokens.iter().map(String::as_str).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub probs: Vec<f64>,
}

impl ScoreResponse {
    fn into_scores(self, expected: usize) -> Result<ScoreMap> {
        if self.probs.len() != expected {
            return Err(Error::Protocol(format!(
                "scorer returned {} probabilities for {expected} tokens",
                self.probs.len()
            )));
        }
        if let Some(p) = self.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Protocol(format!("probability {p} outside [0, 1]")));
        }
        Ok(ScoreMap::from_probs(self.probs))
    }
}

pub(crate) fn decode_response(raw: &str, expected: usize) -> Result<ScoreMap> {
    let resp: ScoreResponse =
        serde_json::from_str(raw.trim()).map_err(|e| Error::Protocol(format!("malformed scorer response: {e}")))?;
    resp.into_scores(expected)
}

/// A token scorer implemented by another program.
pub trait ExternalScorer: Send + Sync {
    fn score_tokens(&self, query: &str, tokens: &[String]) -> Result<ScoreMap>;
}

/// Talks to a long-running child process over its standard streams.
pub struct ProcessScorer {
    child: Child,
    io: Mutex<(ChildStdin, BufReader<ChildStdout>)>,
}

impl ProcessScorer {
    pub fn spawn(program: &str, args: &[&str]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self {
            child,
            io: Mutex::new((stdin, BufReader::new(stdout))),
        })
    }
}

impl ExternalScorer for ProcessScorer {
    fn score_tokens(&self, query: &str, tokens: &[String]) -> Result<ScoreMap> {
        let mut line = serde_json::to_string(&ScoreRequest::new(query, tokens))?;
        line.push('\n');
        let mut io = self.io.lock().expect("scorer pipe poisoned");
        io.0.write_all(line.as_bytes())?;
        io.0.flush()?;
        let mut reply = String::new();
        if io.1.read_line(&mut reply)? == 0 {
            return Err(Error::Protocol("scorer process closed its output".into()));
        }
        decode_response(&reply, tokens.len())
    }
}

impl Drop for ProcessScorer {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// POSTs the request body to an HTTP endpoint.
pub struct HttpScorer {
    url: String,
    agent: ureq::Agent,
}

impl HttpScorer {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { url: url.into(), agent }
    }
}

impl ExternalScorer for HttpScorer {
    fn score_tokens(&self, query: &str, tokens: &[String]) -> Result<ScoreMap> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(ScoreRequest::new(query, tokens))
            .map_err(|e| Error::Protocol(format!("scorer request failed: {e}")))?;
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Protocol(format!("scorer response unreadable: {e}")))?;
        decode_response(&body, tokens.len())
    }
}
