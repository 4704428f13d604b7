use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{render_prompt, PromptTemplate, SolveRequest, Solver, SolverOutput};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpSolverConfig {
    pub url: String,
    #[serde(default)]
    pub auth_token: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    /// Maximum number of network attempts per call.
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
}

fn default_timeout_secs() -> f64 {
    60.0
}
fn default_attempts() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    200
}
fn default_max_tokens() -> u32 {
    64
}

impl HttpSolverConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            auth_token: None,
            timeout_secs: default_timeout_secs(),
            max_attempts: default_attempts(),
            backoff_ms: default_backoff_ms(),
            max_tokens: default_max_tokens(),
            temperature: 0.0,
        }
    }
}

#[derive(Serialize)]
struct Request<'a> {
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct Response {
    text: String,
}

enum Failure {
    Retry(String),
    Fatal(Error),
}

/// Solver behind `POST {"prompt","max_tokens","temperature"}` returning
/// `{"text"}`.
pub struct HttpSolver {
    cfg: HttpSolverConfig,
    template: PromptTemplate,
    agent: ureq::Agent,
}

impl HttpSolver {
    pub fn new(cfg: HttpSolverConfig, template: PromptTemplate) -> Result<Self> {
        template.validate()?;
        if cfg.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        if !(cfg.timeout_secs > 0.0 && cfg.timeout_secs.is_finite()) {
            return Err(Error::Config("timeout must be positive".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { cfg, template, agent })
    }

    fn attempt(&self, prompt: &str) -> std::result::Result<String, Failure> {
        let mut req = self.agent.post(&self.cfg.url);
        if let Some(tok) = &self.cfg.auth_token {
            req = req.header("Authorization", &format!("Bearer {tok}"));
        }
        let body = Request {
            prompt,
            max_tokens: self.cfg.max_tokens,
            temperature: self.cfg.temperature,
        };
        let mut resp = req.send_json(&body).map_err(|e| Failure::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retry(e.to_string()))?;
        match status {
            200..=299 => {}
            429 | 500..=599 => return Err(Failure::Retry(format!("HTTP {status}"))),
            _ => return Err(Failure::Fatal(Error::Protocol(format!("HTTP {status}: {text}")))),
        }
        serde_json::from_str::<Response>(&text)
            .map(|r| r.text)
            .map_err(|e| Failure::Fatal(Error::Protocol(format!("malformed solver payload: {e}"))))
    }

    /// Send a rendered prompt, retrying transport failures with exponential
    /// backoff.
    pub fn call(&self, prompt: &str) -> Result<SolverOutput> {
        let started = Instant::now();
        let mut last = String::new();
        for attempt in 1..=self.cfg.max_attempts {
            match self.attempt(prompt) {
                Ok(text) => {
                    return Ok(SolverOutput::new(text, self.template.contract, started.elapsed(), attempt));
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(msg)) => {
                    log::warn!("solver attempt {attempt}/{} failed: {msg}", self.cfg.max_attempts);
                    last = msg;
                    if attempt < self.cfg.max_attempts {
                        thread::sleep(Duration::from_millis(self.cfg.backoff_ms << (attempt - 1).min(16)));
                    }
                }
            }
        }
        Err(Error::SolverUnavailable {
            attempts: self.cfg.max_attempts,
            last,
        })
    }
}

impl Solver for HttpSolver {
    fn solve(&self, req: SolveRequest<'_>) -> Result<SolverOutput> {
        let prompt = render_prompt(&req.instance.query, req.emphasized, &self.template)?;
        self.call(&prompt)
    }

    fn solve_batch(&self, reqs: &[SolveRequest<'_>]) -> Vec<Result<SolverOutput>> {
        thread::scope(|s| {
            let handles: Vec<_> = reqs.iter().map(|r| s.spawn(move || self.solve(*r))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Protocol("solver thread panicked".into()))))
                .collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewards::Answer;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Serves scripted `(status, body)` replies, one per connection, and
    /// records each request body.
    fn serve(replies: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>, thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/generate", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        let handle = thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                counter.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, hits, handle)
    }

    fn solver(url: String, attempts: u32) -> HttpSolver {
        let mut cfg = HttpSolverConfig::new(url);
        cfg.max_attempts = attempts;
        cfg.backoff_ms = 1;
        cfg.timeout_secs = 5.0;
        HttpSolver::new(cfg, PromptTemplate::qa()).unwrap()
    }

    #[test]
    fn echo_fixture_parses_answer() {
        let (url, _, h) = serve(vec![(200, r#"{"text":"<answer>Paris</answer>"}"#.into())]);
        let out = solver(url, 3).call("prompt body").unwrap();
        assert_eq!(out.parsed, Some(Answer::Text("Paris".into())));
        assert_eq!(out.attempts, 1);
        let sent: serde_json::Value = serde_json::from_str(&h.join().unwrap()[0]).unwrap();
        assert_eq!(sent["prompt"], "prompt body");
        assert_eq!(sent["temperature"], 0.0);
        assert_eq!(sent["max_tokens"], 64);
    }

    #[test]
    fn malformed_payload_is_protocol_error() {
        let (url, _, h) = serve(vec![(200, r#"{"txt":1}"#.into())]);
        assert!(matches!(solver(url, 3).call("p"), Err(Error::Protocol(_))));
        h.join().unwrap();
    }

    #[test]
    fn retries_until_success() {
        let ok = r#"{"text":"<answer>x</answer>"}"#.to_string();
        let (url, hits, h) = serve(vec![(500, "{}".into()), (503, "{}".into()), (200, ok)]);
        let out = solver(url, 3).call("p").unwrap();
        assert_eq!(out.attempts, 3);
        assert_eq!(hits.load(Ordering::SeqCst), 3);
        h.join().unwrap();
    }

    #[test]
    fn exhausted_retries_report_unavailable() {
        let (url, hits, h) = serve(vec![(500, "{}".into()), (500, "{}".into())]);
        match solver(url, 2).call("p") {
            Err(Error::SolverUnavailable { attempts, .. }) => assert_eq!(attempts, 2),
            other => panic!("{other:?}"),
        }
        assert_eq!(hits.load(Ordering::SeqCst), 2);
        h.join().unwrap();
    }

    #[test]
    fn unreachable_endpoint() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let r = solver(format!("http://127.0.0.1:{port}/"), 2).call("p");
        assert!(matches!(r, Err(Error::SolverUnavailable { attempts: 2, .. })));
    }
}
