//! Run configuration: a flat TOML document, overridden by environment
//! variables, overridden in turn by command-line flags.

use std::path::{Path, PathBuf};

use hilight::markup::{MarkerFormat, MarkerRegistry};
use hilight::rewards::RewardSpec;
use hilight::selection::SamplerKind;
use hilight::solver::{HttpSolver, HttpSolverConfig, OracleConfig, OracleSolver, PromptTemplate, Solver};
use hilight::trainer::TrainConfig;
use hilight::{Error, Result};
use serde::{Deserialize, Serialize};

pub const ENV_ENDPOINT: &str = "HILIGHT_ENDPOINT";
pub const ENV_TOKEN: &str = "HILIGHT_AUTH_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    /// Correct iff emphasized text covers enough gold evidence.
    Oracle,
    /// Like `oracle`, and the character before each evidence span must be
    /// visible.
    OracleBridge,
    /// Remote generator behind the HTTP contract.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: String,
    pub train_path: Option<PathBuf>,
    pub eval_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub reward: String,

    pub solver: SolverKind,
    pub coverage_threshold: f64,
    pub endpoint: Option<String>,
    pub auth_token: Option<String>,
    pub template: String,
    pub max_attempts: u32,
    pub timeout_secs: f64,
    pub max_tokens: u32,
    pub temperature: f64,

    pub group_size: usize,
    pub gamma: f64,
    pub delta: usize,
    pub lambda_len: f64,
    pub beta_ent: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub steps: u64,
    pub seed: u64,
    pub sampler: SamplerKind,
    pub marker: String,
    pub tau: f64,
    pub init_bias: Option<f64>,
    pub failure_budget: usize,
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            task: "qa".into(),
            train_path: None,
            eval_path: None,
            out_dir: PathBuf::from("runs/default"),
            reward: "qa".into(),
            solver: SolverKind::Oracle,
            coverage_threshold: 0.8,
            endpoint: None,
            auth_token: None,
            template: "qa".into(),
            max_attempts: 3,
            timeout_secs: 60.0,
            max_tokens: 64,
            temperature: 0.0,
            group_size: t.group_size,
            gamma: t.gamma,
            delta: t.delta,
            lambda_len: t.lambda_len,
            beta_ent: t.beta_ent,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            steps: t.steps,
            seed: t.seed,
            sampler: t.sampler,
            marker: "default".into(),
            tau: t.tau,
            init_bias: t.init_bias,
            failure_budget: t.failure_budget,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }

    /// Fill the solver endpoint and token from the environment when the file
    /// leaves them unset.
    pub fn apply_env(&mut self) {
        if self.endpoint.is_none() {
            self.endpoint = std::env::var(ENV_ENDPOINT).ok();
        }
        if self.auth_token.is_none() {
            self.auth_token = std::env::var(ENV_TOKEN).ok();
        }
    }

    pub fn marker_format(&self) -> Result<MarkerFormat> {
        marker_by_name(&self.marker)
    }

    pub fn reward_spec(&self) -> Result<RewardSpec> {
        self.reward
            .parse()
            .map_err(|e| Error::Config(format!("reward: {e}")))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            group_size: self.group_size,
            gamma: self.gamma,
            delta: self.delta,
            lambda_len: self.lambda_len,
            beta_ent: self.beta_ent,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            steps: self.steps,
            seed: self.seed,
            sampler: self.sampler,
            marker: self.marker_format()?,
            tau: self.tau,
            init_bias: self.init_bias,
            reward: self.reward_spec()?,
            failure_budget: self.failure_budget,
            checkpoint_every: self.checkpoint_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `field` must name an existing file.
    pub fn require_path(&self, field: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        let p = value
            .clone()
            .ok_or_else(|| Error::Config(format!("{field}: required but not set")))?;
        if !p.is_file() {
            return Err(Error::Config(format!("{field}: {} does not exist", p.display())));
        }
        Ok(p)
    }

    /// Build the one configured solver backend, emphasizing with `marker`.
    pub fn build_solver(&self, marker: &MarkerFormat) -> Result<Box<dyn Solver>> {
        match self.solver {
            SolverKind::Oracle | SolverKind::OracleBridge => {
                let cfg = OracleConfig {
                    coverage_threshold: self.coverage_threshold,
                    require_bridge: self.solver == SolverKind::OracleBridge,
                    ..OracleConfig::default()
                };
                Ok(Box::new(OracleSolver::new(cfg, marker.clone(), "\n")?))
            }
            SolverKind::Http => {
                let url = self.endpoint.clone().ok_or_else(|| {
                    Error::Config(format!("endpoint: required for the http solver (or set {ENV_ENDPOINT})"))
                })?;
                let cfg = HttpSolverConfig {
                    url,
                    auth_token: self.auth_token.clone(),
                    timeout_secs: self.timeout_secs,
                    max_attempts: self.max_attempts,
                    backoff_ms: 200,
                    max_tokens: self.max_tokens,
                    temperature: self.temperature,
                };
                let template = PromptTemplate::builtin(&self.template)?;
                Ok(Box::new(HttpSolver::new(cfg, template)?))
            }
        }
    }
}

pub fn marker_by_name(name: &str) -> Result<MarkerFormat> {
    MarkerRegistry::builtin().get(name).cloned()
}
