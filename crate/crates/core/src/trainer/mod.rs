//! Grouped policy-gradient training of the token scorer against a frozen
//! solver, and evaluation of trained scorers.
//!
//! One step takes a single instance, draws `G` masks from the current
//! policy, asks the solver about each emphasized context, normalizes the
//! rewards within the group and applies one AdamW update to
//!
//! ```text
//! L = L_PG + lambda_len * L_LEN + beta_ent * L_ENT
//! L_PG  = -(1/G) * sum_j A_j * log pi(raw mask j)
//! L_LEN = (mean p - gamma)^2
//! L_ENT = -(mean Bernoulli entropy)
//! ```

mod checkpoint;
mod eval;
mod optim;

pub use checkpoint::{config_hash, Checkpoint, CHECKPOINT_VERSION};
pub use eval::{evaluate, EvalConfig, EvalReport, Variant};
pub use optim::{OptimizerState, ADAM_EPS, BETA1, BETA2};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::error::{Error, Result};
use crate::markup::{budget_count, coalesce, inject, HighlightMask, MarkerFormat, DEFAULT_DELTA};
use crate::policy::{
    clamp_prob, entropy, featurize, log_prob, log_prob_grad_normalized, score_normalized, IdfTable, NormStats,
    ParamGrad, ScoreMap, ScorerParams, TokenFeatures, FEATURE_DIM,
};
use crate::rewards::{Answer, RewardSpec};
use crate::rng::{hash_str, stream};
use crate::selection::{sample, SamplerKind};
use crate::solver::{SolveRequest, Solver, SolverOutput};
use crate::text::{tokenize, TokenizedContext};

/// Added to the group standard deviation when normalizing advantages.
pub const ADV_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
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
    pub marker: MarkerFormat,
    pub tau: f64,
    /// Initial bias; `None` starts at `logit(gamma)` so the mean probability
    /// begins on budget.
    pub init_bias: Option<f64>,
    pub reward: RewardSpec,
    /// Solver failures tolerated before training aborts.
    pub failure_budget: usize,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 4,
            gamma: 0.15,
            delta: DEFAULT_DELTA,
            lambda_len: 0.01,
            beta_ent: 1.0,
            learning_rate: 1e-4,
            weight_decay: 1e-2,
            steps: 2000,
            seed: 0,
            sampler: SamplerKind::BernoulliProject,
            marker: MarkerFormat::default(),
            tau: 1.0,
            init_bias: None,
            reward: RewardSpec::qa(),
            failure_budget: 16,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.group_size < 2 {
            return bad(format!("group size must be at least 2, got {}", self.group_size));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        for (name, v) in [
            ("lambda_len", self.lambda_len),
            ("beta_ent", self.beta_ent),
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        self.marker.validate()
    }
}

/// Scorer parameters together with the IDF table their features use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub params: ScorerParams,
    pub idf: IdfTable,
}

/// An instance tokenized and featurized under a model's frozen statistics.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub ctx: TokenizedContext,
    pub normalized: TokenFeatures,
}

impl Model {
    /// Fit IDF and standardization statistics on `train`; weights start at
    /// zero.
    pub fn init(train: &[Instance], gamma: f64, tau: f64, init_bias: Option<f64>) -> Result<Self> {
        let idf = IdfTable::fit(train.iter().map(|i| i.context.as_str()));
        let feats: Vec<TokenFeatures> = train
            .iter()
            .map(|i| featurize(&i.query, &tokenize(&i.context), &idf))
            .collect();
        let norm = NormStats::fit(FEATURE_DIM, feats.iter().flat_map(|f| f.rows()));
        let p = clamp_prob(gamma);
        let bias = init_bias.unwrap_or(tau * (p / (1.0 - p)).ln());
        Ok(Self {
            params: ScorerParams::new(norm, tau, bias)?,
            idf,
        })
    }

    pub fn prepare(&self, inst: &Instance) -> Result<Prepared> {
        let ctx = tokenize(&inst.context);
        let normalized = self.params.normalize(&featurize(&inst.query, &ctx, &self.idf))?;
        Ok(Prepared { ctx, normalized })
    }

    pub fn scores(&self, prepared: &Prepared) -> ScoreMap {
        score_normalized(&prepared.normalized, &self.params)
    }

    pub fn score_instance(&self, inst: &Instance) -> Result<(Prepared, ScoreMap)> {
        let p = self.prepare(inst)?;
        let s = self.scores(&p);
        Ok((p, s))
    }
}

/// `(r_j - mean) / (population std + eps)`. A group of identical rewards
/// gets exact zeros; rounding in the mean would otherwise leave residue.
pub fn advantages(rewards: &[f64], eps: f64) -> Vec<f64> {
    if rewards.windows(2).all(|w| w[0] == w[1]) {
        return vec![0.0; rewards.len()];
    }
    let n = rewards.len() as f64;
    let mu = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mu) * (r - mu)).sum::<f64>() / n;
    let sd = var.sqrt();
    rewards.iter().map(|r| (r - mu) / (sd + eps)).collect()
}

/// Everything one group produced.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSample {
    /// Masks before budget projection; the policy gradient uses these.
    pub raw: Vec<HighlightMask>,
    pub projected: Vec<HighlightMask>,
    pub emphasized: Vec<String>,
    pub outputs: Vec<Option<SolverOutput>>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Episodes whose solver call failed or whose output did not parse.
    pub flagged: Vec<bool>,
}

impl GroupSample {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub pg: f64,
    pub len: f64,
    pub ent: f64,
    pub total: f64,
}

pub fn loss_terms(group: &GroupSample, scores: &ScoreMap, omega: &[usize], cfg: &TrainConfig) -> LossTerms {
    let g = group.len() as f64;
    let pg = -group
        .advantages
        .iter()
        .zip(&group.log_probs)
        .map(|(a, l)| a * l)
        .sum::<f64>()
        / g;
    let d = scores.mean_over(omega) - cfg.gamma;
    let len = d * d;
    let ent = -entropy(scores, omega);
    LossTerms {
        pg,
        len,
        ent,
        total: pg + cfg.lambda_len * len + cfg.beta_ent * ent,
    }
}

/// Analytic gradient of the total loss in `(w, b)`.
pub fn loss_grad(
    group: &GroupSample,
    normalized: &TokenFeatures,
    scores: &ScoreMap,
    omega: &[usize],
    cfg: &TrainConfig,
    tau: f64,
) -> ParamGrad {
    let mut grad = ParamGrad::zeros(normalized.dim());
    let g = group.len() as f64;
    for (mask, &a) in group.raw.iter().zip(&group.advantages) {
        if a != 0.0 {
            let lg = log_prob_grad_normalized(mask, normalized, scores, omega, tau);
            grad.add_scaled(&lg, -a / g);
        }
    }
    if omega.is_empty() {
        return grad;
    }
    let n = omega.len() as f64;
    let len_coef = cfg.lambda_len * 2.0 * (scores.mean_over(omega) - cfg.gamma) / n;
    let ent_coef = -cfg.beta_ent / n;
    for &i in omega {
        let p = scores.get(i);
        let dp = p * (1.0 - p);
        let coef = len_coef * dp + ent_coef * ((1.0 - p) / p).ln() * dp;
        grad.add_token(coef, normalized.row(i), tau);
    }
    grad
}

/// Apply one optimizer step for `group`. Returns `false`, leaving params and
/// optimizer untouched, when the gradient is not finite.
pub fn grad_step(
    group: &GroupSample,
    prepared: &Prepared,
    params: &mut ScorerParams,
    opt: &mut OptimizerState,
    cfg: &TrainConfig,
) -> bool {
    let scores = score_normalized(&prepared.normalized, params);
    let grad = loss_grad(group, &prepared.normalized, &scores, prepared.ctx.omega(), cfg, params.tau);
    if !grad.is_finite() {
        log::warn!("non-finite gradient at optimizer step {}; update skipped", opt.t + 1);
        return false;
    }
    opt.step(params, &grad, cfg.learning_rate, cfg.weight_decay);
    true
}

fn reward_of(spec: &RewardSpec, inst: &Instance, out: &Result<SolverOutput>) -> (f64, bool) {
    let Ok(out) = out else {
        return (0.0, true);
    };
    let Some(answer) = &out.parsed else {
        return (0.0, true);
    };
    match spec.composite(answer, &inst.gold) {
        Ok(r) => (r, false),
        Err(e) => {
            log::warn!("reward for {} failed: {e}", inst.id);
            (0.0, true)
        }
    }
}

/// Draw a group for one instance and query the solver.
pub fn rollout(
    inst: &Instance,
    prepared: &Prepared,
    scores: &ScoreMap,
    solver: &dyn Solver,
    cfg: &TrainConfig,
    step: u64,
) -> Result<(GroupSample, usize)> {
    let ctx = &prepared.ctx;
    let omega = ctx.omega();
    let k = budget_count(cfg.gamma, omega.len());
    let mut raw = Vec::with_capacity(cfg.group_size);
    let mut projected = Vec::with_capacity(cfg.group_size);
    let mut emphasized = Vec::with_capacity(cfg.group_size);
    for j in 0..cfg.group_size {
        let mut rng = stream(cfg.seed, &[step, hash_str(&inst.id), j as u64]);
        let draw = sample(cfg.sampler, scores, omega, k, &mut rng)?;
        debug_assert!(draw.projected.popcount() <= k);
        let spans = coalesce(&draw.projected, ctx, cfg.delta)?;
        emphasized.push(inject(ctx, &spans, &cfg.marker)?);
        raw.push(draw.raw);
        projected.push(draw.projected);
    }
    let reqs: Vec<SolveRequest<'_>> = emphasized
        .iter()
        .map(|e| SolveRequest {
            instance: inst,
            emphasized: e,
        })
        .collect();
    let results = solver.solve_batch(&reqs);
    let mut rewards = Vec::with_capacity(cfg.group_size);
    let mut flagged = Vec::with_capacity(cfg.group_size);
    let mut failures = 0;
    for r in &results {
        let (reward, flag) = reward_of(&cfg.reward, inst, r);
        if let Err(e) = r {
            log::warn!("solver call for {} failed: {e}", inst.id);
            failures += 1;
        }
        rewards.push(reward);
        flagged.push(flag);
    }
    let log_probs = raw.iter().map(|m| log_prob(m, scores, omega)).collect();
    let group = GroupSample {
        advantages: advantages(&rewards, ADV_EPS),
        raw,
        projected,
        emphasized,
        outputs: results.into_iter().map(Result::ok).collect(),
        rewards,
        log_probs,
        flagged,
    };
    Ok((group, failures))
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub instance: String,
    pub rewards: Vec<f64>,
    #[serde(rename = "L_PG")]
    pub l_pg: f64,
    #[serde(rename = "L_LEN")]
    pub l_len: f64,
    #[serde(rename = "L_ENT")]
    pub l_ent: f64,
    pub mean_p: f64,
    pub k: usize,
    /// Mean selected tokens per projected mask divided by `k`.
    pub occupancy: f64,
    pub flagged: usize,
    pub skipped: bool,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: Model,
    pub optimizer: OptimizerState,
    pub log: Vec<StepRecord>,
    /// 50-step windows whose mean reward fell below the previous window.
    pub reward_dips: Vec<u64>,
}

impl TrainRun {
    pub fn checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            step: self.log.len() as u64,
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            config_hash: config_hash(cfg),
        }
    }
}

const DIP_WINDOW: usize = 50;

fn reward_dips(log: &[StepRecord]) -> Vec<u64> {
    let means: Vec<f64> = log
        .chunks(DIP_WINDOW)
        .filter(|c| c.len() == DIP_WINDOW)
        .map(|c| c.iter().flat_map(|r| &r.rewards).sum::<f64>() / c.iter().map(|r| r.rewards.len()).sum::<usize>() as f64)
        .collect();
    means
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] < w[0])
        .map(|(i, _)| ((i + 1) * DIP_WINDOW) as u64)
        .collect()
}

/// Train a fresh model on `dataset`. With `out_dir`, the metrics log goes
/// to `metrics.jsonl` and checkpoints to `checkpoint.json` (plus
/// `checkpoint-{step}.json` when periodic checkpoints are enabled).
pub fn train(dataset: &[Instance], solver: &dyn Solver, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainRun> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let model = Model::init(dataset, cfg.gamma, cfg.tau, cfg.init_bias)?;
    train_from(dataset, solver, cfg, model, OptimizerState::new(FEATURE_DIM), out_dir)
}

/// Continue training from existing parameters and optimizer state.
pub fn train_from(
    dataset: &[Instance],
    solver: &dyn Solver,
    cfg: &TrainConfig,
    model: Model,
    optimizer: OptimizerState,
    out_dir: Option<&Path>,
) -> Result<TrainRun> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let prepared: Vec<Prepared> = dataset.iter().map(|i| model.prepare(i)).collect::<Result<_>>()?;
    let mut metrics = match out_dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            Some(BufWriter::new(File::create(d.join("metrics.jsonl"))?))
        }
        None => None,
    };
    let mut run = TrainRun {
        model,
        optimizer,
        log: Vec::new(),
        reward_dips: Vec::new(),
    };
    let mut order: Vec<usize> = Vec::new();
    let mut failures = 0usize;
    for step in 0..cfg.steps {
        let pos = (step % dataset.len() as u64) as usize;
        if pos == 0 {
            order = (0..dataset.len()).collect();
            let epoch = step / dataset.len() as u64;
            order.shuffle(&mut stream(cfg.seed, &[0x004f_5244_4552, epoch]));
        }
        let idx = order[pos];
        let (inst, prep) = (&dataset[idx], &prepared[idx]);
        let scores = run.model.scores(prep);
        let omega = prep.ctx.omega();
        let (group, failed) = rollout(inst, prep, &scores, solver, cfg, step)?;
        failures += failed;
        let terms = loss_terms(&group, &scores, omega, cfg);
        let applied = grad_step(&group, prep, &mut run.model.params, &mut run.optimizer, cfg);
        let k = budget_count(cfg.gamma, omega.len());
        let occupancy = if k == 0 {
            0.0
        } else {
            group.projected.iter().map(|m| m.popcount()).sum::<usize>() as f64 / (k * group.len()) as f64
        };
        let rec = StepRecord {
            step,
            instance: inst.id.clone(),
            rewards: group.rewards.clone(),
            l_pg: terms.pg,
            l_len: terms.len,
            l_ent: terms.ent,
            mean_p: scores.mean_over(omega),
            k,
            occupancy,
            flagged: group.flagged.iter().filter(|&&f| f).count(),
            skipped: !applied,
            seed: cfg.seed,
        };
        if let Some(w) = metrics.as_mut() {
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
        run.log.push(rec);
        if failures > cfg.failure_budget {
            if let Some(d) = out_dir {
                metrics.as_mut().map(|w| w.flush()).transpose()?;
                run.checkpoint(cfg).save(d.join("checkpoint.json"))?;
            }
            return Err(Error::SolverUnavailable {
                attempts: failures as u32,
                last: format!("failure budget of {} exhausted at step {step}", cfg.failure_budget),
            });
        }
        if let Some(d) = out_dir {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                run.checkpoint(cfg).save(d.join(format!("checkpoint-{}.json", step + 1)))?;
            }
        }
    }
    run.reward_dips = reward_dips(&run.log);
    if !run.reward_dips.is_empty() {
        log::info!("smoothed reward dipped at steps {:?}", run.reward_dips);
    }
    if let Some(d) = out_dir {
        metrics.as_mut().map(|w| w.flush()).transpose()?;
        run.checkpoint(cfg).save(d.join("checkpoint.json"))?;
    }
    Ok(run)
}

/// Parse-failure-tolerant answer extraction used by reports.
pub(crate) fn answer_of(out: &Result<SolverOutput>) -> Option<&Answer> {
    out.as_ref().ok().and_then(|o| o.parsed.as_ref())
}
