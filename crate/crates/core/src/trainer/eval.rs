use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{answer_of, Model};
use crate::data::{evidence_overlap, Instance};
use crate::error::{Error, Result};
use crate::markup::{budget_count, char_spans, coalesce, inject, prune, random_mask, spans_to_mask, MarkerFormat, DEFAULT_DELTA};
use crate::rewards::RewardSpec;
use crate::rng::{hash_str, stream};
use crate::selection::{sample, topk, SamplerKind};
use crate::solver::{SolveRequest, Solver};

/// What the solver is shown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// The untouched context.
    NoHighlight,
    /// `k` uniformly random tokens, emphasized.
    Random,
    /// Only the top-`k` spans, everything else dropped.
    Pruned,
    /// The top-`k` spans emphasized in place.
    Highlight,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::NoHighlight, Variant::Random, Variant::Pruned, Variant::Highlight];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NoHighlight => "no-highlight",
            Variant::Random => "random",
            Variant::Pruned => "pruned",
            Variant::Highlight => "highlight",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub gamma: f64,
    pub delta: usize,
    pub marker: MarkerFormat,
    pub variant: Variant,
    pub reward: RewardSpec,
    /// Score threshold for evidence overlap.
    pub threshold: f64,
    /// Separator between kept spans in the pruned variant.
    pub joiner: String,
    pub seed: u64,
    /// Instances sent to the solver per batch.
    pub batch: usize,
    /// Draw the selection with this sampler instead of deterministic top-k.
    pub sampler: Option<SamplerKind>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            gamma: 0.15,
            delta: DEFAULT_DELTA,
            marker: MarkerFormat::default(),
            variant: Variant::Highlight,
            reward: RewardSpec::qa(),
            threshold: 0.5,
            joiner: "\n".into(),
            seed: 0,
            batch: 8,
            sampler: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub instances: usize,
    pub reward: f64,
    /// Mean of each reward component.
    pub metrics: BTreeMap<String, f64>,
    /// Mean fraction of eligible tokens shown as emphasized (or kept, for
    /// the pruned variant).
    pub mean_highlight_fraction: f64,
    /// Mean per-instance precision, recall and F1 of `p >= threshold`
    /// against gold evidence, over instances that carry evidence.
    pub evidence: Option<[f64; 3]>,
    pub solver_failures: usize,
    /// Hash of every instance's selected character spans, for comparing
    /// selections across runs.
    pub span_digest: String,
}

/// Deterministic evaluation: one solver call per instance.
pub fn evaluate(dataset: &[Instance], model: &Model, solver: &dyn Solver, cfg: &EvalConfig) -> Result<EvalReport> {
    if !(0.0..=1.0).contains(&cfg.gamma) {
        return Err(Error::Config(format!("gamma must be in [0, 1], got {}", cfg.gamma)));
    }
    cfg.marker.validate()?;
    let mut texts = Vec::with_capacity(dataset.len());
    let mut fractions = Vec::with_capacity(dataset.len());
    let mut evidence = Vec::new();
    let mut span_text = String::new();
    for inst in dataset {
        let (prep, scores) = model.score_instance(inst)?;
        let ctx = &prep.ctx;
        let omega = ctx.omega();
        let k = budget_count(cfg.gamma, omega.len());
        let (text, shown, spans) = match cfg.variant {
            Variant::NoHighlight => (inst.context.clone(), 0, Vec::new()),
            Variant::Random => {
                let mask = random_mask(ctx, k, cfg.seed ^ hash_str(&inst.id))?;
                let spans = coalesce(&mask, ctx, cfg.delta)?;
                let text = inject(ctx, &spans, &cfg.marker)?;
                (text, spans_to_mask(&spans, ctx.len()).popcount(), spans)
            }
            Variant::Pruned | Variant::Highlight => {
                let mask = match cfg.sampler {
                    None => topk(&scores, omega, k)?,
                    Some(kind) => {
                        let mut rng = stream(cfg.seed, &[0x4556_414c, hash_str(&inst.id)]);
                        sample(kind, &scores, omega, k, &mut rng)?.projected
                    }
                };
                let spans = coalesce(&mask, ctx, cfg.delta)?;
                let shown = spans_to_mask(&spans, ctx.len()).popcount();
                let text = if cfg.variant == Variant::Pruned {
                    prune(ctx, &spans, &cfg.joiner)
                } else {
                    inject(ctx, &spans, &cfg.marker)?
                };
                (text, shown, spans)
            }
        };
        span_text.push_str(&format!("{}:{:?};", inst.id, char_spans(&spans)));
        if matches!(cfg.variant, Variant::Pruned | Variant::Highlight) && inst.evidence_spans.is_some() {
            let (p, r, f) = evidence_overlap(&scores, cfg.threshold, &inst.evidence_ranges(), ctx);
            evidence.push([p, r, f]);
        }
        fractions.push(if omega.is_empty() { 0.0 } else { shown as f64 / omega.len() as f64 });
        texts.push(text);
    }

    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut reward = 0.0;
    let mut failures = 0;
    for (chunk_insts, chunk_texts) in dataset.chunks(cfg.batch.max(1)).zip(texts.chunks(cfg.batch.max(1))) {
        let reqs: Vec<SolveRequest<'_>> = chunk_insts
            .iter()
            .zip(chunk_texts)
            .map(|(instance, t)| SolveRequest { instance, emphasized: t })
            .collect();
        for (inst, out) in chunk_insts.iter().zip(solver.solve_batch(&reqs)) {
            if let Err(e) = &out {
                log::warn!("solver call for {} failed: {e}", inst.id);
                failures += 1;
            }
            let mut values = BTreeMap::new();
            for &(m, _) in &cfg.reward.terms {
                let v = answer_of(&out)
                    .and_then(|a| cfg.reward.metric(m, a, &inst.gold).ok())
                    .unwrap_or(0.0);
                values.insert(m, v);
                *sums.entry(m.name().to_string()).or_default() += v;
            }
            reward += cfg.reward.combine(|m| values[&m]);
        }
    }
    let n = dataset.len().max(1) as f64;
    let mean3 = |v: &[[f64; 3]]| {
        let m = v.len() as f64;
        [0, 1, 2].map(|c| v.iter().map(|x| x[c]).sum::<f64>() / m)
    };
    Ok(EvalReport {
        variant: cfg.variant,
        instances: dataset.len(),
        reward: reward / n,
        metrics: sums.into_iter().map(|(k, v)| (k, v / n)).collect(),
        mean_highlight_fraction: fractions.iter().sum::<f64>() / n,
        evidence: (!evidence.is_empty()).then(|| mean3(&evidence)),
        solver_failures: failures,
        span_digest: format!("{:016x}", hash_str(&span_text)),
    })
}
