//! Budgeted mask production.
//!
//! Training draws a Bernoulli mask and projects it onto the budget; inference
//! takes the deterministic top-k. The remaining samplers exist for ablations.
//! Ties are always broken toward the lower token index.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markup::{budget_count, HighlightMask};
use crate::policy::ScoreMap;

/// Highlight budget: fraction `gamma` of the eligible tokens, `k` as a count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub gamma: f64,
    pub k: usize,
}

impl Budget {
    pub fn new(gamma: f64, eligible: usize) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Config(format!("budget fraction must be in (0, 1], got {gamma}")));
        }
        Ok(Self {
            gamma,
            k: budget_count(gamma, eligible),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Bernoulli draw per token, then projection onto the budget.
    #[default]
    BernoulliProject,
    /// Deterministic top-k.
    GreedyTopk,
    /// Sequential sampling without replacement, proportional to `p`.
    SoftmaxWor,
    /// Top-k of `ln p + g`, `g ~ Gumbel(0, 1)`.
    GumbelTopk,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] = [
        SamplerKind::BernoulliProject,
        SamplerKind::GreedyTopk,
        SamplerKind::SoftmaxWor,
        SamplerKind::GumbelTopk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::BernoulliProject => "bernoulli_project",
            SamplerKind::GreedyTopk => "greedy_topk",
            SamplerKind::SoftmaxWor => "softmax_wor",
            SamplerKind::GumbelTopk => "gumbel_topk",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SamplerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sampler {s:?}")))
    }
}

/// Descending by probability, ascending by index on ties.
fn by_prob_desc(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
}

fn check_k(k: usize, omega: &[usize]) -> Result<()> {
    if k > omega.len() {
        return Err(Error::Budget {
            requested: k,
            available: omega.len(),
        });
    }
    Ok(())
}

/// Independent Bernoulli draw for every token in omega.
pub fn sample_bernoulli<R: Rng + ?Sized>(scores: &ScoreMap, omega: &[usize], rng: &mut R) -> HighlightMask {
    let mut m = HighlightMask::zeros(scores.len());
    for &i in omega {
        let u: f64 = rng.random();
        if u < scores.get(i) {
            m.set(i, true);
        }
    }
    m
}

/// Keep at most `k` of the selected tokens, preferring larger probability.
/// Only ever clears bits.
pub fn project_k(mask: &HighlightMask, scores: &ScoreMap, k: usize) -> HighlightMask {
    if mask.popcount() <= k {
        return mask.clone();
    }
    let mut sel: Vec<usize> = mask.selected().collect();
    sel.sort_by(by_prob_desc(scores.probs()));
    HighlightMask::from_indices(mask.len(), sel.into_iter().take(k))
}

/// The `k` tokens of omega with the largest probability.
pub fn topk(scores: &ScoreMap, omega: &[usize], k: usize) -> Result<HighlightMask> {
    check_k(k, omega)?;
    let mut idx = omega.to_vec();
    idx.sort_by(by_prob_desc(scores.probs()));
    Ok(HighlightMask::from_indices(scores.len(), idx.into_iter().take(k)))
}

/// Top-k of `ln p_i + noise_scale * g_i`. With `noise_scale = 0` this is
/// [`topk`].
pub fn gumbel_topk<R: Rng + ?Sized>(
    scores: &ScoreMap,
    omega: &[usize],
    k: usize,
    noise_scale: f64,
    rng: &mut R,
) -> Result<HighlightMask> {
    check_k(k, omega)?;
    let mut keyed: Vec<(usize, f64)> = omega
        .iter()
        .map(|&i| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let g = -(-u.ln()).ln();
            (i, scores.get(i).ln() + noise_scale * g)
        })
        .collect();
    keyed.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    Ok(HighlightMask::from_indices(scores.len(), keyed.into_iter().take(k).map(|(i, _)| i)))
}

/// Draw `k` distinct tokens one at a time, each with probability
/// proportional to its `p` among those not yet drawn.
pub fn softmax_without_replacement<R: Rng + ?Sized>(
    scores: &ScoreMap,
    omega: &[usize],
    k: usize,
    rng: &mut R,
) -> Result<HighlightMask> {
    check_k(k, omega)?;
    let mut pool: Vec<usize> = omega.to_vec();
    let mut weights: Vec<f64> = pool.iter().map(|&i| scores.get(i)).collect();
    let mut total: f64 = weights.iter().sum();
    let mut m = HighlightMask::zeros(scores.len());
    for _ in 0..k {
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = pool.len() - 1;
        for (j, w) in weights.iter().enumerate() {
            acc += w;
            if target < acc {
                pick = j;
                break;
            }
        }
        m.set(pool[pick], true);
        total -= weights[pick];
        pool.swap_remove(pick);
        weights.swap_remove(pick);
        // Guard against drift from repeated subtraction.
        if total <= 0.0 {
            total = weights.iter().sum();
        }
    }
    Ok(m)
}

/// A sampled mask together with the mask before projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    /// The mask whose Bernoulli log-likelihood drives the policy gradient.
    pub raw: HighlightMask,
    /// The budget-feasible mask used to build the emphasized text.
    pub projected: HighlightMask,
}

/// Sample a budget-feasible mask of the given kind. Every kind returns at
/// most `k` bits; all but `BernoulliProject` return exactly `k`.
pub fn sample<R: Rng + ?Sized>(
    kind: SamplerKind,
    scores: &ScoreMap,
    omega: &[usize],
    k: usize,
    rng: &mut R,
) -> Result<Draw> {
    check_k(k, omega)?;
    let draw = match kind {
        SamplerKind::BernoulliProject => {
            let raw = sample_bernoulli(scores, omega, rng);
            let projected = project_k(&raw, scores, k);
            Draw { raw, projected }
        }
        SamplerKind::GreedyTopk => {
            let m = topk(scores, omega, k)?;
            Draw { raw: m.clone(), projected: m }
        }
        SamplerKind::SoftmaxWor => {
            let m = softmax_without_replacement(scores, omega, k, rng)?;
            Draw { raw: m.clone(), projected: m }
        }
        SamplerKind::GumbelTopk => {
            let m = gumbel_topk(scores, omega, k, 1.0, rng)?;
            Draw { raw: m.clone(), projected: m }
        }
    };
    Ok(draw)
}

/// The ablation samplers, returning only the feasible mask.
pub fn sample_alternative<R: Rng + ?Sized>(
    scores: &ScoreMap,
    omega: &[usize],
    k: usize,
    kind: SamplerKind,
    rng: &mut R,
) -> Result<HighlightMask> {
    Ok(sample(kind, scores, omega, k, rng)?.projected)
}
