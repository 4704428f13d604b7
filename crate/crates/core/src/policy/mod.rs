//! Token-importance policy.
//!
//! Each token's feature row is standardized with frozen statistics and
//! mapped to a selection probability
//!
//! ```text
//! p_i = sigmoid((w · x̃_i + b) / tau)
//! ```
//!
//! clamped into `[1e-6, 1 - 1e-6]`. The probabilities define a factorized
//! Bernoulli policy over masks, whose log-likelihood and entropy have closed
//! forms in `(w, b)`; their gradients are implemented here and checked
//! against finite differences in the tests. Setting `b = 0` gives the
//! bias-free head.

mod external;
mod features;

pub use external::{ExternalScorer, HttpScorer, ProcessScorer, ScoreRequest, ScoreResponse};
pub use features::{featurize, IdfTable, TokenFeatures, FEATURE_DIM, FEATURE_NAMES};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markup::HighlightMask;

pub const P_MIN: f64 = 1e-6;
pub const P_MAX: f64 = 1.0 - 1e-6;

/// Variances at or below this are treated as constant features.
const VAR_FLOOR: f64 = 1e-12;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(P_MIN, P_MAX)
}

/// Per-feature standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl NormStats {
    /// Mean 0, variance 1: standardization is the identity.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    /// Population mean and variance over `rows`.
    pub fn fit<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        // Welford
        for r in rows {
            n += 1;
            for k in 0..dim {
                let d = r[k] - mean[k];
                mean[k] += d / n as f64;
                m2[k] += d * (r[k] - mean[k]);
            }
        }
        let var = if n == 0 {
            vec![1.0; dim]
        } else {
            m2.iter().map(|s| s / n as f64).collect()
        };
        if n == 0 {
            mean = vec![0.0; dim];
        }
        Self { mean, var }
    }
}

/// Learnable head `(w, b)` plus the fixed temperature and normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerParams {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub tau: f64,
    pub norm: NormStats,
}

impl ScorerParams {
    pub fn new(norm: NormStats, tau: f64, bias: f64) -> Result<Self> {
        let p = Self {
            weights: vec![0.0; norm.mean.len()],
            bias,
            tau,
            norm,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        let d = self.weights.len();
        if self.norm.mean.len() != d || self.norm.var.len() != d {
            return Err(Error::Structural("normalization statistics do not match weight dimension".into()));
        }
        if self.norm.var.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Config("normalization variances must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn check_dim(&self, feats: &TokenFeatures) -> Result<()> {
        if feats.dim() != self.dim() {
            return Err(Error::Structural(format!(
                "feature dimension {} does not match parameter dimension {}",
                feats.dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Standardize every row of `feats`.
    pub fn normalize(&self, feats: &TokenFeatures) -> Result<TokenFeatures> {
        self.check_dim(feats)?;
        let d = self.dim();
        let scale: Vec<f64> = self
            .norm
            .var
            .iter()
            .map(|&v| if v > VAR_FLOOR { 1.0 / v.sqrt() } else { 0.0 })
            .collect();
        let mut data = Vec::with_capacity(feats.len() * d);
        for row in feats.rows() {
            for k in 0..d {
                data.push((row[k] - self.norm.mean[k]) * scale[k]);
            }
        }
        Ok(TokenFeatures::new(d, data))
    }

    /// Logits `(w · x̃ + b) / tau` for already-normalized rows.
    pub fn logits(&self, normalized: &TokenFeatures) -> Vec<f64> {
        normalized
            .rows()
            .map(|r| (dot(&self.weights, r) + self.bias) / self.tau)
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Clamped selection probabilities, one per token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMap {
    probs: Vec<f64>,
}

impl ScoreMap {
    /// Clamp and wrap raw probabilities (e.g. from an external scorer).
    pub fn from_probs(probs: impl IntoIterator<Item = f64>) -> Self {
        Self {
            probs: probs.into_iter().map(clamp_prob).collect(),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Mean probability over `omega`; zero when omega is empty.
    pub fn mean_over(&self, omega: &[usize]) -> f64 {
        if omega.is_empty() {
            return 0.0;
        }
        omega.iter().map(|&i| self.probs[i]).sum::<f64>() / omega.len() as f64
    }
}

/// Probabilities from pre-normalized rows.
pub fn score_normalized(normalized: &TokenFeatures, params: &ScorerParams) -> ScoreMap {
    ScoreMap::from_probs(params.logits(normalized).into_iter().map(sigmoid))
}

pub fn score(feats: &TokenFeatures, params: &ScorerParams) -> Result<ScoreMap> {
    Ok(score_normalized(&params.normalize(feats)?, params))
}

/// Log-likelihood of `mask` under the factorized Bernoulli policy,
/// restricted to `omega`.
pub fn log_prob(mask: &HighlightMask, scores: &ScoreMap, omega: &[usize]) -> f64 {
    omega
        .iter()
        .map(|&i| {
            let p = scores.get(i);
            if mask.get(i) {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum()
}

/// Mean token-wise Bernoulli entropy over `omega`, in nats.
pub fn entropy(scores: &ScoreMap, omega: &[usize]) -> f64 {
    if omega.is_empty() {
        return 0.0;
    }
    omega.iter().map(|&i| bernoulli_entropy(scores.get(i))).sum::<f64>() / omega.len() as f64
}

pub fn bernoulli_entropy(p: f64) -> f64 {
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

/// Gradient with respect to `(w, b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrad {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ParamGrad {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &ParamGrad, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += scale * b;
        }
        self.bias += scale * other.bias;
    }

    /// Accumulate `coef * x̃ / tau` for one token.
    pub(crate) fn add_token(&mut self, coef: f64, normalized_row: &[f64], tau: f64) {
        let c = coef / tau;
        for (g, x) in self.weights.iter_mut().zip(normalized_row) {
            *g += c * x;
        }
        self.bias += c;
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|g| g.is_finite())
    }

    pub fn norm(&self) -> f64 {
        (self.bias * self.bias + self.weights.iter().map(|g| g * g).sum::<f64>()).sqrt()
    }
}

/// Gradient of [`log_prob`] in `(w, b)`:
/// `sum over omega of (m_i - p_i) * x̃_i / tau`, with `x̃ = 1` for the bias.
pub fn log_prob_grad_normalized(
    mask: &HighlightMask,
    normalized: &TokenFeatures,
    scores: &ScoreMap,
    omega: &[usize],
    tau: f64,
) -> ParamGrad {
    let mut g = ParamGrad::zeros(normalized.dim());
    for &i in omega {
        let m = if mask.get(i) { 1.0 } else { 0.0 };
        g.add_token(m - scores.get(i), normalized.row(i), tau);
    }
    g
}

pub fn log_prob_grad(
    mask: &HighlightMask,
    feats: &TokenFeatures,
    params: &ScorerParams,
    omega: &[usize],
) -> Result<ParamGrad> {
    let normalized = params.normalize(feats)?;
    let scores = score_normalized(&normalized, params);
    Ok(log_prob_grad_normalized(mask, &normalized, &scores, omega, params.tau))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_params(w: Vec<f64>, b: f64, tau: f64) -> ScorerParams {
        let d = w.len();
        ScorerParams {
            weights: w,
            bias: b,
            tau,
            norm: NormStats::identity(d),
        }
    }

    #[test]
    fn zero_logits_give_half() {
        let f = TokenFeatures::from_rows(&[vec![3.0, -1.0], vec![0.5, 2.0]]);
        for tau in [0.1, 1.0, 7.0] {
            let s = score(&f, &unit_params(vec![0.0, 0.0], 0.0, tau)).unwrap();
            assert!(s.probs().iter().all(|&p| p == 0.5));
        }
    }

    #[test]
    fn hand_evaluated_logistic() {
        let f = TokenFeatures::from_rows(&[vec![1.0, 0.0]]);
        let s = score(&f, &unit_params(vec![2.0, 0.0], 0.0, 1.0)).unwrap();
        assert!((s.get(0) - 0.880_797_077_977_882_3).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let f = TokenFeatures::from_rows(&[vec![1.0, 0.0, 2.0]]);
        assert!(matches!(
            score(&f, &unit_params(vec![1.0, 0.0], 0.0, 1.0)),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn normalization_uses_frozen_stats() {
        let f = TokenFeatures::from_rows(&[vec![1.0], vec![3.0]]);
        let stats = NormStats::fit(1, f.rows());
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.var, vec![1.0]);
        let p = ScorerParams {
            weights: vec![1.0],
            bias: 0.0,
            tau: 1.0,
            norm: stats,
        };
        let n = p.normalize(&f).unwrap();
        assert_eq!(n.row(0), &[-1.0]);
        assert_eq!(n.row(1), &[1.0]);
    }

    #[test]
    fn constant_feature_normalizes_to_zero() {
        let f = TokenFeatures::from_rows(&[vec![4.0], vec![4.0]]);
        let p = ScorerParams {
            weights: vec![1.0],
            bias: 0.0,
            tau: 1.0,
            norm: NormStats::fit(1, f.rows()),
        };
        assert!(p.normalize(&f).unwrap().rows().all(|r| r[0] == 0.0));
    }

    #[test]
    fn rejects_bad_temperature() {
        assert!(ScorerParams::new(NormStats::identity(2), 0.0, 0.0).is_err());
        assert!(ScorerParams::new(NormStats::identity(2), 1.0, 0.0).is_ok());
    }

    #[test]
    fn uniform_log_prob() {
        let s = ScoreMap::from_probs(vec![0.5; 6]);
        let m = HighlightMask::from_indices(6, [0, 3]);
        let omega: Vec<usize> = (0..6).collect();
        assert!((log_prob(&m, &s, &omega) + 6.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_token_log_prob() {
        let s = ScoreMap::from_probs(vec![0.9, 0.1]);
        let m = HighlightMask::from_indices(2, [0]);
        let lp = log_prob(&m, &s, &[0, 1]);
        assert!((lp - 2.0 * 0.9f64.ln()).abs() < 1e-12);
        assert!((lp - (-0.2107)).abs() < 1e-4);
    }

    #[test]
    fn log_prob_ignores_tokens_outside_omega() {
        let s = ScoreMap::from_probs(vec![0.9, 0.1]);
        let m = HighlightMask::from_indices(2, [0, 1]);
        assert!((log_prob(&m, &s, &[0]) - 0.9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_values() {
        assert!((entropy(&ScoreMap::from_probs(vec![0.5; 3]), &[0, 1, 2]) - 2f64.ln()).abs() < 1e-12);
        assert!(entropy(&ScoreMap::from_probs(vec![0.0, 1.0]), &[0, 1]) < 1e-4);
        let h = entropy(&ScoreMap::from_probs(vec![0.25]), &[0]);
        assert!((h - 0.562_335_144_618_9).abs() < 1e-10);
        assert_eq!(entropy(&ScoreMap::from_probs(vec![0.3]), &[]), 0.0);
    }

    #[test]
    fn single_token_gradients() {
        let f = TokenFeatures::from_rows(&[vec![1.0]]);
        let p = unit_params(vec![0.0], 0.0, 1.0);
        let up = log_prob_grad(&HighlightMask::from_indices(1, [0]), &f, &p, &[0]).unwrap();
        assert_eq!(up.weights, vec![0.5]);
        let down = log_prob_grad(&HighlightMask::zeros(1), &f, &p, &[0]).unwrap();
        assert_eq!(down.weights, vec![-0.5]);
    }

    #[test]
    fn expected_score_function_is_zero() {
        // Enumerate all 2^n masks and weight each gradient by its probability.
        let f = TokenFeatures::from_rows(&[vec![0.3, -1.0], vec![1.2, 0.4], vec![-0.7, 0.9]]);
        let p = unit_params(vec![0.8, -0.5], 0.2, 1.5);
        let s = score(&f, &p).unwrap();
        let omega = [0, 1, 2];
        let mut acc = ParamGrad::zeros(2);
        for bits in 0u32..8 {
            let m = HighlightMask::from_bits((0..3).map(|i| bits >> i & 1 == 1).collect());
            let w = log_prob(&m, &s, &omega).exp();
            acc.add_scaled(&log_prob_grad(&m, &f, &p, &omega).unwrap(), w);
        }
        assert!(acc.norm() < 1e-12, "{acc:?}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn fd_log_prob(m: &HighlightMask, f: &TokenFeatures, p: &ScorerParams, omega: &[usize]) -> ParamGrad {
            let h = 1e-6;
            let eval = |q: &ScorerParams| log_prob(m, &score(f, q).unwrap(), omega);
            let mut g = ParamGrad::zeros(p.dim());
            for k in 0..p.dim() {
                let mut a = p.clone();
                let mut b = p.clone();
                a.weights[k] += h;
                b.weights[k] -= h;
                g.weights[k] = (eval(&a) - eval(&b)) / (2.0 * h);
            }
            let mut a = p.clone();
            let mut b = p.clone();
            a.bias += h;
            b.bias -= h;
            g.bias = (eval(&a) - eval(&b)) / (2.0 * h);
            g
        }

        proptest! {
            #[test]
            fn log_prob_grad_matches_finite_differences(
                rows in proptest::collection::vec(proptest::collection::vec(-1.5f64..1.5, 3), 1..8),
                w in proptest::collection::vec(-1.0f64..1.0, 3),
                b in -1.0f64..1.0,
                tau in 0.5f64..2.0,
                bits in proptest::collection::vec(any::<bool>(), 8),
            ) {
                let f = TokenFeatures::from_rows(&rows);
                let p = unit_params(w, b, tau);
                let n = f.len();
                let m = HighlightMask::from_bits(bits[..n].to_vec());
                let omega: Vec<usize> = (0..n).collect();
                let analytic = log_prob_grad(&m, &f, &p, &omega).unwrap();
                let numeric = fd_log_prob(&m, &f, &p, &omega);
                let mut diff = analytic.clone();
                diff.add_scaled(&numeric, -1.0);
                prop_assert!(diff.norm() <= 1e-4 * numeric.norm().max(1e-3));
            }

            #[test]
            fn temperature_moves_toward_half(z in -5.0f64..5.0, t1 in 0.2f64..3.0, dt in 0.1f64..3.0) {
                let f = TokenFeatures::from_rows(&[vec![1.0]]);
                let lo = score(&f, &unit_params(vec![z], 0.0, t1)).unwrap().get(0);
                let hi = score(&f, &unit_params(vec![z], 0.0, t1 + dt)).unwrap().get(0);
                prop_assert!((hi - 0.5).abs() <= (lo - 0.5).abs() + 1e-15);
            }

            #[test]
            fn finite_everywhere(ps in proptest::collection::vec(0.0f64..=1.0, 1..20), seed in any::<u64>()) {
                let s = ScoreMap::from_probs(ps.clone());
                let omega: Vec<usize> = (0..ps.len()).collect();
                let m = HighlightMask::from_bits(ps.iter().enumerate().map(|(i, _)| (seed >> (i % 64)) & 1 == 1).collect());
                let lp = log_prob(&m, &s, &omega);
                prop_assert!(lp.is_finite() && lp <= 0.0);
                let h = entropy(&s, &omega);
                prop_assert!(h.is_finite() && (0.0..=2f64.ln() + 1e-12).contains(&h));
            }
        }
    }
}
