//! Task utilities and composite training rewards.
//!
//! Every metric returns a value in `[0, 1]`. Degenerate inputs (empty
//! corpora) return 0 and log a warning instead of failing, so reward
//! evaluation stays total during training.

use std::collections::HashSet;
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercase, drop punctuation, drop the articles `a`/`an`/`the`, and
/// collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| !(c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace())))
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn em(pred: &str, gold: &str) -> f64 {
    f64::from(u8::from(normalize_answer(pred) == normalize_answer(gold)))
}

/// Multiset token F1 over normalized answers.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    match (pt.is_empty(), gt.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut remaining = gt.clone();
    let mut common = 0usize;
    for t in &pt {
        if let Some(pos) = remaining.iter().position(|g| g == t) {
            remaining.swap_remove(pos);
            common += 1;
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn check_unique<T: Eq + Hash>(ranking: &[T]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ranking.len());
    if ranking.iter().all(|x| seen.insert(x)) {
        Ok(())
    } else {
        Err(Error::Structural("ranking contains duplicate ids".into()))
    }
}

fn rank_of<T: Eq>(ranking: &[T], gold: &T, k: usize) -> Option<usize> {
    ranking.iter().take(k).position(|x| x == gold).map(|p| p + 1)
}

/// 1 when `gold` is among the first `k` entries.
pub fn hr_at_k<T: Eq + Hash>(ranking: &[T], gold: &T, k: usize) -> Result<f64> {
    check_unique(ranking)?;
    Ok(f64::from(u8::from(rank_of(ranking, gold, k).is_some())))
}

/// Single-relevant-item NDCG: `1 / log2(rank + 1)` within the cutoff.
pub fn ndcg_at_k<T: Eq + Hash>(ranking: &[T], gold: &T, k: usize) -> Result<f64> {
    check_unique(ranking)?;
    Ok(rank_of(ranking, gold, k).map_or(0.0, |r| 1.0 / ((r + 1) as f64).log2()))
}

/// Fraction of predictions equal to their gold label after normalization.
pub fn accuracy(preds: &[String], golds: &[String]) -> f64 {
    if preds.is_empty() || preds.len() != golds.len() {
        log::warn!(
            "accuracy over {} predictions and {} golds; returning 0",
            preds.len(),
            golds.len()
        );
        return 0.0;
    }
    let hits = preds.iter().zip(golds).filter(|(p, g)| em(p, g) == 1.0).count();
    hits as f64 / preds.len() as f64
}

/// Unweighted mean of per-class F1 over `labels`.
///
/// A prediction outside the label set is a false negative for its gold class
/// and a false positive for none. Classes absent from both sides score 0.
pub fn macro_f1(preds: &[String], golds: &[String], labels: &[String]) -> f64 {
    if preds.is_empty() || labels.is_empty() || preds.len() != golds.len() {
        log::warn!("macro-F1 over empty or mismatched input; returning 0");
        return 0.0;
    }
    let norm_labels: Vec<String> = labels.iter().map(|l| normalize_answer(l)).collect();
    let p: Vec<String> = preds.iter().map(|s| normalize_answer(s)).collect();
    let g: Vec<String> = golds.iter().map(|s| normalize_answer(s)).collect();
    let total: f64 = norm_labels
        .iter()
        .map(|c| {
            let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
            for (pi, gi) in p.iter().zip(&g) {
                match (pi == c, gi == c) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    (false, false) => {}
                }
            }
            let denom = 2 * tp + fp + fneg;
            if denom == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        })
        .sum();
    total / norm_labels.len() as f64
}

/// Precision, recall and F1 from overlap counts. Both sides empty is a
/// perfect score; one side empty scores zero.
pub fn overlap_prf(true_pos: usize, predicted: usize, actual: usize) -> (f64, f64, f64) {
    match (predicted, actual) {
        (0, 0) => return (1.0, 1.0, 1.0),
        (0, _) | (_, 0) => return (0.0, 0.0, 0.0),
        _ => {}
    }
    let p = true_pos as f64 / predicted as f64;
    let r = true_pos as f64 / actual as f64;
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

/// A component metric of a training reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Em,
    F1,
    Accuracy,
    Hr,
    Ndcg,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Em => "em",
            Metric::F1 => "f1",
            Metric::Accuracy => "accuracy",
            Metric::Hr => "hr",
            Metric::Ndcg => "ndcg",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "em" => Ok(Metric::Em),
            "f1" => Ok(Metric::F1),
            "accuracy" | "acc" => Ok(Metric::Accuracy),
            "hr" => Ok(Metric::Hr),
            "ndcg" => Ok(Metric::Ndcg),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

/// Gold target of an instance: an answer string or a ranked item id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gold {
    Item(i64),
    Text(String),
}

impl fmt::Display for Gold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gold::Item(id) => write!(f, "{id}"),
            Gold::Text(s) => f.write_str(s),
        }
    }
}

/// What the solver produced, after parsing.
#[derive(Debug, Clone, PartialEq)]
pub enum Answer {
    Text(String),
    Ranking(Vec<i64>),
}

/// Weighted sum of metrics, e.g. `0.7*hr + 0.3*ndcg` with cutoff `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub terms: Vec<(Metric, f64)>,
    pub k: usize,
}

impl RewardSpec {
    pub fn new(terms: Vec<(Metric, f64)>, k: usize) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Config("reward needs at least one term".into()));
        }
        if let Some((m, w)) = terms.iter().find(|(_, w)| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("weight {w} for {} must be non-negative", m.name())));
        }
        Ok(Self { terms, k })
    }

    /// `0.7 × HR@10 + 0.3 × NDCG@10`
    pub fn recommendation() -> Self {
        Self {
            terms: vec![(Metric::Hr, 0.7), (Metric::Ndcg, 0.3)],
            k: 10,
        }
    }

    /// `0.5 × F1 + 0.5 × EM`
    pub fn qa() -> Self {
        Self {
            terms: vec![(Metric::F1, 0.5), (Metric::Em, 0.5)],
            k: 10,
        }
    }

    pub fn classification() -> Self {
        Self {
            terms: vec![(Metric::Accuracy, 1.0)],
            k: 10,
        }
    }

    /// Value of a single metric for one episode.
    pub fn metric(&self, metric: Metric, answer: &Answer, gold: &Gold) -> Result<f64> {
        match (metric, answer, gold) {
            (Metric::Em | Metric::Accuracy, Answer::Text(p), Gold::Text(g)) => Ok(em(p, g)),
            (Metric::F1, Answer::Text(p), Gold::Text(g)) => Ok(token_f1(p, g)),
            (Metric::Em | Metric::Accuracy, Answer::Text(p), Gold::Item(g)) => Ok(em(p, &g.to_string())),
            (Metric::F1, Answer::Text(p), Gold::Item(g)) => Ok(token_f1(p, &g.to_string())),
            (Metric::Hr, Answer::Ranking(r), Gold::Item(g)) => hr_at_k(r, g, self.k),
            (Metric::Ndcg, Answer::Ranking(r), Gold::Item(g)) => ndcg_at_k(r, g, self.k),
            (m, _, _) => Err(Error::Config(format!(
                "metric {} does not apply to this answer/gold pair",
                m.name()
            ))),
        }
    }

    /// Weighted sum of the component metrics for one episode.
    pub fn composite(&self, answer: &Answer, gold: &Gold) -> Result<f64> {
        self.terms
            .iter()
            .map(|&(m, w)| Ok(w * self.metric(m, answer, gold)?))
            .sum()
    }

    /// Weighted sum of precomputed component values.
    pub fn combine(&self, values: impl Fn(Metric) -> f64) -> f64 {
        self.terms.iter().map(|&(m, w)| w * values(m)).sum()
    }
}

impl FromStr for RewardSpec {
    type Err = Error;

    /// Parses `"0.7*hr@10 + 0.3*ndcg@10"`, `"0.5*f1+0.5*em"` or a preset name
    /// (`qa`, `recommendation`, `classification`).
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "qa" => return Ok(Self::qa()),
            "recommendation" | "rec" => return Ok(Self::recommendation()),
            "classification" => return Ok(Self::classification()),
            _ => {}
        }
        let mut terms = Vec::new();
        let mut k = None;
        for part in s.split('+') {
            let part = part.trim();
            let (w, name) = match part.split_once('*') {
                Some((w, n)) => (
                    w.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad weight in {part:?}")))?,
                    n.trim(),
                ),
                None => (1.0, part),
            };
            let (name, cutoff) = match name.split_once('@') {
                Some((n, c)) => (
                    n,
                    Some(
                        c.parse::<usize>()
                            .map_err(|_| Error::Config(format!("bad cutoff in {part:?}")))?,
                    ),
                ),
                None => (name, None),
            };
            if let Some(c) = cutoff {
                if k.is_some_and(|prev| prev != c) {
                    return Err(Error::Config("reward terms disagree on cutoff".into()));
                }
                k = Some(c);
            }
            terms.push((name.parse::<Metric>()?, w));
        }
        Self::new(terms, k.unwrap_or(10))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("The Cat."), "cat");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("35,124 people"), "35124 people");
        assert_eq!(normalize_answer("  An  apple\tA day "), "apple day");
    }

    #[test]
    fn em_and_f1() {
        assert_eq!(em("severe fatigue", "severe fatigue"), 1.0);
        assert_eq!(token_f1("severe fatigue", "severe fatigue"), 1.0);
        assert!((token_f1("fatigue", "severe fatigue") - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(em("", "x"), 0.0);
        assert_eq!(token_f1("", "x"), 0.0);
        assert_eq!(token_f1("", ""), 1.0);
        assert_eq!(em("", ""), 1.0);
    }

    #[test]
    fn f1_counts_multiplicity() {
        // pred has "a1" twice, gold once: common = 1 + 1 (b)
        let f = token_f1("a1 a1 b", "a1 b c");
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ranking_metrics() {
        let r = [5i64, 9, 2, 7];
        assert_eq!(ndcg_at_k(&r, &5, 10).unwrap(), 1.0);
        assert_eq!(hr_at_k(&r, &2, 10).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&r, &2, 10).unwrap(), 0.5);
        assert_eq!(hr_at_k(&r, &7, 3).unwrap(), 0.0);
        assert_eq!(ndcg_at_k(&r, &7, 3).unwrap(), 0.0);
        assert_eq!(hr_at_k(&r, &42, 10).unwrap(), 0.0);
        assert!(matches!(hr_at_k(&[1, 1], &1, 10), Err(Error::Structural(_))));
    }

    #[test]
    fn composite_presets() {
        let rec = RewardSpec::recommendation();
        // gold at rank 3: HR = 1, NDCG = 0.5
        let v = rec.composite(&Answer::Ranking(vec![4, 8, 1]), &Gold::Item(1)).unwrap();
        assert!((v - 0.85).abs() < 1e-15);
        assert_eq!(rec.composite(&Answer::Ranking(vec![4]), &Gold::Item(1)).unwrap(), 0.0);
        let qa = RewardSpec::qa();
        assert!((qa.combine(|m| if m == Metric::F1 { 0.8 } else { 0.0 }) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn composite_rejects_mismatched_metric() {
        let rec = RewardSpec::recommendation();
        assert!(rec.composite(&Answer::Text("x".into()), &Gold::Item(1)).is_err());
    }

    #[test]
    fn parse_reward_specs() {
        assert_eq!("0.7*hr@10 + 0.3*ndcg@10".parse::<RewardSpec>().unwrap(), RewardSpec::recommendation());
        assert_eq!("0.5*f1+0.5*em".parse::<RewardSpec>().unwrap().terms, RewardSpec::qa().terms);
        assert!(matches!("0.5*bleu".parse::<RewardSpec>(), Err(Error::Config(_))));
        assert!("-1*em".parse::<RewardSpec>().is_err());
        assert!(RewardSpec::new(vec![], 10).is_err());
    }

    #[test]
    fn classification_metrics() {
        let labels = s(&["yes", "no", "maybe"]);
        let g = s(&["yes", "no", "maybe"]);
        assert_eq!(accuracy(&g, &g), 1.0);
        assert_eq!(macro_f1(&g, &g, &labels), 1.0);
        let p = s(&["yes", "yes", "yes"]);
        assert!((accuracy(&p, &g) - 1.0 / 3.0).abs() < 1e-15);
        // yes: tp1 fp2 -> 0.5; no, maybe: 0
        assert!((macro_f1(&p, &g, &labels) - 0.5 / 3.0).abs() < 1e-15);
        assert_eq!(accuracy(&[], &[]), 0.0);
        assert_eq!(macro_f1(&[], &[], &labels), 0.0);
    }

    #[test]
    fn out_of_label_prediction() {
        let labels = s(&["yes", "no"]);
        let p = s(&["perhaps", "no"]);
        let g = s(&["yes", "no"]);
        assert_eq!(accuracy(&p, &g), 0.5);
        // yes: fn1 -> 0; no: tp1 -> 1
        assert_eq!(macro_f1(&p, &g, &labels), 0.5);
    }

    #[test]
    fn overlap_identities() {
        assert_eq!(overlap_prf(0, 0, 0), (1.0, 1.0, 1.0));
        assert_eq!(overlap_prf(0, 0, 4), (0.0, 0.0, 0.0));
        let (p, r, f) = overlap_prf(2, 2, 4);
        assert_eq!((p, r), (1.0, 0.5));
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bounded_and_em_implies_f1(a in "[a-c ]{0,12}", b in "[a-c ]{0,12}") {
                let e = em(&a, &b);
                let f = token_f1(&a, &b);
                prop_assert!((0.0..=1.0).contains(&f));
                if e == 1.0 { prop_assert_eq!(f, 1.0); }
            }

            #[test]
            fn invariant_below_gold(mut tail in proptest::collection::vec(100i64..200, 0..8), rank in 0usize..5) {
                tail.sort();
                tail.dedup();
                let mut r: Vec<i64> = (0..rank as i64).collect();
                r.push(-1);
                r.extend(tail.iter());
                let mut shuffled = r.clone();
                shuffled[rank + 1..].reverse();
                prop_assert_eq!(ndcg_at_k(&r, &-1, 10).unwrap(), ndcg_at_k(&shuffled, &-1, 10).unwrap());
                prop_assert_eq!(hr_at_k(&r, &-1, 3).unwrap(), hr_at_k(&shuffled, &-1, 3).unwrap());
            }
        }
    }
}
