use std::ops::Range;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{OutputContract, SolveRequest, Solver, SolverOutput};
use crate::data::Instance;
use crate::error::{Error, Result};
use crate::markup::{enclosed_ranges, MarkerFormat};
use crate::rewards::Gold;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Minimum fraction of evidence characters that must be emphasized.
    pub coverage_threshold: f64,
    /// Also require the nearest non-space character before each evidence
    /// span (after it, for a span at the start) to be visible.
    #[serde(default)]
    pub require_bridge: bool,
    /// Answer given when coverage falls short.
    #[serde(default = "default_distractor")]
    pub distractor: String,
}

fn default_distractor() -> String {
    "unknown".into()
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            coverage_threshold: 0.8,
            require_bridge: false,
            distractor: default_distractor(),
        }
    }
}

/// Answers correctly iff the emphasized text covers enough gold evidence.
///
/// Text that strips back to the source is read as marker emphasis and the
/// enclosed characters count as covered. Any other text is read as pruned
/// output: its `joiner`-separated pieces are located in the source in order
/// and every visible character counts as covered.
#[derive(Debug, Clone)]
pub struct OracleSolver {
    cfg: OracleConfig,
    format: MarkerFormat,
    joiner: String,
}

impl OracleSolver {
    pub fn new(cfg: OracleConfig, format: MarkerFormat, joiner: impl Into<String>) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.coverage_threshold) {
            return Err(Error::Config(format!(
                "coverage threshold {} outside [0, 1]",
                cfg.coverage_threshold
            )));
        }
        format.validate()?;
        Ok(Self {
            cfg,
            format,
            joiner: joiner.into(),
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    /// Covered and visible byte ranges of the source.
    fn read(&self, context: &str, emphasized: &str) -> (Vec<Range<usize>>, Vec<Range<usize>>) {
        if let Ok((plain, enclosed)) = enclosed_ranges(emphasized, &self.format) {
            if plain == context {
                return (enclosed, std::iter::once(0..context.len()).collect());
            }
        }
        let mut visible = Vec::new();
        let mut cursor = 0;
        for piece in emphasized.split(self.joiner.as_str()) {
            if piece.is_empty() {
                continue;
            }
            if let Some(i) = context[cursor..].find(piece) {
                let start = cursor + i;
                visible.push(start..start + piece.len());
                cursor = start + piece.len();
            }
        }
        (visible.clone(), visible)
    }

    /// Fraction of evidence characters covered, and whether every bridge
    /// character is visible.
    pub fn coverage(&self, instance: &Instance, emphasized: &str) -> (f64, bool) {
        let ctx = &instance.context;
        let evidence = instance.evidence_ranges();
        let (covered, visible) = self.read(ctx, emphasized);
        let chars = |r: Range<usize>| ctx[r].chars().count();
        let total: usize = evidence.iter().map(|r| chars(r.clone())).sum();
        let hit: usize = evidence
            .iter()
            .flat_map(|e| {
                covered.iter().filter_map(move |c| {
                    let (s, t) = (e.start.max(c.start), e.end.min(c.end));
                    (s < t).then_some(s..t)
                })
            })
            .map(chars)
            .sum();
        let frac = if total == 0 { 1.0 } else { hit as f64 / total as f64 };
        let is_visible = |i: usize| visible.iter().any(|r| r.contains(&i));
        let bridged = evidence.iter().all(|e| {
            let before = ctx[..e.start].char_indices().rev().find(|(_, c)| !c.is_whitespace());
            let after = || ctx[e.end..].char_indices().find(|(_, c)| !c.is_whitespace()).map(|(i, c)| (e.end + i, c));
            match before.or_else(after) {
                Some((i, _)) => is_visible(i),
                None => true,
            }
        });
        (frac, bridged)
    }

    pub fn is_correct(&self, instance: &Instance, emphasized: &str) -> bool {
        let (frac, bridged) = self.coverage(instance, emphasized);
        frac >= self.cfg.coverage_threshold && (bridged || !self.cfg.require_bridge)
    }
}

impl Solver for OracleSolver {
    fn solve(&self, req: SolveRequest<'_>) -> Result<SolverOutput> {
        let inst = req.instance;
        let correct = self.is_correct(inst, req.emphasized);
        let (raw, contract) = match &inst.gold {
            Gold::Text(g) => {
                let a = if correct { g.as_str() } else { self.cfg.distractor.as_str() };
                (format!("<answer>{a}</answer>"), OutputContract::AnswerTag)
            }
            Gold::Item(g) => {
                let mut ids: Vec<i64> = inst.candidates.iter().flatten().map(|c| c.id).filter(|id| id != g).collect();
                if correct {
                    ids.insert(0, *g);
                }
                let n = ids.len() as f64;
                let rows: Vec<String> = ids
                    .iter()
                    .enumerate()
                    .map(|(i, id)| format!(r#"{{"id":{id},"score":{}}}"#, n - i as f64))
                    .collect();
                (format!("<FINAL_JSON>[{}]</FINAL_JSON>", rows.join(",")), OutputContract::FinalJson)
            }
        };
        Ok(SolverOutput::new(raw, contract, Duration::ZERO, 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markup::{coalesce, inject, prune, HighlightMask};
    use crate::rewards::Answer;
    use crate::text::tokenize;
    use proptest::prelude::*;

    fn inst(context: &str, evidence: Range<usize>) -> Instance {
        Instance {
            id: "t".into(),
            query: "q".into(),
            context: context.into(),
            gold: Gold::Text("gold".into()),
            evidence_spans: Some(vec![[evidence.start, evidence.end]]),
            candidates: None,
            extra: Default::default(),
        }
    }

    fn oracle(threshold: f64, bridge: bool) -> OracleSolver {
        let cfg = OracleConfig {
            coverage_threshold: threshold,
            require_bridge: bridge,
            ..Default::default()
        };
        OracleSolver::new(cfg, MarkerFormat::default(), "\n").unwrap()
    }

    fn answer(o: &OracleSolver, i: &Instance, text: &str) -> Answer {
        o.solve(SolveRequest { instance: i, emphasized: text }).unwrap().parsed.unwrap()
    }

    #[test]
    fn full_coverage_gives_gold() {
        let i = inst("a b. the code is 7. c", 5..18);
        let text = "a b. <start_important>the code is 7<end_important>. c";
        assert_eq!(answer(&oracle(0.8, false), &i, text), Answer::Text("gold".into()));
    }

    #[test]
    fn no_tags_gives_distractor() {
        let i = inst("a b. the code is 7. c", 5..18);
        assert_eq!(answer(&oracle(0.8, false), &i, &i.context), Answer::Text("unknown".into()));
    }

    #[test]
    fn half_coverage_meets_half_threshold() {
        // evidence "abcdefgh", first four characters enclosed
        let i = inst("xx abcdefgh yy", 3..11);
        let text = "xx <start_important>abcd<end_important>efgh yy";
        let o = oracle(0.5, false);
        assert_eq!(o.coverage(&i, text).0, 0.5);
        assert_eq!(answer(&o, &i, text), Answer::Text("gold".into()));
        assert_eq!(answer(&oracle(0.51, false), &i, text), Answer::Text("unknown".into()));
    }

    #[test]
    fn pruned_text_counts_visible_evidence() {
        let ctx = tokenize("intro words. the code is 7. outro");
        let i = inst(ctx.source(), 13..26);
        let mask = HighlightMask::from_indices(ctx.len(), [3, 4, 5, 6]);
        let spans = coalesce(&mask, &ctx, 0).unwrap();
        let pruned = prune(&ctx, &spans, "\n");
        assert_eq!(pruned, "the code is 7");
        assert!(oracle(0.8, false).is_correct(&i, &pruned));
        // the period before the evidence is gone, so the bridge fails
        assert!(!oracle(0.8, true).is_correct(&i, &pruned));
        let marked = inject(&ctx, &spans, &MarkerFormat::default()).unwrap();
        assert!(oracle(0.8, true).is_correct(&i, &marked));
    }

    #[test]
    fn bridge_after_span_at_start() {
        let i = inst("code 7. tail", 0..6);
        let o = oracle(0.8, true);
        assert!(!o.is_correct(&i, "code 7"));
        assert!(o.is_correct(&i, "code 7."));
    }

    #[test]
    fn ranking_gold() {
        let mut i = inst("a b c", 0..1);
        i.gold = Gold::Item(4);
        i.candidates = Some(
            [3, 4, 5]
                .iter()
                .map(|&id| crate::data::Candidate {
                    id,
                    title: format!("item {id}"),
                    brand: None,
                    cat: None,
                    price_band: None,
                    rating: None,
                    phrases: None,
                    extra: Default::default(),
                })
                .collect(),
        );
        let o = oracle(0.8, false);
        assert_eq!(answer(&o, &i, "<start_important>a<end_important> b c"), Answer::Ranking(vec![4, 3, 5]));
        assert_eq!(answer(&o, &i, "a b c"), Answer::Ranking(vec![3, 5]));
    }

    #[test]
    fn threshold_validated() {
        let cfg = OracleConfig {
            coverage_threshold: 1.5,
            ..Default::default()
        };
        assert!(OracleSolver::new(cfg, MarkerFormat::default(), "\n").is_err());
    }

    proptest! {
        #[test]
        fn coverage_is_monotone(
            words in proptest::collection::vec("[a-z]{1,6}", 4..30),
            seed_bits in proptest::collection::vec(any::<bool>(), 30),
            extra in 0usize..30,
        ) {
            let ctx = tokenize(&words.join(" "));
            let n = ctx.len();
            let lo = n / 4;
            let hi = (3 * n / 4).max(lo + 1);
            let i = inst(ctx.source(), ctx.tokens()[lo].start..ctx.tokens()[hi - 1].end);
            let small = HighlightMask::from_bits((0..n).map(|t| seed_bits[t]).collect());
            let mut big = small.clone();
            big.set(extra % n, true);
            let o = oracle(0.6, false);
            let fmt = MarkerFormat::default();
            let a = inject(&ctx, &coalesce(&small, &ctx, 0).unwrap(), &fmt).unwrap();
            let b = inject(&ctx, &coalesce(&big, &ctx, 0).unwrap(), &fmt).unwrap();
            let (ca, _) = o.coverage(&i, &a);
            let (cb, _) = o.coverage(&i, &b);
            prop_assert!(cb >= ca);
            prop_assert!(!o.is_correct(&i, &a) || o.is_correct(&i, &b));
        }
    }
}
