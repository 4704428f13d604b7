//! The emphasis operator: masks, span coalescence, marker injection and its
//! inverse, plus the pruned and random variants used in ablations.
//!
//! Injection never touches a source byte. Markers are spliced at token
//! boundaries, so `strip(inject(x))` gives back `x` exactly as long as the
//! source does not itself contain the marker strings.

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::text::TokenizedContext;

/// Default gap-bridging width for [`coalesce`].
pub const DEFAULT_DELTA: usize = 10;

/// Per-token binary selection.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HighlightMask {
    bits: Vec<bool>,
}

impl HighlightMask {
    pub fn zeros(len: usize) -> Self {
        Self {
            bits: vec![false; len],
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Mask of length `len` with `indices` set. Out-of-range indices panic.
    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut m = Self::zeros(len);
        for i in indices {
            m.bits[i] = true;
        }
        m
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.bits[i] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Selected indices, ascending.
    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    /// True when every set bit is in `other` as well.
    pub fn is_subset_of(&self, other: &HighlightMask) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// Budget count `floor(gamma * n)` for `n` eligible tokens.
pub fn budget_count(gamma: f64, n: usize) -> usize {
    // The epsilon keeps e.g. 0.15 * 20 = 2.9999999999999996 at 3.
    let k = (gamma * n as f64 + 1e-9).floor();
    (k.max(0.0) as usize).min(n)
}

/// A run of tokens `first_token..=last_token` and its byte range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub first_token: usize,
    pub last_token: usize,
    pub start: usize,
    pub end: usize,
}

/// Merge selected tokens into spans. Runs separated by at most `delta`
/// unselected tokens are bridged, and the bridge tokens become part of the
/// span.
pub fn coalesce(mask: &HighlightMask, ctx: &TokenizedContext, delta: usize) -> Result<Vec<Span>> {
    if mask.len() != ctx.len() {
        return Err(Error::Structural(format!(
            "mask length {} does not match {} tokens",
            mask.len(),
            ctx.len()
        )));
    }
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for i in mask.selected() {
        match runs.last_mut() {
            Some((_, last)) if i - *last - 1 <= delta => *last = i,
            _ => runs.push((i, i)),
        }
    }
    let tokens = ctx.tokens();
    Ok(runs
        .into_iter()
        .map(|(a, b)| Span {
            first_token: a,
            last_token: b,
            start: tokens[a].start,
            end: tokens[b].end,
        })
        .collect())
}

/// Indicator mask of every token covered by `spans`.
pub fn spans_to_mask(spans: &[Span], len: usize) -> HighlightMask {
    HighlightMask::from_indices(len, spans.iter().flat_map(|s| s.first_token..=s.last_token))
}

/// Character ranges of `spans`, the transfer format for other tokenizers.
pub fn char_spans(spans: &[Span]) -> Vec<[usize; 2]> {
    spans.iter().map(|s| [s.start, s.end]).collect()
}

/// A pair of boundary markers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerFormat {
    pub name: String,
    pub open: String,
    pub close: String,
}

impl MarkerFormat {
    pub fn new(name: impl Into<String>, open: impl Into<String>, close: impl Into<String>) -> Result<Self> {
        let f = Self {
            name: name.into(),
            open: open.into(),
            close: close.into(),
        };
        f.validate()?;
        Ok(f)
    }

    /// Both markers must be non-empty. Distinct markers may not contain one
    /// another; identical markers (`**`) are allowed and strip by toggling.
    pub fn validate(&self) -> Result<()> {
        if self.open.is_empty() || self.close.is_empty() {
            return Err(Error::Config(format!("marker format {:?} has an empty marker", self.name)));
        }
        if self.open != self.close && (self.open.contains(&self.close) || self.close.contains(&self.open)) {
            return Err(Error::Config(format!(
                "marker format {:?}: one marker contains the other",
                self.name
            )));
        }
        Ok(())
    }

    fn symmetric(&self) -> bool {
        self.open == self.close
    }

    /// Whether `text` already contains either marker, in which case strip
    /// cannot tell source bytes from markup.
    pub fn conflicts_with(&self, text: &str) -> bool {
        text.contains(&self.open) || text.contains(&self.close)
    }
}

impl Default for MarkerFormat {
    fn default() -> Self {
        Self {
            name: "default".into(),
            open: "<start_important>".into(),
            close: "<end_important>".into(),
        }
    }
}

/// Built-in marker names, in registry order.
pub const BUILTIN_MARKERS: [(&str, &str, &str); 7] = [
    ("default", "<start_important>", "<end_important>"),
    ("markdown-bold", "**", "**"),
    ("double-bracket", "[[", "]]"),
    ("brace", "{", "}"),
    ("chevron", ">>", "<<"),
    ("html-b", "<b>", "</b>"),
    ("important-tag", "<important>", "</important>"),
];

/// Named marker formats. Starts with the built-ins; configuration may add
/// or override entries.
#[derive(Debug, Clone)]
pub struct MarkerRegistry {
    formats: BTreeMap<String, MarkerFormat>,
    order: Vec<String>,
}

impl MarkerRegistry {
    pub fn builtin() -> Self {
        let mut r = Self {
            formats: BTreeMap::new(),
            order: Vec::new(),
        };
        for (name, open, close) in BUILTIN_MARKERS {
            r.insert(MarkerFormat {
                name: name.into(),
                open: open.into(),
                close: close.into(),
            })
            .expect("built-in markers are valid");
        }
        r
    }

    pub fn insert(&mut self, fmt: MarkerFormat) -> Result<()> {
        fmt.validate()?;
        if !self.formats.contains_key(&fmt.name) {
            self.order.push(fmt.name.clone());
        }
        self.formats.insert(fmt.name.clone(), fmt);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&MarkerFormat> {
        self.formats
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown marker format {name:?}")))
    }

    /// Formats in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &MarkerFormat> {
        self.order.iter().map(|n| &self.formats[n])
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

impl Default for MarkerRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

fn check_spans(ctx: &TokenizedContext, spans: &[Span]) -> Result<()> {
    let n = ctx.len();
    let mut prev: Option<&Span> = None;
    for (i, s) in spans.iter().enumerate() {
        if s.first_token > s.last_token || s.last_token >= n {
            return Err(Error::Structural(format!("span {i} has invalid token bounds")));
        }
        let tokens = ctx.tokens();
        if s.start != tokens[s.first_token].start || s.end != tokens[s.last_token].end {
            return Err(Error::Structural(format!("span {i} offsets disagree with its tokens")));
        }
        if let Some(p) = prev {
            if s.first_token <= p.last_token {
                return Err(Error::Overlap { index: i });
            }
        }
        prev = Some(s);
    }
    Ok(())
}

/// Splice `fmt.open` before and `fmt.close` after every span.
pub fn inject(ctx: &TokenizedContext, spans: &[Span], fmt: &MarkerFormat) -> Result<String> {
    check_spans(ctx, spans)?;
    let src = ctx.source();
    let extra = spans.len() * (fmt.open.len() + fmt.close.len());
    let mut out = String::with_capacity(src.len() + extra);
    let mut cursor = 0;
    for s in spans {
        out.push_str(&src[cursor..s.start]);
        out.push_str(&fmt.open);
        out.push_str(&src[s.start..s.end]);
        out.push_str(&fmt.close);
        cursor = s.end;
    }
    out.push_str(&src[cursor..]);
    Ok(out)
}

/// One marker occurrence found while scanning emphasized text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Marker {
    Open,
    Close,
}

/// Walk `emphasized`, yielding plain-text chunks and markers in order.
/// Rejects nesting and unbalanced markers.
fn scan<'a>(emphasized: &'a str, fmt: &MarkerFormat, mut visit: impl FnMut(&'a str, Option<Marker>)) -> Result<()> {
    let mut rest = emphasized;
    let mut open = false;
    loop {
        let next_open = rest.find(&fmt.open);
        let next_close = rest.find(&fmt.close);
        let (pos, kind, len) = match (next_open, next_close) {
            (None, None) => break,
            _ if fmt.symmetric() => {
                let pos = next_open.unwrap();
                (pos, if open { Marker::Close } else { Marker::Open }, fmt.open.len())
            }
            (Some(o), Some(c)) if o <= c => (o, Marker::Open, fmt.open.len()),
            (Some(o), None) => (o, Marker::Open, fmt.open.len()),
            (_, Some(c)) => (c, Marker::Close, fmt.close.len()),
        };
        match (kind, open) {
            (Marker::Open, true) => return Err(Error::Integrity("nested open marker".into())),
            (Marker::Close, false) => return Err(Error::Integrity("close marker without open".into())),
            _ => {}
        }
        open = kind == Marker::Open;
        visit(&rest[..pos], Some(kind));
        rest = &rest[pos + len..];
    }
    if open {
        return Err(Error::Integrity("unterminated open marker".into()));
    }
    visit(rest, None);
    Ok(())
}

/// Remove the markers that [`inject`] inserted.
pub fn strip(emphasized: &str, fmt: &MarkerFormat) -> Result<String> {
    let mut out = String::with_capacity(emphasized.len());
    scan(emphasized, fmt, |chunk, _| out.push_str(chunk))?;
    Ok(out)
}

/// Byte ranges of the stripped text that were enclosed by markers, together
/// with the stripped text itself.
pub fn enclosed_ranges(emphasized: &str, fmt: &MarkerFormat) -> Result<(String, Vec<std::ops::Range<usize>>)> {
    let mut plain = String::with_capacity(emphasized.len());
    let mut ranges = Vec::new();
    let mut open_at = None;
    scan(emphasized, fmt, |chunk, marker| {
        plain.push_str(chunk);
        match marker {
            Some(Marker::Open) => open_at = Some(plain.len()),
            Some(Marker::Close) => {
                if let Some(s) = open_at.take() {
                    ranges.push(s..plain.len());
                }
            }
            None => {}
        }
    })?;
    Ok((plain, ranges))
}

/// Keep only the span texts, joined by `joiner`.
pub fn prune(ctx: &TokenizedContext, spans: &[Span], joiner: &str) -> String {
    let src = ctx.source();
    spans
        .iter()
        .map(|s| &src[s.start..s.end])
        .collect::<Vec<_>>()
        .join(joiner)
}

/// `k` tokens drawn uniformly without replacement from omega.
pub fn random_mask(ctx: &TokenizedContext, k: usize, seed: u64) -> Result<HighlightMask> {
    let omega = ctx.omega();
    if k > omega.len() {
        return Err(Error::Budget {
            requested: k,
            available: omega.len(),
        });
    }
    let mut rng = rng::stream(seed, &[0x5241_4e44]);
    let picks = index::sample(&mut rng, omega.len(), k);
    Ok(HighlightMask::from_indices(ctx.len(), picks.iter().map(|p| omega[p])))
}
