use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::text::{tokenize, TokenizedContext};

pub const FEATURE_NAMES: [&str; 7] = [
    "query_unigram",
    "query_bigram",
    "idf",
    "rel_position",
    "token_length",
    "is_numeric",
    "sentence_initial",
];

pub const FEATURE_DIM: usize = FEATURE_NAMES.len();

const MAX_TOKEN_CHARS: usize = 20;

/// Per-token feature rows, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenFeatures {
    dim: usize,
    data: Vec<f64>,
}

impl TokenFeatures {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim), "feature data is not a whole number of rows");
        Self { dim, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(FEATURE_DIM, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            assert_eq!(r.len(), dim, "ragged feature rows");
            data.extend_from_slice(r);
        }
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// Inverse document frequencies over lowercased tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    docs: u32,
    df: HashMap<String, u32>,
    /// Returned for tokens never seen while fitting.
    ceiling: f64,
}

impl IdfTable {
    /// Count document frequencies over `docs`, each tokenized with the
    /// default tokenizer.
    pub fn fit<'a>(docs: impl IntoIterator<Item = &'a str>) -> Self {
        let mut df: HashMap<String, u32> = HashMap::new();
        let mut n = 0u32;
        for d in docs {
            n += 1;
            let seen: HashSet<String> = tokenize(d)
                .tokens()
                .iter()
                .map(|t| t.text.to_lowercase())
                .collect();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let ceiling = smoothed_idf(n, 0);
        Self { docs: n, df, ceiling }
    }

    pub fn with_ceiling(mut self, ceiling: f64) -> Self {
        self.ceiling = ceiling;
        self
    }

    pub fn ceiling(&self) -> f64 {
        self.ceiling
    }

    pub fn idf(&self, token: &str) -> f64 {
        match self.df.get(&token.to_lowercase()) {
            Some(&df) => smoothed_idf(self.docs, df),
            None => self.ceiling,
        }
    }
}

impl Default for IdfTable {
    fn default() -> Self {
        Self {
            docs: 0,
            df: HashMap::new(),
            ceiling: 1.0,
        }
    }
}

fn smoothed_idf(docs: u32, df: u32) -> f64 {
    ((f64::from(docs) + 1.0) / (f64::from(df) + 1.0)).ln() + 1.0
}

fn is_sentence_end(s: &str) -> bool {
    matches!(s, "." | "!" | "?")
}

/// Compute the feature row of every token in `ctx` relative to `query`.
///
/// Rows depend only on the text, never on a mask or budget.
pub fn featurize(query: &str, ctx: &TokenizedContext, idf: &IdfTable) -> TokenFeatures {
    let q = tokenize(query);
    let q_lower: Vec<String> = q.tokens().iter().map(|t| t.text.to_lowercase()).collect();
    let unigrams: HashSet<&str> = q_lower.iter().map(String::as_str).collect();
    let bigrams: HashSet<(&str, &str)> = q_lower
        .windows(2)
        .map(|w| (w[0].as_str(), w[1].as_str()))
        .collect();

    let lower: Vec<String> = ctx.tokens().iter().map(|t| t.text.to_lowercase()).collect();
    let n = lower.len();
    let mut data = Vec::with_capacity(n * FEATURE_DIM);
    for (i, tok) in lower.iter().enumerate() {
        let text = &ctx.tokens()[i].text;
        let uni = unigrams.contains(tok.as_str());
        let left = i > 0 && bigrams.contains(&(lower[i - 1].as_str(), tok.as_str()));
        let right = i + 1 < n && bigrams.contains(&(tok.as_str(), lower[i + 1].as_str()));
        let rel = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        let chars = text.chars().count().min(MAX_TOKEN_CHARS);
        let numeric = text.chars().all(|c| c.is_ascii_digit());
        let initial = i == 0 || is_sentence_end(&lower[i - 1]);
        data.extend_from_slice(&[
            f64::from(u8::from(uni)),
            f64::from(u8::from(left || right)),
            idf.idf(tok),
            rel,
            chars as f64 / MAX_TOKEN_CHARS as f64,
            f64::from(u8::from(numeric)),
            f64::from(u8::from(initial)),
        ]);
    }
    TokenFeatures::new(FEATURE_DIM, data)
}
