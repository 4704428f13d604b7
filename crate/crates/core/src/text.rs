//! Offset-annotated tokenization.
//!
//! Every token records the byte range it occupies in the source string, so a
//! token-level mask can always be projected back onto the raw text. Markup
//! insertion, pruning and character-span export all work from these offsets.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A token and the byte range `start..end` it occupies in its source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// Anything that can split text into offset-annotated tokens.
///
/// Implementations must return non-empty, non-overlapping tokens in source
/// order whose boundaries fall on UTF-8 code point boundaries. Adapters for
/// external LM tokenizers implement this trait and get validated by
/// [`TokenizedContext::from_tokens`].
pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> Vec<Token>;
}

/// Default tokenizer: whitespace separates tokens, and every character that
/// is neither alphanumeric nor whitespace becomes its own token.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordPunct;

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

impl Tokenizer for WordPunct {
    fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut tokens = Vec::new();
        let mut word_start: Option<usize> = None;
        let push = |tokens: &mut Vec<Token>, start: usize, end: usize| {
            tokens.push(Token {
                text: text[start..end].to_string(),
                start,
                end,
            });
        };
        for (i, c) in text.char_indices() {
            if is_word_char(c) {
                word_start.get_or_insert(i);
                continue;
            }
            if let Some(s) = word_start.take() {
                push(&mut tokens, s, i);
            }
            if !c.is_whitespace() {
                push(&mut tokens, i, i + c.len_utf8());
            }
        }
        if let Some(s) = word_start {
            push(&mut tokens, s, text.len());
        }
        tokens
    }
}

/// Source text, its tokens, and the set of token indices the policy may
/// highlight.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedContext {
    source: String,
    tokens: Vec<Token>,
    /// Sorted, deduplicated indices into `tokens`.
    omega: Vec<usize>,
}

/// Tokenize with the default [`WordPunct`] rule. Omega covers every token.
pub fn tokenize(text: &str) -> TokenizedContext {
    let tokens = WordPunct.tokenize(text);
    let omega = (0..tokens.len()).collect();
    TokenizedContext {
        source: text.to_string(),
        tokens,
        omega,
    }
}

impl TokenizedContext {
    /// Build a context from tokens produced by an arbitrary tokenizer,
    /// checking the offset invariants.
    pub fn from_tokens(source: impl Into<String>, tokens: Vec<Token>) -> Result<Self> {
        let source = source.into();
        let mut prev_end = 0;
        for (i, t) in tokens.iter().enumerate() {
            if t.start >= t.end || t.end > source.len() {
                return Err(Error::Range {
                    start: t.start,
                    end: t.end,
                    len: source.len(),
                });
            }
            if t.start < prev_end {
                return Err(Error::Structural(format!(
                    "token {i} starts at {} before previous token end {prev_end}",
                    t.start
                )));
            }
            if !source.is_char_boundary(t.start) || !source.is_char_boundary(t.end) {
                return Err(Error::Structural(format!(
                    "token {i} splits a multi-byte character"
                )));
            }
            if source[t.start..t.end] != t.text {
                return Err(Error::Structural(format!(
                    "token {i} text does not match source slice"
                )));
            }
            prev_end = t.end;
        }
        let omega = (0..tokens.len()).collect();
        Ok(Self {
            source,
            tokens,
            omega,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_text(&self, i: usize) -> &str {
        &self.source[self.tokens[i].range()]
    }

    /// Policy-controlled token indices, ascending.
    pub fn omega(&self) -> &[usize] {
        &self.omega
    }

    pub fn in_omega(&self, i: usize) -> bool {
        self.omega.binary_search(&i).is_ok()
    }

    /// Remove from omega every token that touches one of `excluded`.
    ///
    /// Tokens are kept only if they lie fully outside all ranges; the result
    /// is intersected with the current omega.
    pub fn restrict_omega(mut self, excluded: &[Range<usize>]) -> Result<Self> {
        for r in excluded {
            if r.start > r.end || r.end > self.source.len() {
                return Err(Error::Range {
                    start: r.start,
                    end: r.end,
                    len: self.source.len(),
                });
            }
        }
        let tokens = &self.tokens;
        self.omega.retain(|&i| {
            let t = &tokens[i];
            excluded
                .iter()
                .filter(|r| r.start < r.end)
                .all(|r| t.end <= r.start || t.start >= r.end)
        });
        Ok(self)
    }

    /// Rebuild the source from token slices and the gaps between them.
    pub fn reconstruct(&self) -> String {
        let mut out = String::with_capacity(self.source.len());
        let mut cursor = 0;
        for t in &self.tokens {
            out.push_str(&self.source[cursor..t.start]);
            out.push_str(&t.text);
            cursor = t.end;
        }
        out.push_str(&self.source[cursor..]);
        out
    }
}
