//! Budgeted, non-destructive evidence highlighting.
//!
//! A lightweight scorer assigns each context token a selection probability.
//! At most `floor(gamma * n)` tokens are chosen, merged into spans and
//! wrapped in boundary markers, leaving every source byte in place. The
//! scorer is trained by grouped policy gradient, using only the rewards a
//! frozen black-box solver earns on the emphasized text.
//!
//! ```
//! use hilight::markup::{coalesce, inject, HighlightMask, MarkerFormat};
//! use hilight::text::tokenize;
//!
//! let ctx = tokenize("the cat sat on the mat");
//! let mask = HighlightMask::from_indices(ctx.len(), [1, 2]);
//! let spans = coalesce(&mask, &ctx, 0).unwrap();
//! let out = inject(&ctx, &spans, &MarkerFormat::default()).unwrap();
//! assert_eq!(out, "the <start_important>cat sat<end_important> on the mat");
//! ```

pub mod data;
pub mod error;
pub mod markup;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod selection;
pub mod solver;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/markup.md")]
    struct Markup;
    #[doc = include_str!("../../../book/src/selection.md")]
    struct Selection;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/solvers.md")]
    struct Solvers;
    #[doc = include_str!("../../../book/src/data.md")]
    struct Data;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
