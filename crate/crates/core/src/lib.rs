//! Cross-lingual query-by-example retrieval.
//!
//! English topic descriptions plus a few known-relevant Arabic documents are
//! turned into Arabic rankings in three stages: BM25 pre-selection over an
//! inverted index, re-ranking with embedding-based neural rankers (KNRM,
//! ConvKNRM, MatchPyramid) trained with a listwise ListNet loss, and a
//! two-step rank fusion of the per-component lists. [`metrics`] evaluates
//! TREC-style runs.

pub mod embed;
pub mod error;
pub mod exec;
pub mod fusion;
pub mod index;
pub mod metrics;
pub(crate) mod io;
pub mod numeric;
pub mod pipeline;
pub mod ranked;
pub mod rankers;
pub mod text;
pub mod train;
pub mod trec;

pub use error::{Error, Result};
pub use exec::Exec;
