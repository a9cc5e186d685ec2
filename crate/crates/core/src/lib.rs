//! Longest-stable-prefix (LSP) decoding for masked-diffusion sequence generation.
//!
//! Each denoising step runs one forward pass over the masked suffix, scores
//! every position by its top-1/top-2 logit margin, picks a contiguous
//! left-aligned block whose length is a target fraction of the suffix, trims
//! the block back to a structural delimiter, and commits it atomically. The
//! committed prefix therefore grows as a single segment and the KV cache only
//! ever sees contiguous appends.
//!
//! Alongside the scheduler the crate provides:
//!
//! - baseline schedulers (one-token confidence decoding, fixed-size prefixes,
//!   and scattered top-margin acceptance),
//! - two deterministic synthetic denoisers (a target oracle with a tunable
//!   margin law, and a bidirectional n-gram model),
//! - a cache-topology and attention-cost model,
//! - trace metrics (flip rate, decay curves, call-count speedup),
//! - the configuration, trace serialization and sweep machinery used by the
//!   `lsp` command-line tool.

pub mod denoiser;
mod error;
pub mod harness;
pub mod kv_cost;
pub mod logits;
pub mod metrics;
pub mod scheduler;
pub mod seq;
pub mod snapping;
pub mod stability;

pub use error::{Error, Result};

/// Token identifier. Regular vocabulary entries are numbered from zero; the
/// mask token takes the id directly after the last regular entry.
pub type TokenId = u32;

/// The corpus shipped with the crate, one line per row.
pub const BUNDLED_CORPUS: &str = include_str!("../data/corpus.txt");
