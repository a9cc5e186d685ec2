//! Token-level sequence representation: the toy tokenizer and the
//! frozen/active partition every scheduler mutates.

mod state;
mod tokenizer;

pub use state::{CanvasView, ScatterState, SequenceState};
pub use tokenizer::{Tokenizer, DEFAULT_DELIMITERS, MASK_SURFACE};
