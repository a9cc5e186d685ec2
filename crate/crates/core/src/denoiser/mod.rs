//! The denoiser interface and the synthetic implementations used to drive
//! schedulers without a neural model.

mod ngram;
mod oracle;

use std::sync::atomic::{AtomicUsize, Ordering};

pub use ngram::{NGramDenoiser, NGramParams};
pub use oracle::{FlipModel, OracleDenoiser, OracleParams};

use crate::logits::LogitMatrix;
use crate::seq::CanvasView;
use crate::Result;

/// One forward pass: score every masked slot of `canvas`.
///
/// The returned matrix has one row per masked position, in left-to-right
/// order, and `vocab_size()` columns. Implementations must be pure functions
/// of `(canvas, step, seed)`.
pub trait Denoiser: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn predict(&self, canvas: &CanvasView<'_>, step: usize, seed: u64) -> Result<LogitMatrix>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn predict(&self, canvas: &CanvasView<'_>, step: usize, seed: u64) -> Result<LogitMatrix> {
        (**self).predict(canvas, step, seed)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn predict(&self, canvas: &CanvasView<'_>, step: usize, seed: u64) -> Result<LogitMatrix> {
        (**self).predict(canvas, step, seed)
    }
}

/// Wraps a denoiser and counts `predict` calls.
#[derive(Debug)]
pub struct CallCounter<D> {
    inner: D,
    calls: AtomicUsize,
}

impl<D> CallCounter<D> {
    pub fn new(inner: D) -> Self {
        CallCounter {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    pub fn into_inner(self) -> D {
        self.inner
    }
}

impl<D: Denoiser> Denoiser for CallCounter<D> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn predict(&self, canvas: &CanvasView<'_>, step: usize, seed: u64) -> Result<LogitMatrix> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.predict(canvas, step, seed)
    }
}

/// Stateless 64-bit mix (splitmix64 finalizer).
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the noise at one (run seed, absolute position, step) triple.
pub(crate) fn noise_key(seed: u64, position: usize, step: usize) -> u64 {
    mix64(mix64(mix64(seed) ^ position as u64) ^ (step as u64).rotate_left(32))
}
