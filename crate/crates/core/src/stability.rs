//! Stability diagnostics over the active suffix and candidate block sizing.
//!
//! The margin at position `i` is the gap between its top-1 and top-2 logits.
//! Because the running minimum of margins from the left is non-increasing,
//! the leading run of positions whose margins all exceed `tau` has length
//! equal to the largest `m` with `prefix_min[m - 1] > tau`. Block sizing uses
//! that identity to pick a length inside `[ceil(alpha n), floor(beta n)]`
//! directly instead of searching over thresholds.

use serde::{Deserialize, Serialize};

use crate::logits::{top_two, LogitMatrix};
use crate::{Error, Result, TokenId};

/// Top-1 proposals and their margins for every active position.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub top1_ids: Vec<TokenId>,
    pub margins: Vec<f64>,
}

impl Proposal {
    pub fn len(&self) -> usize {
        self.top1_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.top1_ids.is_empty()
    }
}

/// Read top-1 ids and margins off a logit matrix in one pass.
pub fn propose(logits: &LogitMatrix) -> Result<Proposal> {
    if logits.cols() < 2 {
        return Err(Error::VocabTooSmall(logits.cols()));
    }
    let mut top1_ids = Vec::with_capacity(logits.rows());
    let mut margins = Vec::with_capacity(logits.rows());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        if let Some(col) = row.iter().position(|z| z.is_nan() || *z == f64::INFINITY) {
            return Err(Error::NonFiniteLogit { row: i, col });
        }
        let (id, gap) = top_two(row).expect("width checked above");
        if gap.is_nan() || gap == f64::INFINITY {
            return Err(Error::NonFiniteLogit { row: i, col: id as usize });
        }
        top1_ids.push(id);
        margins.push(gap);
    }
    Ok(Proposal { top1_ids, margins })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginArray {
    values: Vec<f64>,
    prefix_min: Vec<f64>,
}

impl MarginArray {
    pub fn new(values: Vec<f64>) -> Self {
        let mut prefix_min = Vec::with_capacity(values.len());
        let mut running = f64::INFINITY;
        for &v in &values {
            running = running.min(v);
            prefix_min.push(running);
        }
        MarginArray { values, prefix_min }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn prefix_min(&self) -> &[f64] {
        &self.prefix_min
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Margins of every row of `logits`, with their prefix minimum.
pub fn margins(logits: &LogitMatrix) -> Result<MarginArray> {
    Ok(MarginArray::new(propose(logits)?.margins))
}

/// Length of the leading run of positions whose margins all exceed `tau`.
pub fn run_length(ma: &MarginArray, tau: f64) -> usize {
    ma.prefix_min.partition_point(|&p| p > tau)
}

/// Fractional sizing bounds plus the absolute stability floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizingBounds {
    pub alpha: f64,
    pub beta: f64,
    pub tau_floor: f64,
}

impl Default for SizingBounds {
    fn default() -> Self {
        SizingBounds {
            alpha: 0.25,
            beta: 0.50,
            tau_floor: 0.0,
        }
    }
}

impl SizingBounds {
    pub fn new(alpha: f64, beta: f64, tau_floor: f64) -> Result<Self> {
        let b = SizingBounds {
            alpha,
            beta,
            tau_floor,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("alpha", format!("{} not in (0, 1]", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::config("beta", format!("{} not in (0, 1]", self.beta)));
        }
        if self.alpha > self.beta {
            return Err(Error::config(
                "beta",
                format!("beta {} is below alpha {}", self.beta, self.alpha),
            ));
        }
        if !self.tau_floor.is_finite() || self.tau_floor < 0.0 {
            return Err(Error::config("tau-floor", format!("{} is not a finite value >= 0", self.tau_floor)));
        }
        Ok(())
    }

    /// Inclusive `[ceil(alpha n), floor(beta n)]`. Empty when the first bound
    /// exceeds the second, e.g. `n = 1` with `beta = 0.5`.
    pub fn range(&self, n: usize) -> (usize, usize) {
        let nf = n as f64;
        // Snap products that land within rounding noise of an integer.
        let lo = snap_int(self.alpha * nf).ceil() as usize;
        let hi = snap_int(self.beta * nf).floor() as usize;
        (lo.max(1), hi.min(n))
    }
}

fn snap_int(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x
    }
}

/// Largest `m` in `[ceil(alpha n), floor(beta n)]` whose prefix minimum
/// exceeds `tau_floor`, or 0 when none does.
pub fn select_block_length(ma: &MarginArray, n: usize, bounds: &SizingBounds) -> usize {
    select_block_length_with(ma, n, bounds, &mut |a, b| a > b)
}

/// `select_block_length` with the comparison supplied by the caller, so the
/// number of comparisons can be observed.
pub fn select_block_length_with(
    ma: &MarginArray,
    n: usize,
    bounds: &SizingBounds,
    exceeds: &mut dyn FnMut(f64, f64) -> bool,
) -> usize {
    debug_assert_eq!(n, ma.len());
    let n = n.min(ma.len());
    if n == 0 {
        return 0;
    }
    let (lo, hi) = bounds.range(n);
    if lo > hi {
        return 0;
    }
    // prefix_min is non-increasing, so the first hit scanning down is the largest.
    (lo..=hi)
        .rev()
        .find(|&m| exceeds(ma.prefix_min[m - 1], bounds.tau_floor))
        .unwrap_or(0)
}
