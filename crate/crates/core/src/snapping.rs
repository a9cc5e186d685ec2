//! Boundary snapping: trim a candidate block back to its last structural
//! delimiter inside a lookback window.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::seq::Tokenizer;
use crate::{Error, Result, TokenId};

/// Token ids that may end a committed block.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DelimiterSet {
    flags: Vec<bool>,
}

impl DelimiterSet {
    pub fn from_tokenizer(tok: &Tokenizer) -> Self {
        DelimiterSet {
            flags: tok.delimiter_flags().to_vec(),
        }
    }

    pub fn from_ids(ids: impl IntoIterator<Item = TokenId>) -> Self {
        let mut flags = Vec::new();
        for id in ids {
            let i = id as usize;
            if flags.len() <= i {
                flags.resize(i + 1, false);
            }
            flags[i] = true;
        }
        DelimiterSet { flags }
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.flags.get(id as usize).copied().unwrap_or(false)
    }

    pub fn is_empty(&self) -> bool {
        !self.flags.iter().any(|&f| f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapMode {
    /// Trim to the last delimiter in the window; keep the block when there is none.
    Snap,
    /// `max(l_min, last delimiter in window)`, with no delimiter counting as 0.
    Strict,
    /// No trimming.
    Off,
}

impl fmt::Display for SnapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SnapMode::Snap => "snap",
            SnapMode::Strict => "strict",
            SnapMode::Off => "off",
        })
    }
}

impl FromStr for SnapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snap" | "on" => Ok(SnapMode::Snap),
            "strict" => Ok(SnapMode::Strict),
            "off" => Ok(SnapMode::Off),
            other => Err(Error::config("snap", format!("unknown mode {other:?} (snap, strict, off)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapConfig {
    pub l_min: usize,
    pub window: usize,
    pub mode: SnapMode,
}

impl Default for SnapConfig {
    fn default() -> Self {
        SnapConfig {
            l_min: 1,
            window: 16,
            mode: SnapMode::Snap,
        }
    }
}

impl SnapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_min == 0 {
            return Err(Error::config("lmin", "must be at least 1"));
        }
        Ok(())
    }
}

/// Why a snapped length came out the way it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapReason {
    /// Trimmed to (or already ending at) the delimiter at this 1-based index.
    Delimiter(usize),
    /// No delimiter in the window; block kept.
    NoDelimiter,
    /// Candidate shorter than `l_min`; caller must guarantee progress.
    BelowMinimum,
    /// Result raised to `l_min` by the strict formula.
    Minimum,
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Snapped {
    pub len: usize,
    pub reason: SnapReason,
}

impl Snapped {
    pub fn needs_fallback(&self) -> bool {
        self.reason == SnapReason::BelowMinimum
    }
}

/// Largest 1-based `j <= prefix.len()` with `prefix[j-1]` a delimiter and
/// `prefix.len() - j <= window`.
fn last_delimiter_in_window(prefix: &[TokenId], dset: &DelimiterSet, window: usize) -> Option<usize> {
    let l = prefix.len();
    let earliest = l.saturating_sub(window).max(1);
    (earliest..=l).rev().find(|&j| dset.contains(prefix[j - 1]))
}

pub fn snap_with_reason(prefix: &[TokenId], dset: &DelimiterSet, cfg: &SnapConfig) -> Snapped {
    let l = prefix.len();
    let hit = last_delimiter_in_window(prefix, dset, cfg.window);
    match cfg.mode {
        SnapMode::Off => Snapped {
            len: l,
            reason: SnapReason::Disabled,
        },
        SnapMode::Strict => match hit {
            Some(j) if j >= cfg.l_min => Snapped {
                len: j,
                reason: SnapReason::Delimiter(j),
            },
            _ => Snapped {
                len: cfg.l_min,
                reason: SnapReason::Minimum,
            },
        },
        SnapMode::Snap => {
            if l < cfg.l_min {
                return Snapped {
                    len: l,
                    reason: SnapReason::BelowMinimum,
                };
            }
            match hit {
                Some(j) => Snapped {
                    len: j.max(cfg.l_min),
                    reason: if j >= cfg.l_min {
                        SnapReason::Delimiter(j)
                    } else {
                        SnapReason::Minimum
                    },
                },
                None => Snapped {
                    len: l,
                    reason: SnapReason::NoDelimiter,
                },
            }
        }
    }
}

/// Final block length for the candidate `prefix`.
pub fn snap(prefix: &[TokenId], dset: &DelimiterSet, cfg: &SnapConfig) -> usize {
    snap_with_reason(prefix, dset, cfg).len
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(mode: SnapMode, l_min: usize, window: usize) -> SnapConfig {
        SnapConfig { l_min, window, mode }
    }

    /// Literal formula: max(l_min, max{ j <= L' : y_j in D and L' - j <= W }),
    /// empty inner set counted as 0.
    fn literal(prefix: &[TokenId], d: &DelimiterSet, l_min: usize, w: usize) -> usize {
        let l = prefix.len();
        let mut best = 0;
        for j in 1..=l {
            if d.contains(prefix[j - 1]) && l - j <= w {
                best = best.max(j);
            }
        }
        best.max(l_min)
    }

    #[test]
    fn snaps_to_period() {
        let t = Tokenizer::from_corpus(["so x = 7. then we"]).unwrap();
        let y = t.tokenize("so x = 7. then we").unwrap();
        let d = DelimiterSet::from_ids([t.id(".").unwrap()]);
        assert_eq!(snap(&y, &d, &cfg(SnapMode::Snap, 1, 16)), 5);
        assert_eq!(snap(&y, &d, &cfg(SnapMode::Strict, 1, 16)), 5);
        assert_eq!(snap(&y, &d, &cfg(SnapMode::Off, 1, 16)), 7);
    }

    #[test]
    fn empty_candidate() {
        let d = DelimiterSet::from_ids([0]);
        let s = snap_with_reason(&[], &d, &SnapConfig::default());
        assert_eq!(s.len, 0);
        assert!(s.needs_fallback());
        assert_eq!(snap(&[], &d, &cfg(SnapMode::Off, 1, 16)), 0);
    }

    #[test]
    fn no_delimiter() {
        let d = DelimiterSet::from_ids([0]);
        let y = [3, 4, 5, 6, 7, 8];
        assert_eq!(snap(&y, &d, &cfg(SnapMode::Snap, 1, 16)), 6);
        assert_eq!(snap(&y, &d, &cfg(SnapMode::Strict, 1, 16)), literal(&y, &d, 1, 16));
        assert_eq!(snap(&y, &d, &cfg(SnapMode::Strict, 1, 16)), 1);
    }

    #[test]
    fn window_limits_lookback() {
        let d = DelimiterSet::from_ids([0]);
        let y = [1, 0, 1, 1, 1, 1];
        assert_eq!(snap(&y, &d, &cfg(SnapMode::Snap, 1, 4)), 2);
        assert_eq!(snap(&y, &d, &cfg(SnapMode::Snap, 1, 3)), 6);
        // W = 0: only a delimiter at the very end counts.
        assert_eq!(snap(&y, &d, &cfg(SnapMode::Snap, 1, 0)), 6);
        assert_eq!(snap(&[1, 1, 0], &d, &cfg(SnapMode::Strict, 1, 0)), 3);
        assert_eq!(snap(&y, &d, &cfg(SnapMode::Strict, 1, 0)), 1);
    }

    #[test]
    fn minimum_length_applies() {
        let d = DelimiterSet::from_ids([0]);
        let y = [0, 1, 1, 1];
        assert_eq!(snap(&y, &d, &cfg(SnapMode::Snap, 3, 16)), 3);
        assert_eq!(snap(&y, &d, &cfg(SnapMode::Strict, 3, 16)), 3);
        let s = snap_with_reason(&[1, 1], &d, &cfg(SnapMode::Snap, 3, 16));
        assert_eq!(s.len, 2);
        assert!(s.needs_fallback());
    }

    #[test]
    fn parse_modes() {
        assert_eq!("strict".parse::<SnapMode>().unwrap(), SnapMode::Strict);
        assert!("sideways".parse::<SnapMode>().is_err());
    }

    proptest! {
        #[test]
        fn strict_matches_literal(
            y in prop::collection::vec(0u32..6, 0..40),
            l_min in 1usize..5,
            w in 0usize..20,
        ) {
            let d = DelimiterSet::from_ids([0, 1]);
            prop_assert_eq!(snap(&y, &d, &cfg(SnapMode::Strict, l_min, w)), literal(&y, &d, l_min, w));
        }

        #[test]
        fn snap_mode_case_analysis(
            y in prop::collection::vec(0u32..6, 0..40),
            l_min in 1usize..5,
            w in 0usize..20,
        ) {
            let d = DelimiterSet::from_ids([0, 1]);
            let l = y.len();
            let got = snap(&y, &d, &cfg(SnapMode::Snap, l_min, w));
            prop_assert!(got <= l);
            if l > 0 {
                prop_assert!(got >= l_min.min(l));
                prop_assert!(got == l || got == l_min || d.contains(y[got - 1]));
            }
            let any_in_window = (1..=l).any(|j| d.contains(y[j - 1]) && l - j <= w);
            if any_in_window && l >= l_min {
                prop_assert_eq!(got, literal(&y, &d, l_min, w));
            }
            prop_assert_eq!(snap(&y, &d, &cfg(SnapMode::Off, l_min, w)), l);
        }
    }
}
