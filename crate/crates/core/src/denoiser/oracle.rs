//! Target-following synthetic denoiser with a controllable margin law.
//!
//! For a masked slot at distance `d` from the end of the contiguous committed
//! prefix the margin is
//!
//! ```text
//! delta = max(0, mu * gamma^d - phi * [slot touches an internal boundary] + sigma * eps)
//! ```
//!
//! with `eps` standard normal. The top-1 token is the target unless a flip
//! draw succeeds, in which case a distractor wins by the same margin. All
//! randomness is keyed to `(seed, absolute position, step)`, so a replay is
//! exact while successive steps re-draw and can flip low-margin slots.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{noise_key, Denoiser};
use crate::logits::LogitMatrix;
use crate::seq::CanvasView;
use crate::{Error, Result, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FlipModel {
    /// Constant flip probability.
    Fixed { prob: f64 },
    /// `1 / (1 + exp(delta / temperature))`: one half at zero margin.
    Logistic { temperature: f64 },
}

impl FlipModel {
    pub fn probability(&self, margin: f64) -> f64 {
        match *self {
            FlipModel::Fixed { prob } => prob,
            FlipModel::Logistic { temperature } => 1.0 / (1.0 + (margin / temperature).exp()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    pub mu: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub phi: f64,
    pub flip: FlipModel,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            mu: 6.0,
            gamma: 0.97,
            sigma: 1.0,
            phi: 2.0,
            flip: FlipModel::Logistic { temperature: 1.0 },
        }
    }
}

impl OracleParams {
    /// Constant margin `mu`, no noise, no flips.
    pub fn noiseless(mu: f64) -> Self {
        OracleParams {
            mu,
            gamma: 1.0,
            sigma: 0.0,
            phi: 0.0,
            flip: FlipModel::Fixed { prob: 0.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::config("mu", "must be a finite value >= 0"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("gamma", format!("{} not in (0, 1]", self.gamma)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::config("sigma", "must be a finite value >= 0"));
        }
        if !(self.phi.is_finite() && self.phi >= 0.0) {
            return Err(Error::config("phi", "must be a finite value >= 0"));
        }
        match self.flip {
            FlipModel::Fixed { prob } if !(0.0..=1.0).contains(&prob) => {
                Err(Error::config("flip-prob", format!("{prob} not in [0, 1]")))
            }
            FlipModel::Logistic { temperature } if !(temperature > 0.0 && temperature.is_finite()) => {
                Err(Error::config("flip-temperature", "must be positive"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    target: Vec<TokenId>,
    vocab_size: usize,
    params: OracleParams,
}

impl OracleDenoiser {
    /// `target[g]` is the ground truth for the `g`-th generated position.
    pub fn new(target: Vec<TokenId>, vocab_size: usize, params: OracleParams) -> Result<Self> {
        params.validate()?;
        if vocab_size < 2 {
            return Err(Error::VocabTooSmall(vocab_size));
        }
        if let Some(&bad) = target.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::Contract(format!("target token {bad} outside vocabulary of {vocab_size}")));
        }
        Ok(OracleDenoiser {
            target,
            vocab_size,
            params,
        })
    }

    pub fn target(&self) -> &[TokenId] {
        &self.target
    }

    pub fn params(&self) -> &OracleParams {
        &self.params
    }

    fn draw(&self, rng: &mut ChaCha8Rng, distance: usize, fragment: bool) -> f64 {
        let p = &self.params;
        let mut m = p.mu * p.gamma.powi(distance.min(i32::MAX as usize) as i32);
        if fragment {
            m -= p.phi;
        }
        if p.sigma > 0.0 {
            let eps: f64 = rng.sample(StandardNormal);
            m += p.sigma * eps;
        }
        m.max(0.0)
    }
}

impl Denoiser for OracleDenoiser {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn predict(&self, canvas: &CanvasView<'_>, step: usize, seed: u64) -> Result<LogitMatrix> {
        let boundary = canvas.contiguous_end();
        let len = canvas.tokens.len();
        let rows = canvas.masked_count();
        let mut out = LogitMatrix::filled(rows, self.vocab_size, -1.0);
        for (row, pos) in canvas.masked_positions().enumerate() {
            let g = pos - canvas.prompt_len;
            let target = *self.target.get(g).ok_or(Error::TargetExhausted {
                position: g,
                available: self.target.len(),
            })?;
            let fragment = (pos + 1 < len && !canvas.is_masked(pos + 1)) || (pos > boundary && !canvas.is_masked(pos - 1));
            let mut rng = ChaCha8Rng::seed_from_u64(noise_key(seed, pos, step));
            let margin = self.draw(&mut rng, pos - boundary, fragment);
            let flipped = rng.gen::<f64>() < self.params.flip.probability(margin);
            let mut distractor = rng.gen_range(0..self.vocab_size as TokenId - 1);
            if distractor >= target {
                distractor += 1;
            }
            let (top, runner_up) = if flipped { (distractor, target) } else { (target, distractor) };
            let r = out.row_mut(row);
            r[runner_up as usize] = 0.0;
            r[top as usize] = margin;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::{ScatterState, SequenceState};
    use crate::stability::propose;

    const V: usize = 50;
    const MASK: TokenId = V as TokenId;

    fn target(n: usize) -> Vec<TokenId> {
        (0..n).map(|i| (i * 7 % V) as TokenId).collect()
    }

    #[test]
    fn noiseless_is_exact() {
        let od = OracleDenoiser::new(target(16), V, OracleParams::noiseless(10.0)).unwrap();
        let s = SequenceState::new(&[], 16, MASK).unwrap();
        let p = propose(&od.predict(&s.view(), 1, 3).unwrap()).unwrap();
        assert!(p.margins.iter().all(|&d| d == 10.0));
        assert_eq!(p.top1_ids, target(16));
    }

    #[test]
    fn geometric_decay() {
        let params = OracleParams {
            gamma: 0.5,
            ..OracleParams::noiseless(8.0)
        };
        let od = OracleDenoiser::new(target(6), V, params).unwrap();
        let s = SequenceState::new(&[], 6, MASK).unwrap();
        let p = propose(&od.predict(&s.view(), 1, 0).unwrap()).unwrap();
        assert_eq!(p.margins, vec![8.0, 4.0, 2.0, 1.0, 0.5, 0.25]);
    }

    #[test]
    fn replay_is_identical() {
        let od = OracleDenoiser::new(target(40), V, OracleParams::default()).unwrap();
        let s = SequenceState::new(&[1, 2], 40, MASK).unwrap();
        let a = od.predict(&s.view(), 4, 99).unwrap();
        let b = od.predict(&s.view(), 4, 99).unwrap();
        assert_eq!(a, b);
        let c = od.predict(&s.view(), 5, 99).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn target_exhausted() {
        let od = OracleDenoiser::new(target(4), V, OracleParams::default()).unwrap();
        let s = SequenceState::new(&[], 5, MASK).unwrap();
        assert!(matches!(
            od.predict(&s.view(), 1, 0),
            Err(Error::TargetExhausted { position: 4, available: 4 })
        ));
    }

    #[test]
    fn margins_non_increasing_without_noise() {
        let params = OracleParams {
            gamma: 0.9,
            phi: 0.0,
            ..OracleParams::noiseless(5.0)
        };
        let od = OracleDenoiser::new(target(64), V, params).unwrap();
        let s = SequenceState::new(&[3], 64, MASK).unwrap();
        let p = propose(&od.predict(&s.view(), 1, 0).unwrap()).unwrap();
        assert!(p.margins.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn fragmentation_lowers_margins() {
        let params = OracleParams::default();
        let od = OracleDenoiser::new(target(64), V, params).unwrap();
        let (mut internal, mut left) = (Vec::new(), Vec::new());
        let mut seed = 0u64;
        while internal.len() < 1000 || left.len() < 1000 {
            seed += 1;
            // committed prefix of 4, then an island at 10..12
            let mut s = ScatterState::new(&[], 64, MASK).unwrap();
            let fills: Vec<_> = [0, 1, 2, 3, 10, 11, 12].iter().map(|&p| (p, 0)).collect();
            s.commit_at(&fills).unwrap();
            let view = s.view();
            let p = propose(&od.predict(&view, 1, seed).unwrap()).unwrap();
            for (row, pos) in view.masked_positions().enumerate() {
                if pos == 4 {
                    left.push(p.margins[row]);
                } else if pos == 9 || pos == 13 {
                    internal.push(p.margins[row]);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&left) - mean(&internal) >= params.phi / 2.0);
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = OracleParams::default();
        p.gamma = 0.0;
        assert!(OracleDenoiser::new(target(4), V, p).is_err());
        assert!(OracleDenoiser::new(vec![V as TokenId], V, OracleParams::default()).is_err());
    }
}
