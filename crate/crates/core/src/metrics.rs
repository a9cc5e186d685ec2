//! Post-hoc analysis over finished traces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::scheduler::{RunOutput, SchedulerKind, Trace};
use crate::{Error, Result, TokenId};

/// Completion window used for flip-rate reporting.
pub const MID_WINDOW: (f64, f64) = (0.25, 0.75);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub gen_len: usize,
    pub total_steps: usize,
    pub denoiser_calls: usize,
    pub total_cost: u64,
    pub gather_events: usize,
    pub cache_segments: usize,
    /// Mid-window flip rate in percent; absent when no step falls in the window.
    pub flip_rate: Option<f64>,
    /// Tokens committed per step -> number of steps.
    pub tokens_per_step: BTreeMap<usize, usize>,
    pub fallback_steps: usize,
    pub exact_match: Option<f64>,
    pub perplexity: Option<f64>,
}

impl RunSummary {
    pub fn from_run(out: &RunOutput, seed: u64, target: Option<&[TokenId]>) -> Self {
        let trace = &out.trace;
        let mut tokens_per_step = BTreeMap::new();
        for r in &trace.records {
            *tokens_per_step.entry(r.l_snapped).or_insert(0) += 1;
        }
        RunSummary {
            scheduler: out.kind,
            seed,
            gen_len: trace.gen_len,
            total_steps: trace.len(),
            denoiser_calls: out.denoiser_calls,
            total_cost: out.cache.cost_units(),
            gather_events: out.cache.gather_events(),
            cache_segments: out.cache.segments().len(),
            flip_rate: flip_rate(trace, MID_WINDOW).ok(),
            tokens_per_step,
            fallback_steps: trace.records.iter().filter(|r| r.fallback).count(),
            exact_match: target.map(|t| exact_match(&out.generated, t)),
            perplexity: None,
        }
    }
}

/// Percentage of compared slots whose top-1 changed, over steps whose
/// completion before the step lies in `[window.0, window.1]`.
pub fn flip_rate(trace: &Trace, window: (f64, f64)) -> Result<f64> {
    let (lo, hi) = window;
    let l = trace.gen_len as f64;
    let (mut flips, mut compared, mut steps) = (0usize, 0usize, 0usize);
    for r in &trace.records {
        let done = (trace.gen_len - r.n_active) as f64 / l;
        if done >= lo && done <= hi {
            steps += 1;
            flips += r.flips;
            compared += r.compared;
        }
    }
    if steps == 0 {
        return Err(Error::EmptyWindow { lo, hi });
    }
    if compared == 0 {
        return Ok(0.0);
    }
    Ok(100.0 * flips as f64 / compared as f64)
}

/// `baseline` calls divided by `run` calls.
pub fn speedup(run: &RunSummary, baseline: &RunSummary) -> Result<f64> {
    if run.denoiser_calls == 0 || baseline.denoiser_calls == 0 {
        return Err(Error::ZeroCalls);
    }
    Ok(baseline.denoiser_calls as f64 / run.denoiser_calls as f64)
}

/// `(step, masked count before the step)` for every step.
pub fn decay_curve(trace: &Trace) -> Vec<(usize, usize)> {
    trace.records.iter().map(|r| (r.step, r.n_active)).collect()
}

/// Fraction of generated tokens equal to the target at the same position.
pub fn exact_match(generated: &[TokenId], target: &[TokenId]) -> f64 {
    if generated.is_empty() {
        return 1.0;
    }
    let hits = generated.iter().zip(target).filter(|(a, b)| a == b).count();
    hits as f64 / generated.len() as f64
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    /// Pairs where the first sample is lower.
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    /// One-sided `P(X >= wins)` for `X ~ Binomial(wins + losses, 1/2)`.
    pub p_value: f64,
}

/// Paired sign test for "`a` tends to be lower than `b`". Ties are dropped.
pub fn sign_test(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    let (mut wins, mut losses, mut ties) = (0u64, 0u64, 0u64);
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Less) => wins += 1,
            Some(std::cmp::Ordering::Greater) => losses += 1,
            _ => ties += 1,
        }
    }
    let n = wins + losses;
    let p_value = if wins == 0 {
        1.0
    } else {
        let bin = Binomial::new(0.5, n).expect("p = 0.5 is valid");
        bin.sf(wins - 1)
    };
    Ok(SignTest {
        wins,
        losses,
        ties,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::StepRecord;

    fn rec(step: usize, n_active: usize, l: usize, flips: usize, compared: usize) -> StepRecord {
        StepRecord {
            step,
            n_active,
            l_prime: l,
            l_snapped: l,
            committed_ids: vec![0; l],
            flips,
            compared,
            cost: 0,
            gather_event: false,
            positions: vec![],
            fallback: false,
            margins: vec![],
        }
    }

    fn trace(gen_len: usize, records: Vec<StepRecord>) -> Trace {
        Trace { gen_len, records }
    }

    #[test]
    fn direct_ratio() {
        let t = trace(40, vec![rec(1, 40, 20, 9, 0), rec(2, 20, 20, 2, 20)]);
        assert_eq!(flip_rate(&t, MID_WINDOW).unwrap(), 10.0);
    }

    #[test]
    fn zero_flips() {
        let t = trace(8, vec![rec(1, 8, 4, 0, 0), rec(2, 4, 4, 0, 4)]);
        assert_eq!(flip_rate(&t, MID_WINDOW).unwrap(), 0.0);
    }

    #[test]
    fn empty_window_names_bounds() {
        let t = trace(8, vec![rec(1, 8, 8, 0, 0)]);
        let err = flip_rate(&t, MID_WINDOW).unwrap_err();
        assert!(matches!(err, Error::EmptyWindow { lo, hi } if lo == 0.25 && hi == 0.75));
        assert!(err.to_string().contains("0.25"));
    }

    #[test]
    fn arithmetic_decay_curve() {
        let t = trace(16, (0..4).map(|i| rec(i + 1, 16 - 4 * i, 4, 0, 0)).collect());
        assert_eq!(decay_curve(&t), vec![(1, 16), (2, 12), (3, 8), (4, 4)]);
    }

    fn summary(calls: usize) -> RunSummary {
        RunSummary {
            scheduler: SchedulerKind::Full,
            seed: 0,
            gen_len: 128,
            total_steps: calls,
            denoiser_calls: calls,
            total_cost: 0,
            gather_events: 0,
            cache_segments: 1,
            flip_rate: None,
            tokens_per_step: BTreeMap::new(),
            fallback_steps: 0,
            exact_match: None,
            perplexity: None,
        }
    }

    #[test]
    fn speedup_ratio() {
        assert_eq!(speedup(&summary(64), &summary(128)).unwrap(), 2.0);
        assert_eq!(speedup(&summary(7), &summary(7)).unwrap(), 1.0);
        assert!(matches!(speedup(&summary(0), &summary(1)), Err(Error::ZeroCalls)));
    }

    #[test]
    fn sign_test_tail() {
        // 15 of 20 pairs favour `a`: P(X >= 15) for Binomial(20, 0.5)
        let a: Vec<f64> = (0..20).map(|i| if i < 15 { 0.0 } else { 2.0 }).collect();
        let b = vec![1.0; 20];
        let t = sign_test(&a, &b).unwrap();
        assert_eq!((t.wins, t.losses, t.ties), (15, 5, 0));
        let tail: u64 = (15..=20u64).map(|k| binom(20, k)).sum();
        assert!((t.p_value - tail as f64 / 2f64.powi(20)).abs() < 1e-12);
        assert_eq!(sign_test(&[1.0], &[1.0]).unwrap().p_value, 1.0);
        assert!(sign_test(&[1.0], &[]).is_err());
    }

    fn binom(n: u64, k: u64) -> u64 {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn mean_and_sd() {
        let (m, s) = mean_sd(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn exact_match_fraction() {
        assert_eq!(exact_match(&[1, 2, 3, 4], &[1, 2, 0, 4]), 0.75);
    }
}
