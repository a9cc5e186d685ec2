//! The longest-stable-prefix loop and the baseline schedulers.
//!
//! Every scheduler makes exactly one denoiser call per step and commits at
//! least one token, so a run over `L` masked positions finishes in at most
//! `L` steps.
//!
//! - `Lsp`: margins, prefix-min block sizing, boundary snapping, fallback to
//!   one token, contiguous commit.
//! - `FixedPrefix(k)`: commits the first `k` proposals each step.
//! - `Full`: commits the single most confident masked slot anywhere.
//! - `ScatteredMargin`: sizes the commit like `Lsp` but takes the top-`m`
//!   slots by margin wherever they are.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::kv_cost::{attention_cost, CacheModel};
use crate::seq::{CanvasView, ScatterState, SequenceState};
use crate::snapping::{snap_with_reason, DelimiterSet, SnapConfig, SnapMode};
use crate::stability::{propose, select_block_length, MarginArray, Proposal, SizingBounds};
use crate::{Error, Result, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Lsp,
    Full,
    FixedPrefix(usize),
    ScatteredMargin,
}

impl SchedulerKind {
    /// Whether commits always extend a single left-aligned prefix.
    pub fn is_prefix(&self) -> bool {
        matches!(self, SchedulerKind::Lsp | SchedulerKind::FixedPrefix(_))
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchedulerKind::Lsp => f.write_str("lsp"),
            SchedulerKind::Full => f.write_str("full"),
            SchedulerKind::FixedPrefix(k) => write!(f, "fixed_prefix:{k}"),
            SchedulerKind::ScatteredMargin => f.write_str("scattered_margin"),
        }
    }
}

impl FromStr for SchedulerKind {
    type Err = Error;

    /// Accepts `lsp`, `full`, `scattered_margin`, and `fixed_prefix:K` (also
    /// `fixed_prefix(K)`). Bare `fixed_prefix` means `k = 1`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let kind = match s {
            "lsp" => SchedulerKind::Lsp,
            "full" => SchedulerKind::Full,
            "scattered_margin" | "scattered" => SchedulerKind::ScatteredMargin,
            "fixed_prefix" => SchedulerKind::FixedPrefix(1),
            _ => {
                let arg = s
                    .strip_prefix("fixed_prefix:")
                    .or_else(|| s.strip_prefix("fixed_prefix(").and_then(|r| r.strip_suffix(')')))
                    .ok_or_else(|| Error::config("scheduler", format!("unknown scheduler {s:?}")))?;
                let k: usize = arg
                    .parse()
                    .map_err(|_| Error::config("k", format!("{arg:?} is not a count")))?;
                SchedulerKind::FixedPrefix(k)
            }
        };
        if kind == SchedulerKind::FixedPrefix(0) {
            return Err(Error::config("k", "must be at least 1"));
        }
        Ok(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub kind: SchedulerKind,
    pub bounds: SizingBounds,
    pub snap: SnapConfig,
    pub gen_len: usize,
    pub seed: u64,
    /// Cost units charged per gather event.
    pub gather_penalty: u64,
}

impl SchedulerConfig {
    pub fn new(kind: SchedulerKind, gen_len: usize) -> Self {
        SchedulerConfig {
            kind,
            bounds: SizingBounds::default(),
            snap: SnapConfig::default(),
            gen_len,
            seed: 0,
            gather_penalty: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_snap_mode(mut self, mode: SnapMode) -> Self {
        self.snap.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        self.snap.validate()?;
        if self.gen_len == 0 {
            return Err(Error::config("gen-len", "must be at least 1"));
        }
        if self.kind == SchedulerKind::FixedPrefix(0) {
            return Err(Error::config("k", "must be at least 1"));
        }
        Ok(())
    }
}

/// Audit record for one denoising step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based step index.
    pub step: usize,
    /// Masked positions before this step's commit.
    pub n_active: usize,
    /// Candidate length from block sizing (commit count for baselines).
    pub l_prime: usize,
    /// Tokens committed this step.
    pub l_snapped: usize,
    pub committed_ids: Vec<TokenId>,
    /// Slots whose top-1 changed since the previous step.
    pub flips: usize,
    /// Slots masked in both this and the previous step.
    pub compared: usize,
    pub cost: u64,
    pub gather_event: bool,
    /// Generation-relative positions of `committed_ids`.
    pub positions: Vec<usize>,
    /// The zero-length fallback fired.
    pub fallback: bool,
    pub margins: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub gen_len: usize,
    pub records: Vec<StepRecord>,
}

impl Trace {
    /// Rebuild a trace from its records; the generation length is the
    /// first step's masked count.
    pub fn from_records(records: Vec<StepRecord>) -> Self {
        let gen_len = records.first().map_or(0, |r| r.n_active);
        Trace { gen_len, records }
    }

    /// One JSON object per step, newline-terminated.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io("writing trace", e))?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut records = Vec::new();
        for line in r.lines() {
            let line = line.map_err(|e| Error::io("reading trace", e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(Trace::from_records(records))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub kind: SchedulerKind,
    /// Tokens in the generation region, left to right.
    pub generated: Vec<TokenId>,
    pub trace: Trace,
    pub cache: CacheModel,
    pub denoiser_calls: usize,
}

/// Mutable per-run bookkeeping shared by all step functions: the cache
/// model, the previous step's proposals (for flip counting) and counters.
pub struct Session<'a> {
    denoiser: &'a dyn Denoiser,
    cfg: SchedulerConfig,
    delimiters: &'a DelimiterSet,
    cache: CacheModel,
    prev: Vec<Option<TokenId>>,
    step: usize,
    calls: usize,
}

struct Forward {
    positions: Vec<usize>,
    proposal: Proposal,
    flips: usize,
    compared: usize,
    cost: u64,
}

impl<'a> Session<'a> {
    pub fn new(
        denoiser: &'a dyn Denoiser,
        cfg: SchedulerConfig,
        delimiters: &'a DelimiterSet,
        prompt_len: usize,
    ) -> Self {
        Session {
            denoiser,
            cfg,
            delimiters,
            cache: CacheModel::with_prompt(prompt_len, cfg.gather_penalty),
            prev: vec![None; prompt_len + cfg.gen_len],
            step: 0,
            calls: 0,
        }
    }

    pub fn cache(&self) -> &CacheModel {
        &self.cache
    }

    pub fn denoiser_calls(&self) -> usize {
        self.calls
    }

    fn forward(&mut self, view: CanvasView<'_>) -> Result<Forward> {
        self.step += 1;
        let positions: Vec<usize> = view.masked_positions().collect();
        let logits = self.denoiser.predict(&view, self.step, self.cfg.seed)?;
        self.calls += 1;
        if logits.rows() != positions.len() {
            return Err(Error::RowMismatch {
                expected: positions.len(),
                got: logits.rows(),
            });
        }
        let proposal = propose(&logits)?;

        let mut flips = 0;
        let mut compared = 0;
        for (&pos, &tok) in positions.iter().zip(&proposal.top1_ids) {
            if let Some(before) = self.prev[pos] {
                compared += 1;
                flips += usize::from(before != tok);
            }
        }
        self.prev.iter_mut().for_each(|p| *p = None);
        for (&pos, &tok) in positions.iter().zip(&proposal.top1_ids) {
            self.prev[pos] = Some(tok);
        }

        let n = positions.len();
        let cost = attention_cost(view.tokens.len() - n, n);
        self.cache.add_cost(cost);
        Ok(Forward {
            positions,
            proposal,
            flips,
            compared,
            cost,
        })
    }

    fn record(
        &mut self,
        fwd: Forward,
        l_prime: usize,
        picks: &[usize],
        prompt_len: usize,
        fallback: bool,
    ) -> Result<StepRecord> {
        let abs: Vec<usize> = picks.iter().map(|&r| fwd.positions[r]).collect();
        let gather_event = self.cache.append(&abs)?;
        Ok(StepRecord {
            step: self.step,
            n_active: fwd.positions.len(),
            l_prime,
            l_snapped: picks.len(),
            committed_ids: picks.iter().map(|&r| fwd.proposal.top1_ids[r]).collect(),
            flips: fwd.flips,
            compared: fwd.compared,
            cost: fwd.cost,
            gather_event,
            positions: abs.iter().map(|p| p - prompt_len).collect(),
            fallback,
            margins: fwd.proposal.margins,
        })
    }

    /// One longest-stable-prefix step.
    pub fn lsp_step(&mut self, state: &mut SequenceState) -> Result<StepRecord> {
        let n = state.active_len();
        if n == 0 {
            return Err(Error::Contract("step on a finished sequence".into()));
        }
        let fwd = self.forward(state.view())?;
        let top1 = &fwd.proposal.top1_ids;
        let margins = MarginArray::new(fwd.proposal.margins.clone());
        let l_prime = select_block_length(&margins, n, &self.cfg.bounds);
        let snapped = snap_with_reason(&top1[..l_prime], self.delimiters, &self.cfg.snap);
        let mut len = snapped.len;
        let fallback = len == 0;
        if fallback {
            len = 1;
        }
        if self.cfg.snap.mode == SnapMode::Strict {
            // the literal formula can ask for l_min past the end
            len = len.min(n);
        }
        if len > n {
            return Err(Error::Contract(format!("block of {len} with {n} active")));
        }
        state.commit_prefix(&top1[..len])?;
        let picks: Vec<usize> = (0..len).collect();
        self.record(fwd, l_prime, &picks, state.prompt_len(), fallback)
    }

    /// Commit the first `min(k, n)` proposals.
    pub fn fixed_prefix_step(&mut self, state: &mut SequenceState, k: usize) -> Result<StepRecord> {
        let n = state.active_len();
        if n == 0 || k == 0 {
            return Err(Error::Contract(format!("fixed prefix step with k={k}, n={n}")));
        }
        let fwd = self.forward(state.view())?;
        let len = k.min(n);
        state.commit_prefix(&fwd.proposal.top1_ids[..len])?;
        let picks: Vec<usize> = (0..len).collect();
        self.record(fwd, len, &picks, state.prompt_len(), false)
    }

    /// Commit the single highest-margin masked slot; leftmost wins ties.
    pub fn full_step(&mut self, state: &mut ScatterState) -> Result<StepRecord> {
        if state.is_done() {
            return Err(Error::Contract("step on a finished sequence".into()));
        }
        let fwd = self.forward(state.view())?;
        let m = &fwd.proposal.margins;
        let mut best = 0;
        for (i, &d) in m.iter().enumerate() {
            if d > m[best] {
                best = i;
            }
        }
        state.commit_at(&[(fwd.positions[best], fwd.proposal.top1_ids[best])])?;
        self.record(fwd, 1, &[best], state.prompt_len(), false)
    }

    /// Commit the top-`m` slots by margin, where `m` is the count of margins
    /// above the floor clamped to `[ceil(alpha n), floor(beta n)]`, at least 1.
    pub fn scattered_margin_step(&mut self, state: &mut ScatterState) -> Result<StepRecord> {
        let n = state.masked_len();
        if n == 0 {
            return Err(Error::Contract("step on a finished sequence".into()));
        }
        let fwd = self.forward(state.view())?;
        let margins = &fwd.proposal.margins;
        let picks = scattered_picks(margins, &self.cfg.bounds);
        let fills: Vec<(usize, TokenId)> = picks
            .iter()
            .map(|&r| (fwd.positions[r], fwd.proposal.top1_ids[r]))
            .collect();
        state.commit_at(&fills)?;
        let m = picks.len();
        self.record(fwd, m, &picks, state.prompt_len(), false)
    }
}

/// Row indices (ascending) of the slots a scattered-margin step accepts.
pub fn scattered_picks(margins: &[f64], bounds: &SizingBounds) -> Vec<usize> {
    let n = margins.len();
    let confident = margins.iter().filter(|&&d| d > bounds.tau_floor).count();
    let (lo, hi) = bounds.range(n);
    let m = confident.max(lo).min(hi).max(1).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| margins[b].total_cmp(&margins[a]).then(a.cmp(&b)));
    let mut picks = order[..m].to_vec();
    picks.sort_unstable();
    picks
}

/// Decode `cfg.gen_len` positions after `prompt`.
pub fn run(
    prompt: &[TokenId],
    denoiser: &dyn Denoiser,
    cfg: &SchedulerConfig,
    delimiters: &DelimiterSet,
    mask_id: TokenId,
) -> Result<RunOutput> {
    cfg.validate()?;
    let mut session = Session::new(denoiser, *cfg, delimiters, prompt.len());
    let mut records = Vec::new();
    let generated = match cfg.kind {
        SchedulerKind::Lsp | SchedulerKind::FixedPrefix(_) => {
            let mut state = SequenceState::new(prompt, cfg.gen_len, mask_id)?;
            while !state.is_done() {
                let rec = match cfg.kind {
                    SchedulerKind::FixedPrefix(k) => session.fixed_prefix_step(&mut state, k)?,
                    _ => session.lsp_step(&mut state)?,
                };
                records.push(rec);
            }
            state.generated().to_vec()
        }
        SchedulerKind::Full | SchedulerKind::ScatteredMargin => {
            let mut state = ScatterState::new(prompt, cfg.gen_len, mask_id)?;
            while !state.is_done() {
                let rec = match cfg.kind {
                    SchedulerKind::Full => session.full_step(&mut state)?,
                    _ => session.scattered_margin_step(&mut state)?,
                };
                records.push(rec);
            }
            state.generated().to_vec()
        }
    };
    debug_assert!(records.len() <= cfg.gen_len);
    Ok(RunOutput {
        generated,
        denoiser_calls: session.denoiser_calls(),
        cache: session.cache,
        kind: cfg.kind,
        trace: Trace {
            gen_len: cfg.gen_len,
            records,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{OracleDenoiser, OracleParams};
    use crate::logits::LogitMatrix;

    const V: usize = 40;
    const MASK: TokenId = V as TokenId;
    const DOT: TokenId = 0;

    fn target(n: usize) -> Vec<TokenId> {
        (0..n).map(|i| 1 + (i * 5 % (V - 1)) as TokenId).collect()
    }

    fn noiseless(n: usize) -> OracleDenoiser {
        OracleDenoiser::new(target(n), V, OracleParams::noiseless(10.0)).unwrap()
    }

    /// Returns fixed margins; top-1 is always token 1.
    struct Fixed(Vec<f64>);

    impl Denoiser for Fixed {
        fn vocab_size(&self) -> usize {
            3
        }
        fn predict(&self, canvas: &CanvasView<'_>, _: usize, _: u64) -> Result<LogitMatrix> {
            let rows: Vec<Vec<f64>> = canvas
                .masked_positions()
                .map(|p| vec![0.0, self.0[p - canvas.prompt_len], -1.0])
                .collect();
            LogitMatrix::new(rows.len(), 3, rows.concat())
        }
    }

    fn dset() -> DelimiterSet {
        DelimiterSet::from_ids([DOT])
    }

    #[test]
    fn noiseless_commits_half() {
        let od = noiseless(8);
        let cfg = SchedulerConfig::new(SchedulerKind::Lsp, 8).with_snap_mode(SnapMode::Off);
        let d = dset();
        let mut s = Session::new(&od, cfg, &d, 0);
        let mut state = SequenceState::new(&[], 8, MASK).unwrap();
        let rec = s.lsp_step(&mut state).unwrap();
        assert_eq!(rec.l_snapped, 4);
        assert_eq!(state.frozen(), &target(8)[..4]);
    }

    #[test]
    fn low_margin_without_delimiter_commits_one() {
        let den = Fixed(vec![0.5; 8]);
        let mut cfg = SchedulerConfig::new(SchedulerKind::Lsp, 8);
        cfg.bounds.tau_floor = 1.0;
        let d = dset();
        let mut s = Session::new(&den, cfg, &d, 0);
        let mut state = SequenceState::new(&[], 8, 3).unwrap();
        let rec = s.lsp_step(&mut state).unwrap();
        assert_eq!((rec.l_prime, rec.l_snapped, rec.fallback), (0, 1, true));
    }

    #[test]
    fn single_slot_terminates() {
        let od = noiseless(1);
        let out = run(&[], &od, &SchedulerConfig::new(SchedulerKind::Lsp, 1), &dset(), MASK).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.generated, target(1));
    }

    #[test]
    fn snapping_trims_to_delimiter() {
        let mut t = target(16);
        t[2] = DOT;
        let od = OracleDenoiser::new(t, V, OracleParams::noiseless(10.0)).unwrap();
        let cfg = SchedulerConfig::new(SchedulerKind::Lsp, 16);
        let out = run(&[], &od, &cfg, &dset(), MASK).unwrap();
        assert_eq!(out.trace.records[0].l_prime, 8);
        assert_eq!(out.trace.records[0].l_snapped, 3);
    }

    #[test]
    fn fixed_prefix_step_counts() {
        for (k, steps) in [(1, 128), (2, 64), (3, 43), (4, 32), (8, 16)] {
            let od = noiseless(128);
            let out = run(&[], &od, &SchedulerConfig::new(SchedulerKind::FixedPrefix(k), 128), &dset(), MASK).unwrap();
            assert_eq!(out.trace.len(), steps);
        }
    }

    #[test]
    fn full_ties_go_left() {
        let den = Fixed(vec![1.0; 4]);
        let cfg = SchedulerConfig::new(SchedulerKind::Full, 4);
        let out = run(&[], &den, &cfg, &dset(), 3).unwrap();
        let order: Vec<usize> = out.trace.records.iter().map(|r| r.positions[0]).collect();
        assert_eq!(order, vec![0, 1, 2, 3]);
        assert_eq!(out.cache.gather_events(), 0);
    }

    #[test]
    fn scattered_picks_examples() {
        let b = SizingBounds::new(0.25, 0.5, 2.0).unwrap();
        assert_eq!(scattered_picks(&[1.0, 9.0, 1.0, 9.0], &b), vec![1, 3]);
        assert_eq!(scattered_picks(&[5.0; 8], &SizingBounds::default()), vec![0, 1, 2, 3]);
        assert_eq!(scattered_picks(&[0.0], &SizingBounds::default()), vec![0]);
    }

    #[test]
    fn scattered_is_not_contiguous() {
        let den = Fixed(vec![1.0, 9.0, 1.0, 9.0, 1.0, 9.0, 1.0, 9.0]);
        let mut cfg = SchedulerConfig::new(SchedulerKind::ScatteredMargin, 8);
        cfg.bounds.tau_floor = 2.0;
        let out = run(&[], &den, &cfg, &dset(), 3).unwrap();
        assert_eq!(out.trace.records[0].positions, vec![1, 3, 5, 7]);
        assert!(out.trace.records[0].gather_event);
        assert!(out.cache.gather_events() >= 1);
    }

    #[test]
    fn flips_are_counted_on_surviving_slots() {
        // top-1 alternates between steps via the canvas size
        struct Alternating;
        impl Denoiser for Alternating {
            fn vocab_size(&self) -> usize {
                2
            }
            fn predict(&self, canvas: &CanvasView<'_>, step: usize, _: u64) -> Result<LogitMatrix> {
                let n = canvas.masked_count();
                let row = if step % 2 == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
                LogitMatrix::new(n, 2, row.repeat(n))
            }
        }
        let cfg = SchedulerConfig::new(SchedulerKind::FixedPrefix(1), 4);
        let out = run(&[], &Alternating, &cfg, &dset(), 2).unwrap();
        let fc: Vec<(usize, usize)> = out.trace.records.iter().map(|r| (r.flips, r.compared)).collect();
        assert_eq!(fc, vec![(0, 0), (3, 3), (2, 2), (1, 1)]);
    }

    #[test]
    fn row_mismatch_is_reported() {
        struct Short;
        impl Denoiser for Short {
            fn vocab_size(&self) -> usize {
                2
            }
            fn predict(&self, _: &CanvasView<'_>, _: usize, _: u64) -> Result<LogitMatrix> {
                Ok(LogitMatrix::filled(1, 2, 0.0))
            }
        }
        let cfg = SchedulerConfig::new(SchedulerKind::Lsp, 3);
        assert!(matches!(
            run(&[], &Short, &cfg, &dset(), 2),
            Err(Error::RowMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn strict_snap_respects_remaining_length() {
        let od = noiseless(5);
        let mut cfg = SchedulerConfig::new(SchedulerKind::Lsp, 5).with_snap_mode(SnapMode::Strict);
        cfg.snap.l_min = 4;
        let out = run(&[], &od, &cfg, &dset(), MASK).unwrap();
        let sizes: Vec<usize> = out.trace.records.iter().map(|r| r.l_snapped).collect();
        assert_eq!(sizes, vec![4, 1]);
    }

    #[test]
    fn jsonl_round_trip() {
        let od = OracleDenoiser::new(target(32), V, OracleParams::default()).unwrap();
        let out = run(&[3, 4], &od, &SchedulerConfig::new(SchedulerKind::Lsp, 32), &dset(), MASK).unwrap();
        let text = out.trace.to_jsonl();
        assert_eq!(text.lines().count(), out.trace.len());
        assert!(text.starts_with("{\"step\":1,\"n_active\":32,\"l_prime\":"));
        let back = Trace::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, out.trace);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("fixed_prefix:8".parse::<SchedulerKind>().unwrap(), SchedulerKind::FixedPrefix(8));
        assert_eq!("fixed_prefix(2)".parse::<SchedulerKind>().unwrap(), SchedulerKind::FixedPrefix(2));
        assert_eq!("scattered_margin".parse::<SchedulerKind>().unwrap(), SchedulerKind::ScatteredMargin);
        assert!("fixed_prefix:0".parse::<SchedulerKind>().is_err());
        assert!("beam".parse::<SchedulerKind>().is_err());
        for k in [SchedulerKind::Lsp, SchedulerKind::Full, SchedulerKind::FixedPrefix(3), SchedulerKind::ScatteredMargin] {
            assert_eq!(k.to_string().parse::<SchedulerKind>().unwrap(), k);
        }
    }
}
