//! Run configuration and its flat `key = value` text form.
//!
//! Keys are the CLI flag names without the leading dashes (`gen-len`,
//! `tau-floor`, ...); underscores are accepted in place of dashes. Blank
//! lines and `#` comments are ignored.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::denoiser::{FlipModel, NGramParams, OracleParams};
use crate::scheduler::{SchedulerConfig, SchedulerKind};
use crate::snapping::{SnapConfig, SnapMode};
use crate::stability::SizingBounds;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoiserKind {
    Oracle,
    Ngram,
}

impl FromStr for DenoiserKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(DenoiserKind::Oracle),
            "ngram" => Ok(DenoiserKind::Ngram),
            other => Err(Error::config("denoiser", format!("unknown denoiser {other:?} (oracle, ngram)"))),
        }
    }
}

impl DenoiserKind {
    fn as_str(&self) -> &'static str {
        match self {
            DenoiserKind::Oracle => "oracle",
            DenoiserKind::Ngram => "ngram",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// For `FixedPrefix` the count lives in `k`.
    pub scheduler: SchedulerKind,
    pub k: usize,
    pub bounds: SizingBounds,
    pub snap: SnapConfig,
    pub gen_len: usize,
    pub seed: u64,
    pub gather_penalty: u64,
    pub denoiser: DenoiserKind,
    pub oracle: OracleParams,
    pub ngram: NGramParams,
    /// Corpus file; the bundled corpus when absent.
    pub corpus: Option<PathBuf>,
    pub prompt: String,
    /// Delimiter surfaces; the tokenizer default when absent.
    pub delimiters: Option<Vec<String>>,
    pub out_dir: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    /// Bench only.
    pub schedulers: Vec<SchedulerKind>,
    /// Bench only.
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scheduler: SchedulerKind::Lsp,
            k: 1,
            bounds: SizingBounds::default(),
            snap: SnapConfig::default(),
            gen_len: 128,
            seed: 0,
            gather_penalty: 0,
            denoiser: DenoiserKind::Oracle,
            oracle: OracleParams::default(),
            ngram: NGramParams::default(),
            corpus: None,
            prompt: String::new(),
            delimiters: None,
            out_dir: None,
            trace: None,
            summary: None,
            csv: None,
            schedulers: vec![SchedulerKind::Lsp, SchedulerKind::ScatteredMargin],
            seeds: (0..20).collect(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "scheduler",
    "k",
    "alpha",
    "beta",
    "tau-floor",
    "w",
    "lmin",
    "snap",
    "gen-len",
    "seed",
    "gather-penalty",
    "denoiser",
    "mu",
    "gamma",
    "sigma",
    "phi",
    "flip-model",
    "flip-prob",
    "flip-temperature",
    "ngram-order",
    "ngram-k",
    "ngram-lambda",
    "corpus",
    "prompt",
    "delimiters",
    "out-dir",
    "trace",
    "summary",
    "csv",
    "schedulers",
    "seeds",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse {value:?}")))
}

fn resolve(kind: SchedulerKind, k: usize) -> SchedulerKind {
    match kind {
        SchedulerKind::FixedPrefix(_) => SchedulerKind::FixedPrefix(k),
        other => other,
    }
}

fn kind_name(kind: SchedulerKind) -> &'static str {
    match kind {
        SchedulerKind::Lsp => "lsp",
        SchedulerKind::Full => "full",
        SchedulerKind::FixedPrefix(_) => "fixed_prefix",
        SchedulerKind::ScatteredMargin => "scattered_margin",
    }
}

/// `a..b` (half-open) or a comma-separated list.
fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = if let Some((a, b)) = value.split_once("..") {
        let a: u64 = parse("seeds", a.trim())?;
        let b: u64 = parse("seeds", b.trim())?;
        (a..b).collect()
    } else {
        value
            .split(',')
            .map(|s| parse("seeds", s.trim()))
            .collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(Error::config("seeds", "empty seed list"));
    }
    Ok(seeds)
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

impl RunConfig {
    /// The scheduler with `k` folded in.
    pub fn scheduler_kind(&self) -> SchedulerKind {
        resolve(self.scheduler, self.k)
    }

    pub fn scheduler_config(&self, kind: SchedulerKind, seed: u64) -> SchedulerConfig {
        SchedulerConfig {
            kind,
            bounds: self.bounds,
            snap: self.snap,
            gen_len: self.gen_len,
            seed,
            gather_penalty: self.gather_penalty,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        self.snap.validate()?;
        self.oracle.validate()?;
        self.ngram.validate()?;
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if self.gen_len == 0 {
            return Err(Error::config("gen-len", "must be at least 1"));
        }
        if self.schedulers.contains(&SchedulerKind::FixedPrefix(0)) {
            return Err(Error::config("schedulers", "fixed_prefix needs k >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "empty seed list"));
        }
        Ok(())
    }

    /// Set one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let key = key.as_str();
        let value = value.trim();
        match key {
            "scheduler" => {
                let kind: SchedulerKind = value.parse()?;
                if let SchedulerKind::FixedPrefix(k) = kind {
                    // bare `fixed_prefix` keeps whatever `k` says
                    if value.contains([':', '(']) {
                        self.k = k;
                    }
                }
                self.scheduler = kind;
            }
            "k" => self.k = parse(key, value)?,
            "alpha" => self.bounds.alpha = parse(key, value)?,
            "beta" => self.bounds.beta = parse(key, value)?,
            "tau-floor" => self.bounds.tau_floor = parse(key, value)?,
            "w" => self.snap.window = parse(key, value)?,
            "lmin" => self.snap.l_min = parse(key, value)?,
            "snap" => self.snap.mode = value.parse::<SnapMode>()?,
            "gen-len" => self.gen_len = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "gather-penalty" => self.gather_penalty = parse(key, value)?,
            "denoiser" => self.denoiser = value.parse()?,
            "mu" => self.oracle.mu = parse(key, value)?,
            "gamma" => self.oracle.gamma = parse(key, value)?,
            "sigma" => self.oracle.sigma = parse(key, value)?,
            "phi" => self.oracle.phi = parse(key, value)?,
            "flip-model" => {
                self.oracle.flip = match value {
                    "logistic" => FlipModel::Logistic { temperature: 1.0 },
                    "fixed" => FlipModel::Fixed { prob: 0.0 },
                    other => return Err(Error::config(key, format!("unknown flip model {other:?} (logistic, fixed)"))),
                }
            }
            "flip-prob" => {
                self.oracle.flip = FlipModel::Fixed {
                    prob: parse(key, value)?,
                }
            }
            "flip-temperature" => {
                self.oracle.flip = FlipModel::Logistic {
                    temperature: parse(key, value)?,
                }
            }
            "ngram-order" => self.ngram.order = parse(key, value)?,
            "ngram-k" => self.ngram.k = parse(key, value)?,
            "ngram-lambda" => self.ngram.lambda = parse(key, value)?,
            "corpus" => self.corpus = Some(PathBuf::from(value)),
            "prompt" => self.prompt = unescape(value),
            "delimiters" => self.delimiters = Some(value.split_whitespace().map(unescape).collect()),
            "out-dir" => self.out_dir = Some(PathBuf::from(value)),
            "trace" => self.trace = Some(PathBuf::from(value)),
            "summary" => self.summary = Some(PathBuf::from(value)),
            "csv" => self.csv = Some(PathBuf::from(value)),
            "schedulers" => {
                self.schedulers = value
                    .split(',')
                    .map(|s| s.trim().parse::<SchedulerKind>())
                    .collect::<Result<_>>()?;
                if self.schedulers.is_empty() {
                    return Err(Error::config(key, "empty scheduler list"));
                }
            }
            "seeds" => self.seeds = parse_seeds(value)?,
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    /// Apply `key = value` lines on top of the current values.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", n + 1), format!("expected `key = value`, got {line:?}"))
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_kv(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Text form that `from_kv` reads back to an equal config.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("scheduler", kind_name(self.scheduler).into());
        kv("k", self.k.to_string());
        kv("alpha", self.bounds.alpha.to_string());
        kv("beta", self.bounds.beta.to_string());
        kv("tau-floor", self.bounds.tau_floor.to_string());
        kv("w", self.snap.window.to_string());
        kv("lmin", self.snap.l_min.to_string());
        kv("snap", self.snap.mode.to_string());
        kv("gen-len", self.gen_len.to_string());
        kv("seed", self.seed.to_string());
        kv("gather-penalty", self.gather_penalty.to_string());
        kv("denoiser", self.denoiser.as_str().into());
        kv("mu", self.oracle.mu.to_string());
        kv("gamma", self.oracle.gamma.to_string());
        kv("sigma", self.oracle.sigma.to_string());
        kv("phi", self.oracle.phi.to_string());
        match self.oracle.flip {
            FlipModel::Fixed { prob } => kv("flip-prob", prob.to_string()),
            FlipModel::Logistic { temperature } => kv("flip-temperature", temperature.to_string()),
        }
        kv("ngram-order", self.ngram.order.to_string());
        kv("ngram-k", self.ngram.k.to_string());
        kv("ngram-lambda", self.ngram.lambda.to_string());
        for (k, p) in [
            ("corpus", &self.corpus),
            ("out-dir", &self.out_dir),
            ("trace", &self.trace),
            ("summary", &self.summary),
            ("csv", &self.csv),
        ] {
            if let Some(p) = p {
                kv(k, p.display().to_string());
            }
        }
        kv("prompt", escape(&self.prompt));
        if let Some(d) = &self.delimiters {
            kv("delimiters", d.iter().map(|s| escape(s)).collect::<Vec<_>>().join(" "));
        }
        let names: Vec<String> = self.schedulers.iter().map(|s| s.to_string()).collect();
        kv("schedulers", names.join(","));
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        kv("seeds", seeds.join(","));
        s
    }
}
