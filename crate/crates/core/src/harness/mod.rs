//! Wiring for the command-line tool: build a denoiser from a config, run one
//! scheduler, sweep several, and write traces, summaries and CSV tables.

mod config;

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

pub use config::{DenoiserKind, RunConfig, KEYS};

use crate::denoiser::{Denoiser, NGramDenoiser, OracleDenoiser};
use crate::metrics::{self, mean_sd, RunSummary};
use crate::scheduler::{self, RunOutput, SchedulerKind, Trace};
use crate::seq::Tokenizer;
use crate::snapping::DelimiterSet;
use crate::{Error, Result, TokenId, BUNDLED_CORPUS};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "LSP_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "lsp-out";

pub const CSV_COLUMNS: [&str; 9] = [
    "scheduler",
    "seed",
    "steps",
    "calls",
    "cost",
    "gather_events",
    "flip_rate",
    "speedup_vs_full",
    "exact_match",
];

enum Model {
    Oracle(OracleDenoiser),
    Ngram(NGramDenoiser),
}

/// Tokenizer, prompt and denoiser shared by every run of one config.
pub struct Setup {
    pub tokenizer: Tokenizer,
    pub delimiters: DelimiterSet,
    pub prompt: Vec<TokenId>,
    model: Model,
}

/// Corpus lines joined by newlines and repeated until `len` tokens.
pub fn oracle_target(tokenizer: &Tokenizer, corpus: &str, len: usize) -> Result<Vec<TokenId>> {
    let newline = tokenizer
        .id("\n")
        .ok_or_else(|| Error::config("corpus", "tokenizer has no newline token"))?;
    let mut stream = Vec::new();
    for line in corpus.lines() {
        let ids = tokenizer.tokenize(line)?;
        if !ids.is_empty() {
            stream.extend(ids);
            stream.push(newline);
        }
    }
    if stream.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(stream.iter().copied().cycle().take(len).collect())
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let corpus = match &cfg.corpus {
            Some(path) => fs::read_to_string(path).map_err(|e| Error::io(format!("reading corpus {}", path.display()), e))?,
            None => BUNDLED_CORPUS.to_string(),
        };
        let mut tokenizer = Tokenizer::from_corpus(corpus.lines())?;
        if let Some(surfaces) = &cfg.delimiters {
            tokenizer.set_delimiters(surfaces)?;
        }
        let delimiters = DelimiterSet::from_tokenizer(&tokenizer);
        let prompt = tokenizer.tokenize(&cfg.prompt)?;
        let model = match cfg.denoiser {
            DenoiserKind::Oracle => {
                let target = oracle_target(&tokenizer, &corpus, cfg.gen_len)?;
                Model::Oracle(OracleDenoiser::new(target, tokenizer.vocab_size(), cfg.oracle)?)
            }
            DenoiserKind::Ngram => Model::Ngram(NGramDenoiser::fit(&tokenizer, corpus.lines(), cfg.ngram)?),
        };
        Ok(Setup {
            tokenizer,
            delimiters,
            prompt,
            model,
        })
    }

    pub fn denoiser(&self) -> &dyn Denoiser {
        match &self.model {
            Model::Oracle(d) => d,
            Model::Ngram(d) => d,
        }
    }

    /// Ground truth for oracle runs.
    pub fn target(&self) -> Option<&[TokenId]> {
        match &self.model {
            Model::Oracle(d) => Some(d.target()),
            Model::Ngram(_) => None,
        }
    }

    /// Run one scheduler and summarize it.
    pub fn run(&self, cfg: &RunConfig, kind: SchedulerKind, seed: u64) -> Result<(RunOutput, RunSummary)> {
        let scfg = cfg.scheduler_config(kind, seed);
        let out = scheduler::run(
            &self.prompt,
            self.denoiser(),
            &scfg,
            &self.delimiters,
            self.tokenizer.mask_id(),
        )
        .map_err(|e| Error::Run {
            scheduler: kind.to_string(),
            seed,
            source: Box::new(e),
        })?;
        let mut summary = RunSummary::from_run(&out, seed, self.target());
        if let Model::Ngram(ng) = &self.model {
            summary.perplexity = Some(ng.perplexity(&self.prompt, &out.generated));
        }
        Ok((out, summary))
    }

    pub fn text(&self, generated: &[TokenId]) -> String {
        let mut all = self.prompt.clone();
        all.extend_from_slice(generated);
        self.tokenizer.detokenize(&all)
    }
}

/// `out_dir` from the config, else the environment, else `lsp-out`.
pub fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    let f = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    Ok(BufWriter::new(f))
}

fn finish(mut w: BufWriter<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub struct RunReport {
    pub summary: RunSummary,
    pub text: String,
    pub trace_path: PathBuf,
    pub summary_path: PathBuf,
}

/// Run `cfg.scheduler` once with `cfg.seed`, writing the trace and summary.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    let setup = Setup::new(cfg)?;
    let (out, summary) = setup.run(cfg, cfg.scheduler_kind(), cfg.seed)?;
    let dir = out_dir(cfg);
    let trace_path = cfg.trace.clone().unwrap_or_else(|| dir.join("trace.jsonl"));
    let summary_path = cfg.summary.clone().unwrap_or_else(|| dir.join("summary.json"));

    let mut w = create(&trace_path)?;
    out.trace.write_jsonl(&mut w)?;
    finish(w, &trace_path)?;

    let mut w = create(&summary_path)?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    w.write_all(b"\n").map_err(|e| Error::io("writing summary", e))?;
    finish(w, &summary_path)?;

    Ok(RunReport {
        summary,
        text: setup.text(&out.generated),
        trace_path,
        summary_path,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub steps: usize,
    pub calls: usize,
    pub cost: u64,
    pub gather_events: usize,
    pub flip_rate: Option<f64>,
    pub speedup_vs_full: f64,
    pub exact_match: Option<f64>,
}

impl BenchRow {
    fn new(s: &RunSummary) -> Self {
        BenchRow {
            scheduler: s.scheduler,
            seed: s.seed,
            steps: s.total_steps,
            calls: s.denoiser_calls,
            cost: s.total_cost,
            gather_events: s.gather_events,
            flip_rate: s.flip_rate,
            // Full commits one token per call, so it always takes gen_len calls.
            speedup_vs_full: s.gen_len as f64 / s.denoiser_calls as f64,
            exact_match: s.exact_match,
        }
    }
}

/// Mean and sample standard deviation per column for one scheduler.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub scheduler: SchedulerKind,
    pub runs: usize,
    pub steps: (f64, f64),
    pub calls: (f64, f64),
    pub cost: (f64, f64),
    pub gather_events: (f64, f64),
    pub flip_rate: Option<(f64, f64)>,
    pub speedup_vs_full: (f64, f64),
    pub exact_match: Option<(f64, f64)>,
}

fn col(rows: &[&BenchRow], f: impl Fn(&BenchRow) -> f64) -> (f64, f64) {
    mean_sd(&rows.iter().map(|r| f(r)).collect::<Vec<_>>())
}

fn opt_col(rows: &[&BenchRow], f: impl Fn(&BenchRow) -> Option<f64>) -> Option<(f64, f64)> {
    let xs: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
    (!xs.is_empty()).then(|| mean_sd(&xs))
}

impl Aggregate {
    fn new(scheduler: SchedulerKind, rows: &[&BenchRow]) -> Self {
        Aggregate {
            scheduler,
            runs: rows.len(),
            steps: col(rows, |r| r.steps as f64),
            calls: col(rows, |r| r.calls as f64),
            cost: col(rows, |r| r.cost as f64),
            gather_events: col(rows, |r| r.gather_events as f64),
            flip_rate: opt_col(rows, |r| r.flip_rate),
            speedup_vs_full: col(rows, |r| r.speedup_vs_full),
            exact_match: opt_col(rows, |r| r.exact_match),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    /// Scheduler-major, then seed, in config order.
    pub rows: Vec<BenchRow>,
    pub aggregates: Vec<Aggregate>,
}

/// Run every `(scheduler, seed)` pair in `cfg.schedulers x cfg.seeds`.
pub fn bench(cfg: &RunConfig) -> Result<BenchReport> {
    if cfg.schedulers.len() < 2 {
        return Err(Error::config("schedulers", "bench needs at least two schedulers"));
    }
    let setup = Setup::new(cfg)?;
    let jobs: Vec<(SchedulerKind, u64)> = cfg
        .schedulers
        .iter()
        .flat_map(|&k| cfg.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(kind, seed)| setup.run(cfg, kind, seed).map(|(_, s)| BenchRow::new(&s)))
        .collect::<Result<Vec<_>>>()?;
    let aggregates = cfg
        .schedulers
        .iter()
        .map(|&k| {
            let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.scheduler == k).collect();
            Aggregate::new(k, &mine)
        })
        .collect();
    Ok(BenchReport { rows, aggregates })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_default()
}

fn pm((m, s): (f64, f64)) -> String {
    format!("{m:.4}±{s:.4}")
}

impl BenchReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", CSV_COLUMNS.join(","))?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{:.4},{}",
                r.scheduler,
                r.seed,
                r.steps,
                r.calls,
                r.cost,
                r.gather_events,
                opt(r.flip_rate),
                r.speedup_vs_full,
                opt(r.exact_match),
            )?;
        }
        for a in &self.aggregates {
            writeln!(
                w,
                "{},mean±sd,{},{},{},{},{},{},{}",
                a.scheduler,
                pm(a.steps),
                pm(a.calls),
                pm(a.cost),
                pm(a.gather_events),
                a.flip_rate.map(pm).unwrap_or_default(),
                pm(a.speedup_vs_full),
                a.exact_match.map(pm).unwrap_or_default(),
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

/// Run the sweep and write its CSV; returns the report and the CSV path.
pub fn bench_to_file(cfg: &RunConfig) -> Result<(BenchReport, PathBuf)> {
    let report = bench(cfg)?;
    let path = cfg.csv.clone().unwrap_or_else(|| out_dir(cfg).join("bench.csv"));
    let mut w = create(&path)?;
    report
        .write_csv(&mut w)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    finish(w, &path)?;
    Ok((report, path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlipReport {
    pub gen_len: usize,
    pub steps: usize,
    pub window: (f64, f64),
    pub rate: f64,
}

pub fn load_trace(path: &Path) -> Result<Trace> {
    let f = fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    Trace::read_jsonl(BufReader::new(f))
}

pub fn flips(path: &Path, window: (f64, f64)) -> Result<FlipReport> {
    let trace = load_trace(path)?;
    let rate = metrics::flip_rate(&trace, window)?;
    Ok(FlipReport {
        gen_len: trace.gen_len,
        steps: trace.len(),
        window,
        rate,
    })
}
