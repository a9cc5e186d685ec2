use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use lsp_core::harness::{self, RunConfig};
use lsp_core::metrics::MID_WINDOW;

/// Longest-stable-prefix decoding simulator.
#[derive(Parser)]
#[command(name = "lsp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode once; write a JSONL trace and a JSON summary, print the text.
    Run(Opts),
    /// Sweep schedulers x seeds and write a CSV table.
    Bench(Opts),
    /// Mid-window flip rate of an existing trace.
    Flips {
        trace: PathBuf,
        #[arg(long, default_value_t = MID_WINDOW.0)]
        lo: f64,
        #[arg(long, default_value_t = MID_WINDOW.1)]
        hi: f64,
    },
}

/// Every flag is a config key; flags override values from `--config`.
#[derive(Args)]
struct Opts {
    /// Flat `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// lsp, full, fixed_prefix, scattered_margin
    #[arg(long)]
    scheduler: Option<String>,
    /// Tokens per step for fixed_prefix.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    tau_floor: Option<String>,
    /// Snap window.
    #[arg(long)]
    w: Option<String>,
    #[arg(long)]
    lmin: Option<String>,
    /// snap, strict, off
    #[arg(long)]
    snap: Option<String>,
    #[arg(long)]
    gen_len: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    gather_penalty: Option<String>,
    /// oracle, ngram
    #[arg(long)]
    denoiser: Option<String>,
    #[arg(long)]
    mu: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    phi: Option<String>,
    /// logistic, fixed
    #[arg(long)]
    flip_model: Option<String>,
    #[arg(long)]
    flip_prob: Option<String>,
    #[arg(long)]
    flip_temperature: Option<String>,
    #[arg(long)]
    ngram_order: Option<String>,
    #[arg(long)]
    ngram_k: Option<String>,
    #[arg(long)]
    ngram_lambda: Option<String>,
    #[arg(long)]
    corpus: Option<String>,
    #[arg(long)]
    prompt: Option<String>,
    /// Space-separated surfaces; `\n` for newline.
    #[arg(long)]
    delimiters: Option<String>,
    /// Defaults to $LSP_OUT_DIR, then ./lsp-out.
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    trace: Option<String>,
    #[arg(long)]
    summary: Option<String>,
    #[arg(long)]
    csv: Option<String>,
    /// Comma-separated, e.g. lsp,scattered_margin,fixed_prefix:4
    #[arg(long)]
    schedulers: Option<String>,
    /// `a..b` or a comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
}

impl Opts {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let all = [
            ("scheduler", &self.scheduler),
            ("k", &self.k),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("tau-floor", &self.tau_floor),
            ("w", &self.w),
            ("lmin", &self.lmin),
            ("snap", &self.snap),
            ("gen-len", &self.gen_len),
            ("seed", &self.seed),
            ("gather-penalty", &self.gather_penalty),
            ("denoiser", &self.denoiser),
            ("mu", &self.mu),
            ("gamma", &self.gamma),
            ("sigma", &self.sigma),
            ("phi", &self.phi),
            ("flip-model", &self.flip_model),
            ("flip-prob", &self.flip_prob),
            ("flip-temperature", &self.flip_temperature),
            ("ngram-order", &self.ngram_order),
            ("ngram-k", &self.ngram_k),
            ("ngram-lambda", &self.ngram_lambda),
            ("corpus", &self.corpus),
            ("prompt", &self.prompt),
            ("delimiters", &self.delimiters),
            ("out-dir", &self.out_dir),
            ("trace", &self.trace),
            ("summary", &self.summary),
            ("csv", &self.csv),
            ("schedulers", &self.schedulers),
            ("seeds", &self.seeds),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }

    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_kv(&text).with_context(|| format!("in {}", path.display()))?;
        }
        for (k, v) in self.pairs() {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into())
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(opts) => {
            let cfg = opts.resolve()?;
            let report = harness::run(&cfg)?;
            let s = &report.summary;
            println!("{}", report.text);
            eprintln!(
                "{}: steps={} calls={} cost={} gather_events={} flip_rate={} exact_match={} perplexity={}",
                s.scheduler,
                s.total_steps,
                s.denoiser_calls,
                s.total_cost,
                s.gather_events,
                fmt_opt(s.flip_rate),
                fmt_opt(s.exact_match),
                fmt_opt(s.perplexity),
            );
            eprintln!("trace: {}", report.trace_path.display());
            eprintln!("summary: {}", report.summary_path.display());
        }
        Command::Bench(opts) => {
            let cfg = opts.resolve()?;
            let (report, path) = harness::bench_to_file(&cfg)?;
            println!(
                "{:<18} {:>5} {:>10} {:>12} {:>8} {:>10} {:>8}",
                "scheduler", "runs", "calls", "cost", "gathers", "flip_rate", "speedup"
            );
            for a in &report.aggregates {
                println!(
                    "{:<18} {:>5} {:>10.2} {:>12.0} {:>8.2} {:>10} {:>8.2}",
                    a.scheduler.to_string(),
                    a.runs,
                    a.calls.0,
                    a.cost.0,
                    a.gather_events.0,
                    fmt_opt(a.flip_rate.map(|f| f.0)),
                    a.speedup_vs_full.0,
                );
            }
            eprintln!("csv: {}", path.display());
        }
        Command::Flips { trace, lo, hi } => {
            let r = harness::flips(&trace, (lo, hi))?;
            println!(
                "flip_rate={:.4} window=[{}, {}] steps={} gen_len={}",
                r.rate, lo, hi, r.steps, r.gen_len
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
