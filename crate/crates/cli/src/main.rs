//! `et`: ensemble uncertainty scoring, triage evaluation, and beta-model
//! verification from the command line.
//!
//! Exit codes: 0 success, 1 runtime/I-O failure, 2 usage error,
//! 3 theory-assertion failure.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use et_core::beta::{self, VerifyConfig, DEFAULT_SEED, MIN_TRIALS_FOR_ASSERTIONS};
use et_core::data::{DecisionConfig, EnsembleDataset, ValidationOptions};
use et_core::metrics::{score_dataset, KlMode, MetricKind, ReportMeta};
use et_core::triage::{
    evaluate_triage, score_histogram, severity_breakdown, write_severity_csv, write_triage_csv,
    Population, TriageConfig, TriageMetric, TriageTableRow,
};

use output::OutDir;

#[derive(Parser)]
#[command(
    name = "et",
    version,
    about = "Ensemble uncertainty scoring, false-negative triage evaluation, and beta-model verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed for all randomized commands (falls back to ET_SEED, then a
    /// built-in constant)
    #[arg(long, global = true, env = "ET_SEED")]
    seed: Option<u64>,

    /// Worker threads for simulation; 0 uses the available parallelism
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Compute per-example uncertainty scores
    Score(ScoreArgs),
    /// Evaluate uncertainty-informed triage of negative predictions
    Triage(TriageArgs),
    /// Severity-level breakdown of the top-ranked examples
    Severity(SeverityArgs),
    /// Histogram of uncertainty scores
    Histogram(HistogramArgs),
    /// Fit beta distributions to member predictions
    FitBeta(FitBetaArgs),
    /// Verify the beta-model ordering and misranking bounds
    VerifyTheory(VerifyArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV: example_id,label,severity,y_1,...,y_K
    #[arg(long)]
    input: PathBuf,

    /// Decision threshold tau, in (0, 1)
    #[arg(long, default_value_t = 0.5, value_parser = parse_tau)]
    tau: f64,

    /// Probability clamp applied before logarithms, in (0, 0.5)
    #[arg(long, default_value_t = 1e-12, value_parser = parse_epsilon)]
    epsilon: f64,

    /// Use the literal single-term KL formula instead of the full binary KL
    #[arg(long)]
    kl_literal: bool,

    /// Accept severity levels that contradict the label
    #[arg(long)]
    no_consistency_check: bool,
}

impl DataArgs {
    fn load(&self) -> Result<EnsembleDataset<f64>> {
        let opts = ValidationOptions {
            check_severity_consistency: !self.no_consistency_check,
        };
        EnsembleDataset::load_csv(&self.input, &opts)
            .with_context(|| format!("cannot load {}", self.input.display()))
    }

    fn decision(&self) -> Result<DecisionConfig<f64>> {
        Ok(DecisionConfig::new(self.tau, self.epsilon)?)
    }

    fn kl_mode(&self) -> KlMode {
        if self.kl_literal {
            KlMode::Literal
        } else {
            KlMode::Full
        }
    }
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Metrics to score (comma-separated: mean, entropy, var, kl)
    #[arg(long = "metric", value_delimiter = ',', default_value = "mean", value_parser = parse_metric)]
    metrics: Vec<MetricKind>,

    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TriageArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Uncertain-negative rates, percent (comma-separated)
    #[arg(long = "q", value_delimiter = ',', required = true, value_parser = parse_q)]
    q: Vec<f64>,

    /// Selection metrics (mean, entropy, var, kl, union)
    #[arg(long = "metrics", value_delimiter = ',', default_value = "mean,var,union", value_parser = parse_triage_metric)]
    metrics: Vec<TriageMetric>,

    /// Ensemble tag recorded in the table (defaults to the input file stem)
    #[arg(long)]
    tag: Option<String>,

    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SeverityArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Metrics to rank by
    #[arg(long = "metric", value_delimiter = ',', default_value = "mean", value_parser = parse_metric)]
    metrics: Vec<MetricKind>,

    /// Top percentages to break down (comma-separated, each in (0, 100])
    #[arg(long = "theta", value_delimiter = ',', default_value = "1,2,5,10", value_parser = parse_theta)]
    theta: Vec<f64>,

    /// Rank all examples or predicted negatives only
    #[arg(long, value_enum, default_value_t = PopulationArg::All)]
    population: PopulationArg,

    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HistogramArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Metrics to histogram
    #[arg(long = "metric", value_delimiter = ',', default_value = "mean", value_parser = parse_metric)]
    metrics: Vec<MetricKind>,

    /// Number of bins
    #[arg(long, default_value_t = 50)]
    bins: usize,

    /// Score range as lo,hi; scores outside are clipped into the end bins
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    range: Vec<f64>,

    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitBetaArgs {
    /// Input CSV: example_id,label,severity,y_1,...,y_K
    #[arg(long)]
    input: PathBuf,

    /// Fit only this example
    #[arg(long)]
    example_id: Option<String>,

    /// Constrain alpha + beta to this fixed sum
    #[arg(long)]
    constrain_sum: Option<f64>,

    /// Accept severity levels that contradict the label
    #[arg(long)]
    no_consistency_check: bool,

    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Shape parameter of the less ambiguous input
    #[arg(long, default_value_t = 2.0)]
    alpha_i: f64,

    /// Shape parameter of the more ambiguous input (alpha_i < alpha_j <= c/2)
    #[arg(long, default_value_t = 4.0)]
    alpha_j: f64,

    /// Shared concentration c = alpha + beta
    #[arg(long, default_value_t = 10.0)]
    concentration: f64,

    /// Decision threshold tau, in (0, 1)
    #[arg(long, default_value_t = 0.5, value_parser = parse_tau)]
    tau: f64,

    /// Ensemble sizes to simulate (strictly increasing)
    #[arg(long = "n-grid", value_delimiter = ',', default_value = "5,10,20,50")]
    n_grid: Vec<usize>,

    /// Monte Carlo trials per grid cell
    #[arg(long, default_value_t = 100_000)]
    trials: u64,

    /// Ensemble size for the infinite-limit agreement check
    #[arg(long, default_value_t = 10_000)]
    corollary_n: usize,

    /// Trials for the agreement check
    #[arg(long, default_value_t = 10_000)]
    corollary_trials: u64,

    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PopulationArg {
    All,
    Negatives,
}

impl From<PopulationArg> for Population {
    fn from(p: PopulationArg) -> Self {
        match p {
            PopulationArg::All => Population::All,
            PopulationArg::Negatives => Population::Negatives,
        }
    }
}

fn parse_tau(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("tau must lie in (0, 1), got {v}"))
    }
}

fn parse_epsilon(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if v > 0.0 && v < 0.5 {
        Ok(v)
    } else {
        Err(format!("epsilon must lie in (0, 0.5), got {v}"))
    }
}

fn parse_q(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if (0.0..=100.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("q must lie in [0, 100], got {v}"))
    }
}

fn parse_theta(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if v > 0.0 && v <= 100.0 {
        Ok(v)
    } else {
        Err(format!("theta must lie in (0, 100], got {v}"))
    }
}

fn parse_metric(s: &str) -> Result<MetricKind, String> {
    MetricKind::from_str(s).map_err(|e| e.to_string())
}

fn parse_triage_metric(s: &str) -> Result<TriageMetric, String> {
    TriageMetric::from_str(s).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Manifest<P: Serialize> {
    command: &'static str,
    version: &'static str,
    threads: usize,
    params: P,
    outputs: Vec<String>,
}

fn manifest<P: Serialize>(
    command: &'static str,
    threads: usize,
    params: P,
    out: &OutDir,
) -> Manifest<P> {
    Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        threads,
        params,
        outputs: out.written().to_vec(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // a pool can already exist when invoked from tests; that is fine
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let usage = matches!(
                err.downcast_ref::<et_core::Error>(),
                Some(et_core::Error::InvalidParameter(_))
            );
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let threads = cli.threads;
    match cli.command {
        Command::Score(args) => cmd_score(args, threads),
        Command::Triage(args) => cmd_triage(args, threads),
        Command::Severity(args) => cmd_severity(args, threads),
        Command::Histogram(args) => cmd_histogram(args, threads),
        Command::FitBeta(args) => cmd_fit_beta(args, threads),
        Command::VerifyTheory(args) => cmd_verify_theory(args, seed, threads),
    }
}

#[derive(Serialize)]
struct ScoreParams {
    input: String,
    tau: f64,
    epsilon: f64,
    kl_mode: KlMode,
    metrics: Vec<MetricKind>,
}

fn cmd_score(args: ScoreArgs, threads: usize) -> Result<ExitCode> {
    let dataset = args.data.load()?;
    let cfg = args.data.decision()?;
    let kl_mode = args.data.kl_mode();

    // score every requested metric before writing anything, so a late
    // failure cannot leave some metrics on disk and others missing
    let reports = args
        .metrics
        .iter()
        .map(|&metric| Ok((metric, score_dataset(&dataset, metric, &cfg, kl_mode)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut out = OutDir::create(&args.out)?;
    for (metric, report) in &reports {
        out.write_file(
            &format!("scores_{metric}.csv"),
            |w| Ok(report.write_csv(w)?),
        )?;
        out.write_file(&format!("scores_{metric}.json"), |w| {
            Ok(report.write_json(w)?)
        })?;
        let meta = ReportMeta {
            metric: *metric,
            threshold: cfg.threshold(),
            clamp_epsilon: cfg.clamp_epsilon(),
            kl_mode,
            n_examples: report.len(),
        };
        out.write_json(&format!("scores_{metric}.meta.json"), &meta)?;
    }

    let params = ScoreParams {
        input: args.data.input.display().to_string(),
        tau: cfg.threshold(),
        epsilon: cfg.clamp_epsilon(),
        kl_mode,
        metrics: args.metrics.clone(),
    };
    let m = manifest("score", threads, params, &out);
    out.write_manifest(&m)?;
    println!(
        "scored {} examples under {} metric(s) -> {}",
        dataset.len(),
        args.metrics.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct TriageParams {
    input: String,
    tag: String,
    tau: f64,
    epsilon: f64,
    kl_mode: KlMode,
    q: Vec<f64>,
    metrics: Vec<String>,
}

fn cmd_triage(args: TriageArgs, threads: usize) -> Result<ExitCode> {
    let dataset = args.data.load()?;
    let decision = args.data.decision()?;
    let kl_mode = args.data.kl_mode();
    let tag = args.tag.clone().unwrap_or_else(|| {
        args.data
            .input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_owned())
    });

    let mut rows = Vec::new();
    for &metric in &args.metrics {
        for &q in &args.q {
            let mut cfg = TriageConfig::new(q, metric, decision)?;
            cfg.kl_mode = kl_mode;
            let outcome = evaluate_triage(&dataset, &cfg)?;
            rows.push(TriageTableRow::new(&tag, q, metric, &outcome));
        }
    }

    let mut out = OutDir::create(&args.out)?;
    out.write_file("triage.csv", |w| Ok(write_triage_csv(&rows, w)?))?;
    out.write_json("triage.json", &rows)?;
    let params = TriageParams {
        input: args.data.input.display().to_string(),
        tag,
        tau: decision.threshold(),
        epsilon: decision.clamp_epsilon(),
        kl_mode,
        q: args.q.clone(),
        metrics: args.metrics.iter().map(|m| m.name().to_owned()).collect(),
    };
    let m = manifest("triage", threads, params, &out);
    out.write_manifest(&m)?;
    println!(
        "evaluated {} (metric, q) cells -> {}",
        rows.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SeverityParams {
    input: String,
    tau: f64,
    epsilon: f64,
    population: Population,
    theta: Vec<f64>,
    metrics: Vec<MetricKind>,
}

fn cmd_severity(args: SeverityArgs, threads: usize) -> Result<ExitCode> {
    let dataset = args.data.load()?;
    let cfg = args.data.decision()?;
    let kl_mode = args.data.kl_mode();
    let population: Population = args.population.into();

    let mut rows = Vec::new();
    for &metric in &args.metrics {
        let report = score_dataset(&dataset, metric, &cfg, kl_mode)?;
        for &theta in &args.theta {
            let breakdown = severity_breakdown(&dataset, &report, theta, population, &cfg)?;
            rows.push((metric.name().to_owned(), breakdown));
        }
    }

    let mut out = OutDir::create(&args.out)?;
    out.write_file("severity.csv", |w| Ok(write_severity_csv(&rows, w)?))?;
    out.write_json("severity.json", &rows)?;
    let params = SeverityParams {
        input: args.data.input.display().to_string(),
        tau: cfg.threshold(),
        epsilon: cfg.clamp_epsilon(),
        population,
        theta: args.theta.clone(),
        metrics: args.metrics.clone(),
    };
    let m = manifest("severity", threads, params, &out);
    out.write_manifest(&m)?;
    println!(
        "computed {} severity breakdowns -> {}",
        rows.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct HistogramParams {
    input: String,
    tau: f64,
    epsilon: f64,
    bins: usize,
    range: (f64, f64),
    metrics: Vec<MetricKind>,
}

fn cmd_histogram(args: HistogramArgs, threads: usize) -> Result<ExitCode> {
    if args.range.len() != 2 {
        return Err(et_core::Error::InvalidParameter(format!(
            "--range takes exactly lo,hi; got {} values",
            args.range.len()
        ))
        .into());
    }
    let (lo, hi) = (args.range[0], args.range[1]);
    let dataset = args.data.load()?;
    let cfg = args.data.decision()?;
    let kl_mode = args.data.kl_mode();

    let histograms = args
        .metrics
        .iter()
        .map(|&metric| {
            let report = score_dataset(&dataset, metric, &cfg, kl_mode)?;
            Ok((metric, score_histogram(&report, args.bins, lo, hi)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = OutDir::create(&args.out)?;
    for (metric, histogram) in &histograms {
        out.write_file(&format!("histogram_{metric}.csv"), |w| {
            Ok(histogram.write_csv(w)?)
        })?;
    }
    let params = HistogramParams {
        input: args.data.input.display().to_string(),
        tau: cfg.threshold(),
        epsilon: cfg.clamp_epsilon(),
        bins: args.bins,
        range: (lo, hi),
        metrics: args.metrics.clone(),
    };
    let m = manifest("histogram", threads, params, &out);
    out.write_manifest(&m)?;
    println!(
        "wrote {} histogram(s) -> {}",
        args.metrics.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct FitRow {
    example_id: String,
    n_members: usize,
    alpha: Option<f64>,
    beta: Option<f64>,
    status: String,
}

#[derive(Serialize)]
struct FitParams {
    input: String,
    example_id: Option<String>,
    constrain_sum: Option<f64>,
}

fn cmd_fit_beta(args: FitBetaArgs, threads: usize) -> Result<ExitCode> {
    if let Some(c) = args.constrain_sum {
        if !c.is_finite() || c <= 0.0 {
            return Err(et_core::Error::InvalidParameter(format!(
                "--constrain-sum must be positive, got {c}"
            ))
            .into());
        }
    }
    let opts = ValidationOptions {
        check_severity_consistency: !args.no_consistency_check,
    };
    let dataset = EnsembleDataset::<f64>::load_csv(&args.input, &opts)
        .with_context(|| format!("cannot load {}", args.input.display()))?;

    let records: Vec<_> = match &args.example_id {
        Some(id) => {
            let found = dataset
                .records()
                .iter()
                .find(|r| r.example_id() == id)
                .ok_or_else(|| anyhow!("example {id:?} not found in {}", args.input.display()))?;
            vec![found]
        }
        None => dataset.records().iter().collect(),
    };

    let rows: Vec<FitRow> = records
        .iter()
        .map(|record| {
            let (alpha, beta, status) = if record.ensemble_size() < 2 {
                (None, None, "too-few-members".to_owned())
            } else {
                match beta::fit_beta(record.members(), args.constrain_sum) {
                    Ok((a, b)) => (Some(a), Some(b), "ok".to_owned()),
                    Err(et_core::Error::ZeroVariance) => (None, None, "zero-variance".to_owned()),
                    Err(et_core::Error::Unfittable { .. }) => (None, None, "unfittable".to_owned()),
                    Err(e) => (None, None, format!("error: {e}")),
                }
            };
            FitRow {
                example_id: record.example_id().to_owned(),
                n_members: record.ensemble_size(),
                alpha,
                beta,
                status,
            }
        })
        .collect();

    let mut out = OutDir::create(&args.out)?;
    out.write_file("fits.csv", |w| {
        writeln!(w, "example_id,n_members,alpha,beta,status")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.example_id,
                r.n_members,
                r.alpha.map(|v| v.to_string()).unwrap_or_default(),
                r.beta.map(|v| v.to_string()).unwrap_or_default(),
                r.status
            )?;
        }
        Ok(())
    })?;
    out.write_json("fits.json", &rows)?;
    let params = FitParams {
        input: args.input.display().to_string(),
        example_id: args.example_id.clone(),
        constrain_sum: args.constrain_sum,
    };
    let m = manifest("fit-beta", threads, params, &out);
    out.write_manifest(&m)?;
    let fitted = rows.iter().filter(|r| r.status == "ok").count();
    println!(
        "fitted {}/{} records -> {}",
        fitted,
        rows.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct VerifyParams {
    alpha_i: f64,
    alpha_j: f64,
    concentration: f64,
    tau: f64,
    n_grid: Vec<usize>,
    trials: u64,
    corollary_n: usize,
    corollary_trials: u64,
    seed: u64,
}

fn cmd_verify_theory(args: VerifyArgs, seed: u64, threads: usize) -> Result<ExitCode> {
    let config = VerifyConfig::<f64> {
        alpha_i: args.alpha_i,
        alpha_j: args.alpha_j,
        concentration: args.concentration,
        tau: args.tau,
        n_grid: args.n_grid.clone(),
        trials: args.trials,
        seed,
        corollary_ensemble_size: args.corollary_n,
        corollary_trials: args.corollary_trials,
    };
    let report = beta::run_verification(&config)?;

    if report.assertions_skipped {
        eprintln!(
            "warning: standard errors too large below {MIN_TRIALS_FOR_ASSERTIONS} trials \
             (got trials={}, corollary_trials={}); assertions skipped",
            args.trials, args.corollary_trials
        );
    }
    for a in &report.assertions {
        println!(
            "{} {}: {}",
            if a.pass { "PASS" } else { "FAIL" },
            a.name,
            a.detail
        );
    }

    let mut out = OutDir::create(&args.out)?;
    out.write_json("report.json", &report)?;
    out.write_file("report.csv", |w| Ok(report.write_csv(w)?))?;
    out.write_file("assertions.csv", |w| Ok(report.write_assertions_csv(w)?))?;
    let params = VerifyParams {
        alpha_i: args.alpha_i,
        alpha_j: args.alpha_j,
        concentration: args.concentration,
        tau: args.tau,
        n_grid: args.n_grid.clone(),
        trials: args.trials,
        corollary_n: args.corollary_n,
        corollary_trials: args.corollary_trials,
        seed,
    };
    let m = manifest("verify-theory", threads, params, &out);
    out.write_manifest(&m)?;

    match report.all_passed {
        Some(true) | None => Ok(ExitCode::SUCCESS),
        Some(false) => {
            eprintln!("error: one or more theory assertions failed");
            Ok(ExitCode::from(3))
        }
    }
}
