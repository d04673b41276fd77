use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use glmd::casestudy::{read_labeled_file, run_case_study, CaseStudyOptions};
use glmd::config::ExperimentConfig;
use glmd::net::{self, parse_seconds, Timeouts};
use glmd::{experiment, report, UsageError};
use glmd_core::datagen::{generate_dataset, generate_shard, partition_shards, true_beta, SimDesign};
use glmd_core::distributed::{global_fit, run_method, Shard};
use glmd_core::spline::CASE_STUDY_FEATURES;
use glmd_core::{Dataset, DistributedEstimate, FamilyKind, FitOptions, GlmFamily, InProcessTransport, Method};

#[derive(Parser)]
#[command(name = "glmd", version, about = "Distributed maximum-likelihood estimation for GLMs")]
struct Cli {
    /// Log verbosity (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo sweep and write trials, metrics and summary CSVs.
    Simulate(SimulateArgs),
    /// Fit one synthetic dataset with one method and print the estimate.
    Fit(FitArgs),
    /// Coordinate K workers over TCP.
    Serve(ServeArgs),
    /// Join a coordinator as one worker.
    Work(WorkArgs),
    /// Spline-expanded fit of a labeled CSV with holdout AUC.
    Casestudy(CaseStudyArgs),
    /// Recompute metrics and summary from a trials CSV.
    Report(ReportArgs),
}

fn parse_timeout(s: &str) -> Result<Duration, String> {
    parse_seconds(s)
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    model: Option<FamilyKind>,
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated dimensions.
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<usize>>,
    /// Comma-separated shard counts.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Leave non-converged trials out of the metrics.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long, default_value = "probit")]
    model: FamilyKind,
    #[arg(long, default_value_t = 1 << 14)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    p: usize,
    #[arg(long, default_value_t = 0.75)]
    rho: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value = "one_step")]
    method: Method,
}

#[derive(Args)]
struct TimeoutArgs {
    /// Seconds to wait for all workers to connect.
    #[arg(long, env = net::HANDSHAKE_TIMEOUT_ENV, default_value = "30", value_parser = parse_timeout)]
    handshake_timeout: Duration,
    /// Seconds to wait for a round's replies.
    #[arg(long, env = net::ROUND_TIMEOUT_ENV, default_value = "300", value_parser = parse_timeout)]
    round_timeout: Duration,
}

impl TimeoutArgs {
    fn timeouts(&self) -> Timeouts {
        Timeouts {
            handshake: self.handshake_timeout,
            round: self.round_timeout,
        }
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value = "one_step")]
    method: Method,
    #[arg(long, default_value = "probit")]
    model: FamilyKind,
    #[command(flatten)]
    timeouts: TimeoutArgs,
}

#[derive(Args)]
struct WorkArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    connect: String,
    #[arg(long)]
    worker_id: u32,
    /// Shard count of the generated dataset.
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    data: DataArgs,
    /// Read the shard from a `label,x1,...` file instead of generating it.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Row range `start..end` (0-based, end exclusive) of `--input`.
    #[arg(long)]
    rows: Option<String>,
    #[command(flatten)]
    timeouts: TimeoutArgs,
}

#[derive(Args)]
struct CaseStudyArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    holdout_fraction: f64,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value = "one_step")]
    method: Method,
    #[arg(long, default_value = "logistic")]
    model: FamilyKind,
    #[arg(long)]
    jobs: Option<usize>,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    strict: bool,
}

fn estimate_json(est: &DistributedEstimate) -> serde_json::Value {
    json!({
        "method": est.method.to_string(),
        "estimate": est.estimate,
        "rounds_of_communication": est.rounds_of_communication,
        "all_converged": est.all_converged(),
    })
}

fn simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.base_seed = v;
    }
    if let Some(v) = a.output {
        cfg.output_dir = v;
    }
    if let Some(v) = a.model {
        cfg.model = v;
    }
    if let Some(v) = a.n {
        cfg.n = v;
    }
    if let Some(v) = a.p {
        cfg.p_list = v;
    }
    if let Some(v) = a.k {
        cfg.k_list = v;
    }
    if let Some(v) = a.t {
        cfg.t = v;
    }
    if let Some(v) = a.rho {
        cfg.rho = v;
    }
    if let Some(v) = a.methods {
        cfg.methods = v;
    }
    cfg.strict |= a.strict;
    cfg.validate()?;
    experiment::run_and_write(&cfg, a.jobs)?;
    println!("{}", cfg.output_dir.display());
    Ok(())
}

fn sim_design(d: &DataArgs, k: usize) -> Result<SimDesign, UsageError> {
    let design = SimDesign {
        model: d.model,
        n: d.n,
        p: d.p,
        rho: d.rho,
        seed: d.seed,
        k,
    };
    design.validate().map_err(|e| UsageError(e.to_string()))?;
    if k > d.n / d.p {
        return Err(UsageError(format!("K = {k} leaves shards smaller than p = {}", d.p)));
    }
    Ok(design)
}

fn fit(a: FitArgs) -> anyhow::Result<()> {
    let design = sim_design(&a.data, a.k)?;
    let family = GlmFamily::from(a.data.model);
    let data = generate_dataset(&design)?;
    let opts = FitOptions::default();
    let est = if a.method == Method::Global {
        global_fit(family, &partition_shards(&data, 1)?, &opts)?
    } else {
        let shards = partition_shards(&data, a.k)?;
        run_method(a.method, &mut InProcessTransport::new(family, &shards, opts))?
    };
    let mut out = estimate_json(&est);
    out["true_beta"] = json!(true_beta(a.data.model, a.data.p));
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    if a.k == 0 {
        return Err(UsageError("--k must be at least 1".into()).into());
    }
    if a.method == Method::Global {
        return Err(UsageError("the global method needs pooled data; pick a distributed method".into()).into());
    }
    let listener = TcpListener::bind(&a.listen).with_context(|| format!("binding {}", a.listen))?;
    log::info!("listening on {}", listener.local_addr()?);
    let est = net::coordinator_run(&listener, a.model, a.k, a.method, a.timeouts.timeouts())?;
    println!("{}", serde_json::to_string(&estimate_json(&est))?);
    Ok(())
}

fn parse_range(s: &str) -> Result<std::ops::Range<usize>, UsageError> {
    let bad = || UsageError(format!("--rows expects start..end, got {s:?}"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let (a, b) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a >= b {
        return Err(bad());
    }
    Ok(a..b)
}

fn work(a: WorkArgs) -> anyhow::Result<()> {
    let shard = match &a.input {
        Some(path) => {
            let data = read_labeled_file(path, None)?;
            let rows = match &a.rows {
                Some(r) => parse_range(r)?,
                None => 0..data.n(),
            };
            if rows.end > data.n() {
                return Err(UsageError(format!("--rows ends past the {} records", data.n())).into());
            }
            let part = data.select(&rows.collect::<Vec<_>>());
            Shard {
                worker_id: a.worker_id,
                data: Dataset::new(part.features, part.labels)?,
            }
        }
        None => {
            let k = a.k.ok_or_else(|| UsageError("--k is required for a generated shard".into()))?;
            if a.worker_id as usize >= k {
                return Err(UsageError(format!("--worker-id must be below --k = {k}")).into());
            }
            generate_shard(&sim_design(&a.data, k)?, a.worker_id)?
        }
    };
    let (method, beta) = net::worker_run(
        &a.connect,
        a.data.model,
        &shard,
        &FitOptions::default(),
        a.timeouts.timeouts(),
    )?;
    println!(
        "{}",
        serde_json::to_string(&json!({"worker_id": a.worker_id, "method": method.to_string(), "estimate": beta}))?
    );
    Ok(())
}

fn casestudy(a: CaseStudyArgs) -> anyhow::Result<()> {
    let data = read_labeled_file(&a.input, Some(CASE_STUDY_FEATURES))?;
    let opts = CaseStudyOptions {
        family: a.model,
        method: a.method,
        k: a.k,
        seed: a.seed,
        holdout_fraction: a.holdout_fraction,
        trials: a.trials,
        ..CaseStudyOptions::default()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()?;
    let r = pool.install(|| run_case_study(&data, &opts))?;
    let out = json!({
        "dim": r.dim,
        "trials": r.aucs.len(),
        "mean_auc": r.mean_auc(),
        "aucs": r.aucs,
        "se": r.se,
        "nonconverged_trials": r.nonconverged_trials,
    });
    let text = serde_json::to_string_pretty(&out)?;
    if let Some(path) = &a.output {
        std::fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn report_cmd(a: ReportArgs) -> anyhow::Result<()> {
    let (model, records) = report::read_trials(&a.input).map_err(|e| UsageError(format!("{e:#}")))?;
    std::fs::create_dir_all(&a.output)?;
    experiment::write_reports(&a.output, model, &records, a.strict)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Serve(a) => serve(a),
        Command::Work(a) => work(a),
        Command::Casestudy(a) => casestudy(a),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(glmd::exit_code(&e))
        }
    }
}
