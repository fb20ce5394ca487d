use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use modelbandit::reasoning::{HttpLlmClient, LlmClient};
use modelbandit::{
    benchmark_select, brute_force, generate_synthetic, load_pool, load_trace, propose_weights, run_aggregate, Dataset,
    EvalBackend, ExperimentConfig, MetricWeights, ModelPool, RemoteBackend, Silent, Strategy, SyntheticSpec,
};
use modelbandit_service::AppState;

#[derive(Parser)]
#[command(
    name = "modelbandit",
    version,
    about = "Budgeted multi-objective selection of pretrained models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propose trade-off weights for a use-case description.
    Reason(ReasonArgs),
    /// Run a budgeted bandit experiment and print the aggregate report.
    Run(RunArgs),
    /// Evaluate every model on every sample.
    BruteForce(BruteForceArgs),
    /// Rank models by recorded benchmark accuracy, without evaluating.
    BenchSelect(BenchSelectArgs),
    /// Write a synthetic pool and complete trace.
    GenSynthetic(GenSyntheticArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct ReasonArgs {
    #[arg(long)]
    prompt: String,
    /// Number of LLM queries to average.
    #[arg(long, default_value_t = 100)]
    samples: u32,
    /// Use the built-in keyword table; never contact the LLM endpoint.
    #[arg(long)]
    offline: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Where correctness bits come from.
#[derive(Args)]
struct Source {
    /// Pool file (JSON array or CSV). Optional with --remote.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Trace CSV with header model_id,sample_id,correct.
    #[arg(long, conflicts_with = "remote")]
    trace: Option<PathBuf>,
    /// Base URL of a remote evaluator.
    #[arg(long, requires = "dataset")]
    remote: Option<String>,
    /// Sample ids for --remote, one per line.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value = "thompson")]
    strategy: Strategy,
    #[arg(long)]
    budget: u64,
    /// accuracy,size,complexity
    #[arg(long)]
    weights: MetricWeights,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    repetitions: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BruteForceArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    weights: MetricWeights,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchSelectArgs {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    weights: MetricWeights,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenSyntheticArgs {
    #[arg(long, default_value_t = 71)]
    arms: usize,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Planted per-arm accuracies; overrides --arms.
    #[arg(long, value_delimiter = ',')]
    accuracies: Option<Vec<f64>>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Write each finished report here as <id>.json.
    #[arg(long)]
    persist_dir: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_source(source: &Source) -> Result<(ModelPool, Box<dyn EvalBackend>, Dataset)> {
    if let Some(url) = &source.remote {
        let remote = RemoteBackend::new(url.clone());
        let pool = match &source.pool {
            Some(p) => load_pool(&read(p)?)?,
            None => remote.fetch_pool()?,
        };
        let ids_path = source.dataset.as_deref().expect("clap enforces --dataset");
        let ids = read(ids_path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        return Ok((pool, Box::new(remote), Dataset::new(ids)?));
    }
    let Some(pool_path) = &source.pool else {
        bail!("--pool is required unless --remote is given");
    };
    let Some(trace_path) = &source.trace else {
        bail!("one of --trace or --remote is required");
    };
    let pool = load_pool(&read(pool_path)?).with_context(|| format!("pool {}", pool_path.display()))?;
    let (table, dataset) = load_trace(&read(trace_path)?).with_context(|| format!("trace {}", trace_path.display()))?;
    if !table.covers(&pool, &dataset) {
        bail!(
            "trace {} does not cover every pool model on every sample",
            trace_path.display()
        );
    }
    Ok((pool, Box::new(table), dataset))
}

fn reason(args: ReasonArgs) -> Result<()> {
    let client = if args.offline { None } else { HttpLlmClient::from_env() };
    let proposal = propose_weights(&args.prompt, args.samples, client.as_ref().map(|c| c as &dyn LlmClient))?;
    emit(
        &modelbandit::canonical::to_canonical_string(&proposal),
        args.out.as_deref(),
    )
}

fn run(args: RunArgs) -> Result<()> {
    let config = ExperimentConfig {
        strategy: args.strategy,
        budget: args.budget,
        epsilon: args.epsilon,
        seed: args.seed,
        weights: args.weights,
        repetitions: args.repetitions,
    };
    config.validate()?;
    let (pool, backend, dataset) = load_source(&args.source)?;
    let report = run_aggregate(&config, &pool, backend.as_ref(), &dataset, &Silent)?;
    emit(&report.to_canonical_string(), args.out.as_deref())
}

fn brute(args: BruteForceArgs) -> Result<()> {
    let (pool, backend, dataset) = load_source(&args.source)?;
    let report = brute_force(&pool, backend.as_ref(), &dataset, &args.weights)?;
    emit(&report.to_canonical_string(), args.out.as_deref())
}

fn bench_select(args: BenchSelectArgs) -> Result<()> {
    let pool = load_pool(&read(&args.pool)?)?;
    emit(
        &benchmark_select(&pool, &args.weights).to_canonical_string(),
        args.out.as_deref(),
    )
}

fn gen_synthetic(args: GenSyntheticArgs) -> Result<()> {
    let spec = match args.accuracies {
        Some(accuracies) => SyntheticSpec {
            accuracies,
            samples: args.samples,
            seed: args.seed,
        },
        None => SyntheticSpec::size_correlated(args.arms, args.samples, args.seed),
    };
    let fx = generate_synthetic(&spec)?;
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let pool_path = args.out_dir.join("pool.json");
    let trace_path = args.out_dir.join("trace.csv");
    fs::write(&pool_path, fx.pool.to_canonical_string())?;
    fs::write(&trace_path, fx.table.to_csv())?;
    let summary = serde_json::json!({
        "arms": fx.pool.len(),
        "samples": fx.dataset.len(),
        "seed": spec.seed,
        "accuracies": spec.accuracies,
        "pool": pool_path.display().to_string(),
        "trace": trace_path.display().to_string(),
    });
    emit(&modelbandit::canonical::to_canonical_string(&summary), None)
}

fn serve(args: ServeArgs) -> Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    if let Some(dir) = &args.persist_dir {
        fs::create_dir_all(dir)?;
    }
    let llm = HttpLlmClient::from_env().map(|c| Arc::new(c) as Arc<dyn LlmClient + Send + Sync>);
    let state = AppState::new(args.persist_dir, llm);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
            .await
            .with_context(|| format!("binding {}:{}", args.host, args.port))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        modelbandit_service::serve(listener, state).await?;
        Ok(())
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default();
            eprintln!("error: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Reason(a) => reason(a),
        Command::Run(a) => run(a),
        Command::BruteForce(a) => brute(a),
        Command::BenchSelect(a) => bench_select(a),
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
