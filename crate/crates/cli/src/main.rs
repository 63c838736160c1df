mod config;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mlr_core::agent::RunConfig;
use mlr_core::clock::SystemClock;
use mlr_core::corpus::{
    load_paper_dir, parse_paper, HttpLiterature, LiteratureProvider, ResearchPaper, StubLiterature,
    DEFAULT_CONTEXT_BUDGET, DEFAULT_RECENT_WORKS,
};
use mlr_core::evaluation::{
    score_idea, scorecard_records, RecordedTable, RunMetrics, Target, TrialResult, DEFAULT_SUCCESS_THRESHOLD,
};
use mlr_core::harness::{render_transcript, run_trial, TrialEnv, TrialReport};
use mlr_core::idea::{generate_idea, refine_idea, IdeaFile};
use mlr_core::llm::{
    Gateway, HttpChatProvider, RetryPolicy, ScriptedProvider, DEFAULT_TOKEN_BUDGET,
};
use mlr_core::store::RunStore;
use mlr_server::AppState;
use serde::{Deserialize, Serialize};

use config::{Config, ProviderConfig};

/// Invalid invocation detected after argument parsing; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "mlr", version, about = "Generate research ideas and run experiment agents")]
struct Cli {
    /// Configuration file with provider, literature, store and server defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a paper into its sections and print it as JSON.
    Ingest(IngestArgs),
    /// Generate (or refine) a research idea from a paper.
    Idea(IdeaArgs),
    /// Run experiment trials for an idea on a task package.
    Run(RunArgs),
    /// Evaluate recorded tables, trial reports or an idea.
    Eval(EvalArgs),
    /// Print the transcript of a stored run.
    Replay(ReplayArgs),
    /// Serve the run API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct ProviderArgs {
    /// Scripted session file to replay instead of a live provider.
    #[arg(long)]
    session: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Paper directory, plain-text document or paper JSON.
    paper: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IdeaArgs {
    /// Paper directory, plain-text document or paper JSON.
    #[arg(long, required_unless_present = "refine")]
    paper: Option<PathBuf>,
    /// Where to write the idea file.
    #[arg(long)]
    out: PathBuf,
    /// Line-delimited literature records to search.
    #[arg(long)]
    literature: Option<PathBuf>,
    /// Maximum number of recent works to retrieve.
    #[arg(long, default_value_t = DEFAULT_RECENT_WORKS)]
    related: usize,
    /// Character budget of the paper context in prompts.
    #[arg(long, default_value_t = DEFAULT_CONTEXT_BUDGET)]
    context_budget: usize,
    /// Existing idea file to refine with --feedback.
    #[arg(long, requires = "feedback", conflicts_with = "paper")]
    refine: Option<PathBuf>,
    /// Researcher feedback on the idea being refined.
    #[arg(long, requires = "refine")]
    feedback: Option<String>,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    idea: PathBuf,
    /// Task package directory.
    #[arg(long)]
    task: PathBuf,
    #[arg(long, default_value_t = 1)]
    trials: u32,
    #[arg(long, default_value_t = mlr_core::agent::DEFAULT_STEP_BUDGET)]
    step_budget: u64,
    /// Seconds to wait for researcher feedback after Request Help.
    #[arg(long, default_value_t = mlr_core::agent::DEFAULT_FEEDBACK_TIMEOUT.as_secs())]
    feedback_timeout: u64,
    /// Improvement (percent) a trial needs to count as successful.
    #[arg(long, default_value_t = DEFAULT_SUCCESS_THRESHOLD)]
    threshold: f64,
    /// Run store directory.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Where to write the JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Serve the run API on this address while the trials run.
    #[arg(long)]
    listen: Option<String>,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(subcommand)]
    what: EvalCommand,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Recompute the column averages of a recorded results table.
    Table {
        csv: PathBuf,
        /// Only report this column.
        #[arg(long)]
        column: Option<String>,
    },
    /// Aggregate improvement and success rate over run reports.
    Trials {
        reports: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SUCCESS_THRESHOLD)]
        threshold: f64,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Score an idea's hypothesis and experiment design with an LLM reviewer.
    Idea {
        idea: PathBuf,
        #[command(flatten)]
        provider: ProviderArgs,
    },
}

#[derive(Debug, Args)]
struct ReplayArgs {
    run_id: String,
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Address to listen on, e.g. 127.0.0.1:8080.
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Environment variable holding the shared API token.
    #[arg(long)]
    token_env: Option<String>,
}

/// What `mlr run` writes with `--report`.
#[derive(Debug, Serialize, Deserialize)]
struct RunReport {
    trials: Vec<TrialReport>,
    metrics: RunMetrics,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) if !path.is_file() => return Err(usage(format!("config file {} not found", path.display()))),
        Some(path) => Config::load(path).map_err(|e| usage(format!("{e:#}")))?,
        None => Config::default(),
    };
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Idea(args) => cmd_idea(args, &config),
        Command::Run(args) => cmd_run(args, &config),
        Command::Eval(args) => cmd_eval(args, &config),
        Command::Replay(args) => cmd_replay(args, &config),
        Command::Serve(args) => cmd_serve(args, &config),
    }
}

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// How to build a gateway; a fresh one is made for every trial so scripted
/// sessions restart from their first entry.
enum ProviderChoice {
    Scripted(PathBuf),
    Http(Box<ProviderConfig>),
}

impl ProviderChoice {
    fn resolve(args: &ProviderArgs, config: &Config) -> Result<Self> {
        if let Some(session) = &args.session {
            require_exists(session, "session file")?;
            return Ok(Self::Scripted(session.clone()));
        }
        match &config.provider {
            Some(ProviderConfig::Scripted { session }) => {
                require_exists(session, "session file")?;
                Ok(Self::Scripted(session.clone()))
            }
            Some(p) => Ok(Self::Http(Box::new(p.clone()))),
            None => Err(usage("no provider: pass --session or configure [provider] in the config file")),
        }
    }

    fn gateway(&self) -> Result<Arc<Gateway>> {
        match self {
            Self::Scripted(path) => {
                let provider = ScriptedProvider::from_file(path)?;
                Ok(Arc::new(Gateway::with_limits(Arc::new(provider), RetryPolicy::immediate(0), DEFAULT_TOKEN_BUDGET)))
            }
            Self::Http(p) => {
                let ProviderConfig::Http {
                    max_retries,
                    token_budget,
                    ..
                } = p.as_ref()
                else {
                    unreachable!("scripted providers are resolved to a session path")
                };
                let http = p.http_chat().expect("http provider");
                let provider = HttpChatProvider::new(&http)?;
                let retry = RetryPolicy {
                    max_retries: max_retries.unwrap_or(RetryPolicy::default().max_retries),
                    ..RetryPolicy::default()
                };
                Ok(Arc::new(Gateway::with_limits(
                    Arc::new(provider),
                    retry,
                    token_budget.unwrap_or(DEFAULT_TOKEN_BUDGET),
                )))
            }
        }
    }
}

fn load_paper(path: &Path) -> Result<ResearchPaper> {
    require_exists(path, "paper")?;
    if path.is_dir() {
        let parsed = load_paper_dir(path)?;
        for w in &parsed.warnings {
            tracing::warn!("{w}");
        }
        return Ok(parsed.paper);
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
    }
    let source = path.file_stem().and_then(|s| s.to_str());
    let parsed = parse_paper(&text, source)?;
    for w in &parsed.warnings {
        tracing::warn!("{w}");
    }
    Ok(parsed.paper)
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let paper = load_paper(&args.paper)?;
    let text = serde_json::to_string_pretty(&paper)? + "\n";
    write_output(args.out.as_deref(), &text)
}

fn literature_provider(flag: Option<&Path>, config: &Config) -> Result<Box<dyn LiteratureProvider>> {
    if let Some(path) = flag.or(config.literature.file.as_deref()) {
        require_exists(path, "literature file")?;
        return Ok(Box::new(StubLiterature::from_file(path)?));
    }
    if let Some(url) = &config.literature.url {
        return Ok(Box::new(HttpLiterature::new(url.clone(), 3, Duration::from_secs(1))?));
    }
    Ok(Box::new(StubLiterature::new(Vec::new())))
}

fn cmd_idea(args: IdeaArgs, config: &Config) -> Result<()> {
    if let Some(prior) = &args.refine {
        require_exists(prior, "idea file")?;
    }
    let paper = match &args.paper {
        Some(p) => Some(load_paper(p)?),
        None => None,
    };
    let provider = ProviderChoice::resolve(&args.provider, config)?;
    let literature = literature_provider(args.literature.as_deref(), config)?;
    let llm = provider.gateway()?;
    let idea = match (&args.refine, paper) {
        (Some(prior), _) => {
            let prior = IdeaFile::load(prior)?.idea();
            refine_idea(&prior, args.feedback.as_deref().unwrap_or_default(), &llm)?
        }
        (None, Some(paper)) => generate_idea(paper, &llm, literature.as_ref(), args.related, args.context_budget)?,
        (None, None) => return Err(usage("--paper or --refine is required")),
    };
    let file = IdeaFile::new(idea, llm.provider_id());
    file.save(&args.out)?;
    println!("method: {}", file.hypothesis.title());
    println!("plan stages: {}", file.plan.design.len());
    for (i, stage) in file.plan.design.iter().enumerate() {
        println!("  {}. {}", i + 1, stage.title());
    }
    println!("written: {}", args.out.display());
    Ok(())
}

fn store_root(flag: Option<&PathBuf>, config: &Config) -> PathBuf {
    flag.cloned().unwrap_or_else(|| config.store.root.clone())
}

/// A background API server bound before the trials start.
struct Listener {
    stop: tokio::sync::oneshot::Sender<()>,
    thread: std::thread::JoinHandle<std::io::Result<()>>,
}

fn start_listener(addr: &str, state: AppState) -> Result<Listener> {
    let runtime = tokio::runtime::Runtime::new()?;
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind(addr))
        .with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on {}", listener.local_addr()?);
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(mlr_server::serve(listener, state, async {
            let _ = stopped.await;
        }))
    });
    Ok(Listener { stop, thread })
}

fn api_token(env_name: &str) -> Option<String> {
    std::env::var(env_name).ok().filter(|t| !t.trim().is_empty())
}

fn cmd_run(args: RunArgs, config: &Config) -> Result<()> {
    if args.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    if args.step_budget == 0 {
        return Err(usage("--step-budget must be at least 1"));
    }
    require_exists(&args.idea, "idea file")?;
    require_exists(&args.task, "task package")?;
    let provider = ProviderChoice::resolve(&args.provider, config)?;
    let idea = IdeaFile::load(&args.idea)?.idea();
    let mut run_config = RunConfig::new(idea, args.task.clone(), "");
    run_config.step_budget = args.step_budget;
    run_config.feedback_timeout = Duration::from_secs(args.feedback_timeout);
    run_config.validate()?;

    let store = Arc::new(RunStore::open(&store_root(args.store.as_ref(), config))?);
    let listener = match &args.listen {
        Some(addr) => Some(start_listener(
            addr,
            AppState {
                store: store.clone(),
                token: api_token(&config.server.token_env),
            },
        )?),
        None => None,
    };

    let mut trials = Vec::new();
    for seed in 0..u64::from(args.trials) {
        let llm = provider.gateway()?;
        let mut cfg = run_config.clone();
        cfg.provider = llm.provider_id().to_string();
        cfg.trial_seed = seed;
        let report = run_trial(
            &cfg,
            TrialEnv {
                store: store.clone(),
                llm,
                clock: Arc::new(SystemClock),
                model_hub: None,
                dataset_hub: None,
            },
        )?;
        let improvement = report.result.improvement()?;
        println!(
            "trial {seed}: run {} {} improvement {}",
            report.run_id,
            report.state.outcome.label(),
            improvement.map_or("n/a".to_string(), |v| format!("{v:.2}%"))
        );
        trials.push(report);
    }
    if let Some(l) = listener {
        let _ = l.stop.send(());
        l.thread.join().map_err(|_| anyhow::anyhow!("API server thread panicked"))??;
    }

    let results: Vec<TrialResult> = trials.iter().map(|t| t.result.clone()).collect();
    let metrics = RunMetrics::compute(&results, args.threshold)?;
    print!("{}", metrics.to_csv());
    if let Some(path) = &args.report {
        let report = RunReport { trials, metrics };
        std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs, config: &Config) -> Result<()> {
    match args.what {
        EvalCommand::Table { csv, column } => {
            require_exists(&csv, "table")?;
            let text = std::fs::read_to_string(&csv)?;
            if text.trim().is_empty() {
                return Err(usage(format!("{} is empty", csv.display())));
            }
            let table = RecordedTable::from_csv(&text)?;
            let columns = match &column {
                Some(c) => vec![c.clone()],
                None => table.columns.clone(),
            };
            let mut out = String::from("column,computed_average,printed_average\n");
            for c in &columns {
                let computed = mlr_core::evaluation::aggregate_table(&table.column(c)?)?;
                let printed = table.printed_average(c).map(|p| p.to_string()).unwrap_or_default();
                out.push_str(&format!("{c},{computed:.2},{printed}\n"));
            }
            print!("{out}");
            Ok(())
        }
        EvalCommand::Trials {
            reports,
            threshold,
            format,
        } => {
            if reports.is_empty() {
                return Err(usage("no trial reports given"));
            }
            let mut results = Vec::new();
            for path in &reports {
                require_exists(path, "report")?;
                let text = std::fs::read_to_string(path)?;
                let report: RunReport =
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                results.extend(report.trials.into_iter().map(|t| t.result));
            }
            if results.is_empty() {
                return Err(usage("the reports hold no trials"));
            }
            let metrics = RunMetrics::compute(&results, threshold)?;
            match format {
                Format::Csv => print!("{}", metrics.to_csv()),
                Format::Json => print!("{}", metrics.to_json()),
            }
            Ok(())
        }
        EvalCommand::Idea { idea, provider } => {
            require_exists(&idea, "idea file")?;
            let provider = ProviderChoice::resolve(&provider, config)?;
            let idea = IdeaFile::load(&idea)?.idea();
            let llm = provider.gateway()?;
            let cards = [
                score_idea(&idea, Target::Hypothesis, &llm)?,
                score_idea(&idea, Target::ExperimentDesign, &llm)?,
            ];
            let mut out = String::from("target,criterion,score\n");
            for r in scorecard_records(&cards) {
                out.push_str(&format!("{},{},{}\n", r.target.label(), r.criterion, r.score));
            }
            for card in &cards {
                out.push_str(&format!("{},mean,{:.2}\n", card.target.label(), card.mean()));
            }
            print!("{out}");
            Ok(())
        }
    }
}

fn cmd_replay(args: ReplayArgs, config: &Config) -> Result<()> {
    let root = store_root(args.store.as_ref(), config);
    if !root.is_dir() {
        bail!("run store {} does not exist", root.display());
    }
    let store = RunStore::open(&root)?;
    let events = store.events(&args.run_id, 1)?;
    print!("{}", render_transcript(&events));
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

fn cmd_serve(args: ServeArgs, config: &Config) -> Result<()> {
    let addr = args.listen.unwrap_or_else(|| config.server.listen.clone());
    let token_env = args.token_env.unwrap_or_else(|| config.server.token_env.clone());
    let store = Arc::new(RunStore::open(&store_root(args.store.as_ref(), config))?);
    let state = AppState {
        store,
        token: api_token(&token_env),
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on {}", listener.local_addr()?);
        mlr_server::serve(listener, state, shutdown_signal()).await?;
        Ok(())
    })
}
