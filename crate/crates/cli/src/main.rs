mod export;

use std::fs::{File, OpenOptions, TryLockError};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use fieldmem::bench::{parse_questions, run_bench, BenchMode};
use fieldmem::config::Config;
use fieldmem::embedding::ProviderKind;
use fieldmem::ingest::{earliest_time, ingest_turns, parse_turns, IngestSummary};
use fieldmem::multi_agent::{run_scenario, ScenarioConfig, Topology};
use fieldmem::persistence;
use fieldmem::retrieval::{retrieve, RetrievalWeights};
use fieldmem::store::MemoryStore;
use fieldmem::Error;

#[derive(Parser)]
#[command(name = "fieldmem", version, about = "Field-dynamics memory store for conversational agents")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the config file and environment.
#[derive(Args)]
struct Global {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    grid_size: Option<usize>,
    #[arg(long, global = true)]
    diffusion: Option<f64>,
    #[arg(long, global = true)]
    decay: Option<f64>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    evolution_interval: Option<f64>,
    /// Projection seed (also seeds `simulate`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Retrieval weights as `sim,field,importance,recency`.
    #[arg(long, global = true)]
    weights: Option<RetrievalWeights>,
    #[arg(long, global = true, value_enum)]
    provider: Option<Provider>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    Local,
    Remote,
}

#[derive(Subcommand)]
enum Command {
    /// Inject a JSON-lines conversation into a snapshot, creating it if needed.
    Ingest {
        input: PathBuf,
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long)]
        skip_errors: bool,
    },
    /// Rank memories for a query; prints JSON and saves access bookkeeping.
    Query {
        snapshot: PathBuf,
        text: String,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
        /// Query time; defaults to the snapshot clock.
        #[arg(long)]
        now: Option<f64>,
    },
    /// Advance a snapshot's field without new input.
    Evolve {
        snapshot: PathBuf,
        #[arg(long, conflicts_with = "steps", required_unless_present = "steps")]
        until: Option<f64>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Run a coupled multi-agent scenario.
    Simulate {
        #[arg(long, default_value_t = 2)]
        agents: usize,
        #[arg(long, value_enum, default_value = "full")]
        topology: TopologyArg,
        #[arg(long, default_value_t = 0.5)]
        coupling: f64,
        #[arg(long, default_value_t = 3)]
        items: usize,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.999)]
        ci_target: f64,
        /// CSV trace output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score retrieval against a question set.
    Bench {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        /// Per-question CSV output.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Aggregate CSV output.
        #[arg(long)]
        summary_csv: Option<PathBuf>,
        #[arg(long)]
        skip_errors: bool,
    },
    /// Dump a snapshot's field as CSV or PGM.
    Export {
        snapshot: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: ExportFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    Full,
    Ring,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Field,
    Baseline,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Csv,
    Pgm,
}

enum CliError {
    Core(Error),
    Usage(String),
    Busy(PathBuf),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Busy(_) => 3,
            CliError::Core(e) => match e {
                Error::NumericalBlowup { .. } => 2,
                Error::ProviderUnavailable(_)
                | Error::Io { .. }
                | Error::CorruptSnapshot(_)
                | Error::UnsupportedVersion(_) => 3,
                _ => 1,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::Usage(m) => m.clone(),
            CliError::Busy(p) => format!("snapshot is locked by another process ({})", p.display()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn build_config(g: &Global) -> CliResult<Config> {
    let mut c = match &g.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    c.apply_env()?;
    let f = &mut c.field;
    if let Some(v) = g.grid_size {
        f.grid_size = v;
    }
    if let Some(v) = g.diffusion {
        f.diffusion = v;
    }
    if let Some(v) = g.decay {
        f.decay = v;
    }
    if let Some(v) = g.dt {
        f.dt = v;
    }
    if let Some(v) = g.alpha {
        f.alpha = v;
    }
    if let Some(v) = g.beta {
        f.beta = v;
    }
    if let Some(v) = g.gamma {
        f.gamma = v;
    }
    if let Some(v) = g.evolution_interval {
        c.evolution_interval = Some(v);
    }
    if let Some(v) = g.seed {
        c.projection_seed = v;
    }
    if let Some(w) = g.weights {
        c.weights = w;
    }
    match g.provider {
        Some(Provider::Local) => c.provider = ProviderKind::DeterministicLocal,
        Some(Provider::Remote) => c.provider = ProviderKind::Remote,
        None => {}
    }
    c.validate()?;
    Ok(c)
}

/// Exclusive advisory lock on `<snapshot>.lock`, held until dropped.
struct SnapshotLock {
    _file: File,
}

fn lock_snapshot(snapshot: &Path) -> CliResult<SnapshotLock> {
    let mut name = snapshot.as_os_str().to_owned();
    name.push(".lock");
    let path = PathBuf::from(name);
    let file = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&path)
        .map_err(|e| Error::Io { path: path.clone(), source: e })?;
    match file.try_lock() {
        Ok(()) => Ok(SnapshotLock { _file: file }),
        Err(TryLockError::WouldBlock) => Err(CliError::Busy(path)),
        Err(TryLockError::Error(e)) => Err(Error::Io { path, source: e }.into()),
    }
}

fn open_store(path: &Path, config: &Config) -> CliResult<MemoryStore> {
    Ok(match config.provider {
        ProviderKind::DeterministicLocal => persistence::load(path)?,
        _ => persistence::load_with(path, config.embedder()?)?,
    })
}

fn open_reader(path: &Path) -> CliResult<BufReader<File>> {
    let f = File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(BufReader::new(f))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| {
        CliError::Core(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value"));
}

fn run(cli: Cli) -> CliResult<()> {
    let config = build_config(&cli.global)?;
    match cli.command {
        Command::Ingest {
            input,
            snapshot,
            skip_errors,
        } => {
            let snapshot = snapshot
                .or_else(|| config.snapshot.clone())
                .ok_or_else(|| CliError::Usage("no snapshot path; pass --snapshot or set `snapshot` in the config".into()))?;
            cmd_ingest(&config, &input, &snapshot, skip_errors)
        }
        Command::Query { snapshot, text, k, now } => cmd_query(&config, cli.global.weights, &snapshot, &text, k, now),
        Command::Evolve { snapshot, until, steps } => cmd_evolve(&config, &snapshot, until, steps),
        Command::Simulate {
            agents,
            topology,
            coupling,
            items,
            steps,
            ci_target,
            out,
        } => {
            let mut params = config.field;
            params.grid_size = cli.global.grid_size.unwrap_or(64);
            let scenario = ScenarioConfig {
                agents,
                topology: match topology {
                    TopologyArg::Full => Topology::Full,
                    TopologyArg::Ring => Topology::Ring,
                },
                coupling,
                items_per_agent: items,
                max_steps: steps,
                ci_target,
                seed: cli.global.seed.unwrap_or(0),
                params,
                ..ScenarioConfig::default()
            };
            cmd_simulate(&scenario, out.as_deref())
        }
        Command::Bench {
            corpus,
            questions,
            mode,
            k,
            csv,
            summary_csv,
            skip_errors,
        } => {
            let modes: &[BenchMode] = match mode {
                ModeArg::Field => &[BenchMode::Field],
                ModeArg::Baseline => &[BenchMode::Baseline],
                ModeArg::Both => &[BenchMode::Field, BenchMode::Baseline],
            };
            cmd_bench(&config, &corpus, &questions, modes, k, csv.as_deref(), summary_csv.as_deref(), skip_errors)
        }
        Command::Export { snapshot, out, format } => {
            let store = open_store(&snapshot, &config)?;
            match format {
                ExportFormat::Csv => write_file(&out, export::field_csv(store.field())),
                ExportFormat::Pgm => write_file(&out, export::field_pgm(store.field())),
            }?;
            print_json(&json!({
                "path": out,
                "grid_size": store.params().grid_size,
                "active_cells": store.field().active_count(),
            }));
            Ok(())
        }
    }
}

fn cmd_ingest(config: &Config, input: &Path, snapshot: &Path, skip_errors: bool) -> CliResult<()> {
    let _lock = lock_snapshot(snapshot)?;
    let (turns, mut skipped) = parse_turns(open_reader(input)?, skip_errors)?;
    let mut store = if snapshot.exists() {
        open_store(snapshot, config)?
    } else {
        let start = earliest_time(&turns).unwrap_or(0.0);
        MemoryStore::starting_at(config.store_config(), config.embedder()?, start)?
    };
    let mut summary: IngestSummary = ingest_turns(&mut store, turns, skip_errors)?;
    skipped.append(&mut summary.skipped);
    skipped.sort_by_key(|s| s.line);
    let bytes = persistence::save(&store, snapshot)?;
    print_json(&json!({
        "added": summary.added,
        "steps": summary.steps,
        "skipped": skipped,
        "records": store.len(),
        "clock": store.clock(),
        "snapshot_bytes": bytes,
    }));
    Ok(())
}

fn cmd_query(
    config: &Config,
    override_weights: Option<RetrievalWeights>,
    snapshot: &Path,
    text: &str,
    k: usize,
    now: Option<f64>,
) -> CliResult<()> {
    let _lock = lock_snapshot(snapshot)?;
    let mut store = open_store(snapshot, config)?;
    let weights = override_weights.unwrap_or(store.config().weights);
    let now = now.unwrap_or(store.clock());
    let results = retrieve(&mut store, text, k, &weights, now)?;
    persistence::save(&store, snapshot)?;
    let rows: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            json!({
                "id": r.memory_id,
                "text": store.records()[r.memory_id as usize].text,
                "score": r.score,
                "components": r.components,
            })
        })
        .collect();
    print_json(&serde_json::Value::Array(rows));
    Ok(())
}

fn cmd_evolve(config: &Config, snapshot: &Path, until: Option<f64>, steps: Option<u64>) -> CliResult<()> {
    let _lock = lock_snapshot(snapshot)?;
    let mut store = open_store(snapshot, config)?;
    let until = match (until, steps) {
        (Some(t), _) => t,
        (None, Some(n)) => {
            store.origin() + (store.evolved_steps() + n) as f64 * store.config().evolution_interval
        }
        (None, None) => return Err(CliError::Usage("pass --until or --steps".into())),
    };
    let report = store.tick(until)?;
    persistence::save(&store, snapshot)?;
    print_json(&json!({
        "steps": report.steps,
        "pruned": report.pruned,
        "clock": store.clock(),
        "active_cells": store.field().active_count(),
    }));
    Ok(())
}

fn cmd_simulate(scenario: &ScenarioConfig, out: Option<&Path>) -> CliResult<()> {
    let report = run_scenario(scenario)?;
    if let Some(path) = out {
        write_file(path, report.trace_csv())?;
    }
    print_json(&json!({
        "agents": report.agents,
        "status": report.status,
        "final_ci": report.final_ci,
        "sharing_efficiency": report.sharing_efficiency,
        "steps_to_convergence": report.steps_to_convergence,
        "wall_time_secs": report.wall_time_secs,
    }));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    config: &Config,
    corpus: &Path,
    questions: &Path,
    modes: &[BenchMode],
    k: usize,
    csv: Option<&Path>,
    summary_csv: Option<&Path>,
    skip_errors: bool,
) -> CliResult<()> {
    let (turns, mut skipped) = parse_turns(open_reader(corpus)?, skip_errors)?;
    let start = earliest_time(&turns).unwrap_or(0.0);
    let mut store = MemoryStore::starting_at(config.store_config(), config.embedder()?, start)?;
    let mut ingest = ingest_turns(&mut store, turns, skip_errors)?;
    skipped.append(&mut ingest.skipped);
    let (qs, q_skipped) = parse_questions(open_reader(questions)?, skip_errors)?;
    let qs: Vec<_> = qs.into_iter().map(|(_, q)| q).collect();
    let report = run_bench(&store, &ingest, &qs, modes, k, &config.weights)?;
    if let Some(path) = csv {
        write_file(path, report.per_question_csv())?;
    }
    if let Some(path) = summary_csv {
        write_file(path, report.aggregate_csv())?;
    }
    print!("{}", report.summary_table());
    for s in skipped {
        eprintln!("skipped corpus line {}: {}", s.line, s.message);
    }
    for s in q_skipped {
        eprintln!("skipped question line {}: {}", s.line, s.message);
    }
    Ok(())
}
