use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use agentrec::agents::AgentKind;
use agentrec::bundle::{answer_key, prepare_tasks, Bundle};
use agentrec::episode::EpisodeTrace;
use agentrec::ingest::{ingest_source, read_source_dir, IngestOptions};
use agentrec::leaderboard::{update_leaderboard, Leaderboard, SubmissionTags};
use agentrec::metrics::{report_from_traces, MetricReport};
use agentrec::runner::{run_tasks, RunConfig};
use agentrec::service::{EnvConfig, Environment};
use agentrec::store::UriStore;
use agentrec::synth::{self, SynthConfig};
use agentrec::taskgen::generate_for_scenario;
use agentrec::util::{read_jsonl, write_jsonl};
use agentrec::validate::validate_store;
use agentrec::visibility::Scenario;

const EXIT_INTEGRITY: u8 = 2;
const EXIT_EMPTY_TASKS: u8 = 3;

/// Textual recommendation environment and evaluation harness.
#[derive(Parser)]
#[command(name = "agentrec", version)]
struct Cli {
    /// JSON file with defaults per subcommand, e.g. {"run": {"workers": 4}}.
    /// Flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a raw platform dump into a store directory.
    Ingest(IngestArgs),
    /// Generate a task bundle for one scenario.
    Build(BuildArgs),
    /// Run a reference agent over task bundles and score it.
    Run(RunArgs),
    /// Serve the environment over HTTP.
    Serve(ServeArgs),
    /// Re-score persisted traces.
    Report(ReportArgs),
    /// Submit to or print a leaderboard.
    #[command(subcommand)]
    Leaderboard(LeaderboardCommand),
    /// Write a synthetic corpus and one scenario per task family.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// amazon, goodreads or yelp.
    #[arg(long)]
    source: String,
    /// Directory with users/items/reviews as .json or .jsonl.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep raw ids instead of prefixing them with the platform.
    #[arg(long)]
    no_namespace: bool,
    /// Accept dangling references instead of failing.
    #[arg(long)]
    allow_dangling: bool,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scenario's task_count.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    store: PathBuf,
    /// Task bundle directories.
    #[arg(long = "tasks", required = true, num_args = 1..)]
    tasks: Vec<PathBuf>,
    #[arg(long)]
    agent: AgentKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = agentrec::episode::DEFAULT_BUDGET)]
    budget: u32,
    /// Defaults to the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "run")]
    run_id: String,
    /// Writes traces.jsonl and report.json here.
    #[arg(long)]
    out: PathBuf,
    /// Timestamp recorded in the report metadata.
    #[arg(long)]
    timestamp: Option<String>,
    /// Record per-episode wall time in traces.
    #[arg(long)]
    record_timing: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long = "tasks", required = true, num_args = 1..)]
    tasks: Vec<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value_t = agentrec::episode::DEFAULT_BUDGET)]
    budget: u32,
    #[arg(long, default_value_t = 600)]
    idle_timeout_secs: u64,
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// A traces file, or a directory of *.jsonl trace files.
    #[arg(long)]
    traces: PathBuf,
    #[arg(long = "tasks", required = true, num_args = 1..)]
    tasks: Vec<PathBuf>,
    #[arg(long)]
    timestamp: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum LeaderboardCommand {
    Submit(SubmitArgs),
    Show(ShowArgs),
}

#[derive(Args)]
struct SubmitArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    board: PathBuf,
    #[arg(long, default_value = "")]
    model_tag: String,
    #[arg(long, default_value = "")]
    dataset_tag: String,
}

#[derive(Args)]
struct ShowArgs {
    #[arg(long)]
    board: PathBuf,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    /// tiny, popularity or calibration.
    #[arg(long, default_value = "tiny")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the corpus as a raw Yelp dump here.
    #[arg(long)]
    raw: Option<PathBuf>,
}

type Failure = (u8, String);

fn fail(e: impl std::fmt::Display) -> Failure {
    (1, e.to_string())
}

fn main() -> ExitCode {
    let argv = match apply_config(std::env::args().collect()) {
        Ok(argv) => argv,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = Cli::parse_from(argv);
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Build(a) => build(a),
        Command::Run(a) => run(a),
        Command::Serve(a) => serve(a),
        Command::Report(a) => report(a),
        Command::Leaderboard(LeaderboardCommand::Submit(a)) => submit(a),
        Command::Leaderboard(LeaderboardCommand::Show(a)) => show(a),
        Command::Fixture(a) => fixture(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

/// Splices defaults from `--config` into argv right after the subcommand
/// path. Keys the user passed explicitly are left alone.
fn apply_config(argv: Vec<String>) -> Result<Vec<String>, String> {
    let config_path = argv.iter().enumerate().find_map(|(i, a)| {
        a.strip_prefix("--config=")
            .map(String::from)
            .or_else(|| (a == "--config").then(|| argv.get(i + 1).cloned()).flatten())
    });
    let Some(config_path) = config_path else { return Ok(argv) };
    let text = std::fs::read_to_string(&config_path).map_err(|e| format!("{config_path}: {e}"))?;
    let config: Value = serde_json::from_str(&text).map_err(|e| format!("{config_path}: {e}"))?;

    let commands = ["ingest", "build", "run", "serve", "report", "leaderboard", "fixture"];
    let Some(pos) = argv.iter().position(|a| commands.contains(&a.as_str())) else { return Ok(argv) };
    let mut section = config.get(&argv[pos]);
    let mut insert_at = pos + 1;
    if argv[pos] == "leaderboard" {
        if let Some(sub) = argv.get(pos + 1) {
            section = section.and_then(|s| s.get(sub));
            insert_at += 1;
        }
    }
    let Some(Value::Object(section)) = section else { return Ok(argv) };

    let mut extra = Vec::new();
    for (key, value) in section {
        let flag = format!("--{}", key.replace('_', "-"));
        let given = argv.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if given {
            continue;
        }
        let scalar = |v: &Value| match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            other => Err(format!("config key {key}: unsupported value {other}")),
        };
        match value {
            Value::Bool(true) => extra.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Array(list) => {
                extra.push(flag);
                for v in list {
                    extra.push(scalar(v)?);
                }
            }
            v => {
                extra.push(flag);
                extra.push(scalar(v)?);
            }
        }
    }
    let mut out = argv[..insert_at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[insert_at..]);
    Ok(out)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn ingest(a: IngestArgs) -> Result<(), Failure> {
    let records = read_source_dir(&a.input).map_err(fail)?;
    let options = IngestOptions { namespace_ids: !a.no_namespace };
    let (partial, report) = ingest_source(records, &a.source, &options).map_err(fail)?;
    for r in &report.rejections {
        eprintln!("rejected {:?} #{}: {}", r.kind, r.index, r.reason);
    }
    let store = partial.into_store();
    let validation = validate_store(&store);
    print_json(&serde_json::json!({"ingest": report, "validation": validation}));
    let blocking: Vec<_> = validation.blocking(a.allow_dangling).collect();
    if !blocking.is_empty() {
        return Err((
            EXIT_INTEGRITY,
            format!("{} integrity finding(s); store not written", blocking.len()),
        ));
    }
    store.write_dir(&a.out).map_err(fail)?;
    Ok(())
}

fn load_store(dir: &Path) -> Result<UriStore, Failure> {
    UriStore::load_dir(dir).map_err(fail)
}

fn build(a: BuildArgs) -> Result<(), Failure> {
    let store = load_store(&a.store)?;
    let scenario = Scenario::load(&a.scenario).map_err(fail)?;
    let generated = generate_for_scenario(&store, &scenario, a.count, a.seed).map_err(fail)?;
    for w in &generated.warnings {
        eprintln!("warning: {w}");
    }
    let requested = a.count.or(scenario.task_count).unwrap_or(agentrec::taskgen::DEFAULT_TASK_COUNT);
    let bundle = Bundle::new(&store, &scenario, &generated, requested, a.seed);
    bundle.write(&a.out).map_err(fail)?;
    print_json(&bundle.manifest);
    if generated.tasks.is_empty() {
        return Err((EXIT_EMPTY_TASKS, format!("no eligible tasks for scenario {}", scenario.scenario_id)));
    }
    Ok(())
}

fn load_bundles(dirs: &[PathBuf]) -> Result<Vec<Bundle>, Failure> {
    dirs.iter().map(|d| Bundle::load(d).map_err(fail)).collect()
}

fn run(a: RunArgs) -> Result<(), Failure> {
    let store = load_store(&a.store)?;
    let bundles = load_bundles(&a.tasks)?;
    let tasks = prepare_tasks(&store, &bundles).map_err(fail)?;
    let answers = answer_key(&bundles);
    let config = RunConfig {
        run_id: a.run_id,
        agent: a.agent,
        seed: a.seed,
        budget: a.budget,
        workers: a
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        record_timing: a.record_timing,
    };
    let traces = run_tasks(&store, &tasks, Some(Arc::new(answers.clone())), &config).map_err(fail)?;
    let report = report_from_traces(&traces, &answers, a.timestamp).map_err(fail)?;
    std::fs::create_dir_all(&a.out).map_err(fail)?;
    write_jsonl(&a.out.join("traces.jsonl"), &traces).map_err(fail)?;
    write_json(&a.out.join("report.json"), &report)?;
    print_json(&report);
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), Failure> {
    let store = load_store(&a.store)?;
    let bundles = load_bundles(&a.tasks)?;
    let tasks = prepare_tasks(&store, &bundles).map_err(fail)?;
    if let Some(dir) = &a.trace_dir {
        std::fs::create_dir_all(dir).map_err(fail)?;
    }
    let env = Arc::new(Environment::new(
        Arc::new(store),
        tasks,
        EnvConfig {
            budget: a.budget,
            idle_timeout: Duration::from_secs(a.idle_timeout_secs),
            trace_dir: a.trace_dir,
        },
    ));
    let runtime = tokio::runtime::Runtime::new().map_err(fail)?;
    runtime.block_on(async move {
        let (listener, local) = agentrec::http::bind(a.addr).await.map_err(fail)?;
        eprintln!("listening on http://{local}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        agentrec::http::serve(env, listener, shutdown).await.map_err(fail)
    })
}

fn read_traces(path: &Path) -> Result<Vec<EpisodeTrace>, Failure> {
    if !path.is_dir() {
        return read_jsonl(path).map_err(fail);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(fail)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut traces = Vec::new();
    for f in files {
        traces.extend(read_jsonl::<EpisodeTrace>(&f).map_err(fail)?);
    }
    Ok(traces)
}

fn report(a: ReportArgs) -> Result<(), Failure> {
    let traces = read_traces(&a.traces)?;
    let answers = answer_key(&load_bundles(&a.tasks)?);
    let report = report_from_traces(&traces, &answers, a.timestamp).map_err(fail)?;
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    print_json(&report);
    Ok(())
}

fn submit(a: SubmitArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.report).map_err(|e| fail(format!("{}: {e}", a.report.display())))?;
    let report: MetricReport = serde_json::from_str(&text).map_err(fail)?;
    let tags = SubmissionTags {
        model_tag: a.model_tag,
        dataset_tag: a.dataset_tag,
    };
    let entry = update_leaderboard(&report, &a.board, &tags).map_err(fail)?;
    print_json(&entry);
    Ok(())
}

fn show(a: ShowArgs) -> Result<(), Failure> {
    print!("{}", Leaderboard::at(&a.board).render_markdown().map_err(fail)?);
    Ok(())
}

fn fixture(a: FixtureArgs) -> Result<(), Failure> {
    let mut config = match a.preset.as_str() {
        "tiny" => SynthConfig::tiny(),
        "popularity" => SynthConfig::popularity(),
        "calibration" => SynthConfig::calibration(),
        other => return Err(fail(format!("unknown preset `{other}`"))),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let store = synth::generate(&config);
    store.write_dir(&a.out).map_err(fail)?;
    let scenario_dir = a.out.join("scenarios");
    std::fs::create_dir_all(&scenario_dir).map_err(fail)?;
    for s in synth::family_scenarios(config.base_timestamp) {
        write_json(&scenario_dir.join(format!("{}.json", s.scenario_id)), &s)?;
    }
    if let Some(raw) = &a.raw {
        synth::write_raw_dir(&synth::to_yelp_raw(&store), raw).map_err(fail)?;
    }
    let counts: BTreeMap<&str, usize> = BTreeMap::from([
        ("users", store.user_count()),
        ("items", store.item_count()),
        ("reviews", store.review_count()),
    ]);
    print_json(&counts);
    Ok(())
}
