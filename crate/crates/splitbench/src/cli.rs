//! Command-line pipeline coordination: `run` generates, `reduce` judges,
//! `analyze` and `report` emit tables and the chart, `validate-plan`
//! checks a plan without touching any backend.
//!
//! Exit codes are stable for scripting: 0 ok, 2 invalid plan or arguments,
//! 3 authentication, 4 stage ordering (a prior stage has not finished),
//! 5 I/O or storage.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::gateway::{
    run_plan, ChatBackend, HttpBackend, MockBackend, MockScript, RetryPolicy, DEFAULT_API_KEY_ENV,
    DEFAULT_BASE_URL,
};
use crate::judge::{demo_script, reduce_run};
use crate::model::ExperimentPlan;
use crate::prompts::load_plan;
use crate::report::{write_report, write_tables, ReportSpec};
use crate::store::{self, RunStatus, RunStore, StoreError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PLAN: i32 = 2;
pub const EXIT_AUTH: i32 = 3;
pub const EXIT_ORDER: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "splitbench",
    version,
    about = "Batch dictator-game experiments on chat models: generate, judge, summarize."
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute the generation stage of a plan, creating or resuming a run.
    Run(RunArgs),
    /// Judge generated responses into observations; marks the run complete.
    Reduce(ReduceArgs),
    /// Write the letter-value and marker CSV tables for a completed run.
    Analyze(AnalyzeArgs),
    /// Write all artifacts for a completed run, including the SVG chart.
    Report(ReportArgs),
    /// Parse and validate a plan file, printing its expansion size.
    ValidatePlan(ValidatePlanArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendChoice {
    Mock,
    Live,
}

#[derive(Debug, Args)]
struct BackendArgs {
    /// Transport: deterministic scripted mock or live HTTP API.
    #[arg(long, value_enum, default_value_t = BackendChoice::Mock)]
    backend: BackendChoice,
    /// JSON script for the mock backend; defaults to a built-in demo.
    #[arg(long, value_name = "PATH")]
    mock_script: Option<PathBuf>,
    /// Environment variable holding the live API key.
    #[arg(long, value_name = "VAR", default_value = DEFAULT_API_KEY_ENV)]
    api_key_env: String,
    /// Base URL of the live chat-completions API.
    #[arg(long, value_name = "URL", default_value = DEFAULT_BASE_URL)]
    base_url: String,
    /// Upper bound on concurrent in-flight requests.
    #[arg(long, value_name = "N", default_value_t = 8)]
    max_in_flight: usize,
    /// Per-request timeout in seconds (live backend).
    #[arg(long, value_name = "SECS", default_value_t = 120)]
    request_timeout: u64,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Plan file (JSON).
    plan: PathBuf,
    /// Directory holding run stores.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    runs_dir: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Debug, Args)]
struct ReduceArgs {
    /// Run identifier, as printed by `run` (a directory under --runs-dir).
    run_id: String,
    #[arg(long, value_name = "DIR", default_value = "runs")]
    runs_dir: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Run identifier, as printed by `run` (a directory under --runs-dir).
    run_id: String,
    #[arg(long, value_name = "DIR", default_value = "runs")]
    runs_dir: PathBuf,
    /// Root output directory; artifacts land in `<out>/<run_id>/`.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Proportion of points to leave outside the letter-value boxes.
    #[arg(long, value_name = "P", default_value_t = crate::report::DEFAULT_OUTLIER_PROP)]
    outlier_prop: f64,
    /// Skip the linguistic marker table.
    #[arg(long)]
    no_linguistics: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run identifier, as printed by `run` (a directory under --runs-dir).
    run_id: String,
    #[arg(long, value_name = "DIR", default_value = "runs")]
    runs_dir: PathBuf,
    /// Root output directory; artifacts land in `<out>/<run_id>/`.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Proportion of points to leave outside the letter-value boxes.
    #[arg(long, value_name = "P", default_value_t = crate::report::DEFAULT_OUTLIER_PROP)]
    outlier_prop: f64,
    /// Dashed reference line: the share humans keep in the same game.
    #[arg(long, value_name = "F", default_value_t = crate::report::DEFAULT_HUMAN_BASELINE_KEEP)]
    human_baseline_keep: f64,
    /// Skip the linguistic marker table.
    #[arg(long)]
    no_linguistics: bool,
}

#[derive(Debug, Args)]
struct ValidatePlanArgs {
    /// Plan file (JSON).
    plan: PathBuf,
}

/// A stage failure carrying its exit code and message.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Failure {
        Failure {
            code,
            message: message.into(),
        }
    }
}

fn store_failure(e: StoreError) -> Failure {
    let code = match &e {
        StoreError::NotFound(_) => EXIT_ORDER,
        _ => EXIT_IO,
    };
    Failure::new(code, e.to_string())
}

/// Parses argv and runs the selected command, returning the process exit
/// code. Errors print to stderr.
pub fn run_cli() -> i32 {
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: failed to start async runtime: {e}");
            return EXIT_IO;
        }
    };
    let result = match cli.command {
        Command::Run(args) => runtime.block_on(cmd_run(args)),
        Command::Reduce(args) => runtime.block_on(cmd_reduce(args)),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Report(args) => cmd_report(args),
        Command::ValidatePlan(args) => cmd_validate_plan(args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            failure.code
        }
    }
}

fn load_plan_file(path: &Path) -> Result<ExperimentPlan, Failure> {
    let json = std::fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_IO, format!("read {}: {e}", path.display())))?;
    load_plan(&json).map_err(|e| Failure::new(EXIT_PLAN, format!("{}: {e}", path.display())))
}

impl BackendArgs {
    fn kind(&self) -> &'static str {
        match self.backend {
            BackendChoice::Mock => "mock",
            BackendChoice::Live => "live",
        }
    }

    fn build(&self) -> Result<Arc<dyn ChatBackend>, Failure> {
        match self.backend {
            BackendChoice::Mock => {
                let script = match &self.mock_script {
                    Some(path) => {
                        let json = std::fs::read_to_string(path).map_err(|e| {
                            Failure::new(EXIT_IO, format!("read {}: {e}", path.display()))
                        })?;
                        MockScript::parse(&json).map_err(|e| {
                            Failure::new(EXIT_PLAN, format!("{}: {e}", path.display()))
                        })?
                    }
                    None => demo_script(),
                };
                let backend =
                    MockBackend::new(script).map_err(|e| Failure::new(EXIT_PLAN, e.to_string()))?;
                Ok(Arc::new(backend))
            }
            BackendChoice::Live => {
                let api_key = std::env::var(&self.api_key_env).unwrap_or_default();
                if api_key.trim().is_empty() {
                    return Err(Failure::new(
                        EXIT_AUTH,
                        format!(
                            "no API key: set the `{}` environment variable",
                            self.api_key_env
                        ),
                    ));
                }
                let backend = HttpBackend::new(
                    self.base_url.clone(),
                    api_key,
                    Duration::from_secs(self.request_timeout),
                )
                .map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
                Ok(Arc::new(backend))
            }
        }
    }
}

async fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let plan = load_plan_file(&args.plan)?;
    let kind = args.backend.kind();
    let run_id = store::run_id_for(&plan, kind);

    let mut store = if args.runs_dir.join(&run_id).is_dir() {
        RunStore::open(&args.runs_dir, &run_id).map_err(store_failure)?
    } else {
        RunStore::create(&args.runs_dir, &plan, kind).map_err(store_failure)?
    };

    match store.manifest().status {
        RunStatus::Complete => {
            println!("run {run_id} already complete; nothing to do");
            return Ok(());
        }
        RunStatus::Aborted => {
            println!("run {run_id} was aborted; resuming");
            store.resume().map_err(store_failure)?;
        }
        RunStatus::Running => {}
    }
    let counts = &store.manifest().counts;
    if counts.stubs > 0 && counts.generated == counts.stubs {
        println!(
            "run {run_id}: generation already complete ({} trials); no new calls",
            counts.generated
        );
        return Ok(());
    }

    let backend = args.backend.build()?;
    let policy = RetryPolicy::default();
    let outcome = run_plan(
        backend,
        &policy,
        &mut store,
        args.backend.max_in_flight,
        None,
    )
    .await
    .map_err(run_failure)?;

    // A live run where every single generation failed is almost always a
    // credentials problem; surface it as one.
    if outcome.generated > 0 && outcome.failed_generations == outcome.generated {
        let records = store.records().map_err(store_failure)?;
        let auth_marker = records.iter().any(|r| {
            r.stage_metadata.iter().any(|m| {
                m.error
                    .as_deref()
                    .is_some_and(|e| e.contains("check the API key"))
            })
        });
        if auth_marker {
            return Err(Failure::new(
                EXIT_AUTH,
                format!(
                    "run {run_id}: all {} generations were rejected by the API; check the API key",
                    outcome.generated
                ),
            ));
        }
    }

    let counts = &store.manifest().counts;
    println!(
        "run {run_id}: generated {} new trials ({} resumed, {} failed), {}/{} total",
        outcome.generated,
        outcome.skipped,
        outcome.failed_generations,
        counts.generated,
        counts.stubs
    );
    Ok(())
}

fn run_failure(e: crate::gateway::RunError) -> Failure {
    match e {
        crate::gateway::RunError::Store(e) => store_failure(e),
        crate::gateway::RunError::Plan(e) => Failure::new(EXIT_PLAN, e.to_string()),
    }
}

async fn cmd_reduce(args: ReduceArgs) -> Result<(), Failure> {
    let mut store = RunStore::open(&args.runs_dir, &args.run_id).map_err(store_failure)?;
    if store.manifest().status == RunStatus::Complete {
        println!("run {} already complete; nothing to do", args.run_id);
        return Ok(());
    }
    let counts = store.manifest().counts.clone();
    if counts.generated < counts.stubs {
        return Err(Failure::new(
            EXIT_ORDER,
            format!(
                "run {}: generation incomplete ({}/{} trials); run `run` first",
                args.run_id, counts.generated, counts.stubs
            ),
        ));
    }
    if store.manifest().status == RunStatus::Aborted {
        store.resume().map_err(store_failure)?;
    }

    let backend = args.backend.build()?;
    let policy = RetryPolicy::default();
    let outcome = reduce_run(backend, &policy, &mut store, args.backend.max_in_flight)
        .await
        .map_err(run_failure)?;
    store.mark_complete().map_err(store_failure)?;

    let counts = &store.manifest().counts;
    println!(
        "run {}: judged {} trials ({} resumed); {} observations, {} rejections",
        args.run_id,
        outcome.judged,
        outcome.skipped,
        counts.observations,
        counts.total_rejections()
    );
    for (reason, n) in &counts.rejections {
        println!("  rejected {}: {n}", reason.as_str());
    }
    if outcome.unjudgeable > 0 {
        println!("  unjudgeable (generation failed): {}", outcome.unjudgeable);
    }
    Ok(())
}

/// A completed run is the precondition for analysis artifacts.
fn completed_manifest(runs_dir: &Path, run_id: &str) -> Result<(), Failure> {
    let manifest = store::load_manifest(runs_dir, run_id).map_err(store_failure)?;
    if manifest.status != RunStatus::Complete {
        return Err(Failure::new(
            EXIT_ORDER,
            format!("run {run_id} is not complete; run `reduce` first"),
        ));
    }
    Ok(())
}

fn report_failure(e: crate::report::ReportError) -> Failure {
    use crate::report::ReportError;
    match e {
        ReportError::Spec(e) => Failure::new(EXIT_PLAN, e.to_string()),
        ReportError::Store(e) => store_failure(e),
        ReportError::Stats(e) => Failure::new(EXIT_PLAN, e.to_string()),
        ReportError::Csv(e) => Failure::new(EXIT_IO, e.to_string()),
        ReportError::Io { path, source } => {
            Failure::new(EXIT_IO, format!("write {}: {source}", path.display()))
        }
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    completed_manifest(&args.runs_dir, &args.run_id)?;
    let mut spec = ReportSpec::new(&args.run_id);
    spec.outlier_prop = args.outlier_prop;
    spec.include_linguistics = !args.no_linguistics;
    let out_dir = args.out.join(&args.run_id);
    let paths = write_tables(&args.runs_dir, &out_dir, &spec).map_err(report_failure)?;
    println!("wrote {}", paths.summary_csv.display());
    if let Some(markers) = paths.markers_csv {
        println!("wrote {}", markers.display());
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    completed_manifest(&args.runs_dir, &args.run_id)?;
    let mut spec = ReportSpec::new(&args.run_id);
    spec.outlier_prop = args.outlier_prop;
    spec.include_linguistics = !args.no_linguistics;
    spec.human_baseline_keep = args.human_baseline_keep;
    let out_dir = args.out.join(&args.run_id);
    let paths = write_report(&args.runs_dir, &out_dir, &spec).map_err(report_failure)?;
    for path in [
        paths.observations_csv.as_deref(),
        Some(paths.summary_csv.as_path()),
        paths.markers_csv.as_deref(),
        paths.chart_svg.as_deref(),
    ]
    .into_iter()
    .flatten()
    {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_validate_plan(args: ValidatePlanArgs) -> Result<(), Failure> {
    let plan = load_plan_file(&args.plan)?;
    println!(
        "plan ok: varies {} over {} variants; {} models x {} prompts x {} repetitions = {} trials",
        plan.varied_variable,
        plan.variant_count,
        plan.models.len(),
        plan.user_prompts.len(),
        plan.repetitions,
        plan.stub_count()
    );
    println!("digest: {}", store::plan_digest(&plan));
    Ok(())
}
