//! The full pipeline in-process against the deterministic mock backend:
//! generate, judge, summarize, and write report artifacts.
//!
//! ```sh
//! cargo run --example mock_pipeline
//! ```

use std::sync::Arc;

use splitbench::gateway::{run_plan, ChatBackend, MockBackend, RetryPolicy};
use splitbench::judge::{demo_script, reduce_run};
use splitbench::model::VariedVariable;
use splitbench::prompts::default_plan;
use splitbench::report::{write_report, ReportSpec};
use splitbench::store::RunStore;

#[tokio::main(flavor = "current_thread")]
async fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let runs_dir = work.path().join("runs");
    let out_dir = work.path().join("out");

    let mut plan = default_plan(VariedVariable::SystemPrompt, vec!["mock-model".into()]);
    plan.repetitions = 5;

    let mut store = RunStore::create(&runs_dir, &plan, "mock").expect("fresh store");
    let run_id = store.run_id().to_string();
    println!("run id: {run_id}");

    let backend: Arc<dyn ChatBackend> =
        Arc::new(MockBackend::new(demo_script()).expect("valid script"));
    let policy = RetryPolicy::default();

    let outcome = run_plan(Arc::clone(&backend), &policy, &mut store, 8, None)
        .await
        .expect("generation succeeds");
    println!(
        "generated {} trials ({} failed)",
        outcome.generated, outcome.failed_generations
    );

    let outcome = reduce_run(backend, &policy, &mut store, 8)
        .await
        .expect("reduction succeeds");
    println!(
        "judged {}: {} observations, {} rejections",
        outcome.judged, outcome.observations, outcome.rejections
    );
    store.mark_complete().expect("manifest write");

    let paths = write_report(&runs_dir, &out_dir.join(&run_id), &ReportSpec::new(&run_id))
        .expect("report writes");
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

    let summary = std::fs::read_to_string(&paths.summary_csv).expect("summary readable");
    println!("\nsummary.csv:\n{summary}");
}
