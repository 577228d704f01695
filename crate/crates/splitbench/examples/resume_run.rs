//! Interrupts a run partway through, reopens the store, and finishes the
//! remaining trials without repeating completed ones.
//!
//! ```sh
//! cargo run --example resume_run
//! ```

use std::sync::Arc;

use splitbench::gateway::{run_plan, ChatBackend, MockBackend, RetryPolicy};
use splitbench::judge::demo_script;
use splitbench::model::VariedVariable;
use splitbench::prompts::{default_plan, expand};
use splitbench::store::RunStore;

#[tokio::main(flavor = "current_thread")]
async fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let runs_dir = work.path().join("runs");

    let mut plan = default_plan(VariedVariable::SystemPrompt, vec!["mock-model".into()]);
    plan.repetitions = 5;
    let total = expand(&plan).expect("valid plan").len();
    let policy = RetryPolicy::default();

    // First process: stop after 37 trials, as if the machine died there.
    let run_id;
    {
        let mut store = RunStore::create(&runs_dir, &plan, "mock").expect("fresh store");
        run_id = store.run_id().to_string();
        let backend = Arc::new(MockBackend::new(demo_script()).expect("valid script"));
        let outcome = run_plan(
            backend.clone() as Arc<dyn ChatBackend>,
            &policy,
            &mut store,
            8,
            Some(37),
        )
        .await
        .expect("partial generation");
        println!(
            "first process: generated {} of {total}, backend answered {} calls",
            outcome.generated,
            backend.call_count()
        );
    }

    // Second process: a fresh store handle and a fresh backend. Only the
    // missing trials are sent; the counter proves nothing was re-queried.
    let mut store = RunStore::open(&runs_dir, &run_id).expect("existing run");
    println!(
        "reopened {run_id}: {} trials already on disk",
        store.generated_trial_ids().len()
    );
    let backend = Arc::new(MockBackend::new(demo_script()).expect("valid script"));
    let outcome = run_plan(
        backend.clone() as Arc<dyn ChatBackend>,
        &policy,
        &mut store,
        8,
        None,
    )
    .await
    .expect("remaining generation");
    println!(
        "second process: generated {} more, skipped {}, backend answered {} calls",
        outcome.generated,
        outcome.skipped,
        backend.call_count()
    );

    let counts = &store.manifest().counts;
    assert_eq!(counts.generated, total as u64);
    println!("total on disk: {} of {total}", counts.generated);
}
