//! A minimal live run against an OpenRouter-compatible endpoint: one model,
//! one variant, two prompts, one repetition. Skips politely when no API key
//! is configured, so it is safe to run anywhere.
//!
//! ```sh
//! OPENROUTER_API_KEY=... cargo run --example live_smoke [model-name]
//! ```

use std::sync::Arc;
use std::time::Duration;

use splitbench::gateway::{
    run_plan, ChatBackend, HttpBackend, RetryPolicy, DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL,
};
use splitbench::judge::reduce_run;
use splitbench::model::VariedVariable;
use splitbench::prompts::default_plan;
use splitbench::store::{load_observations, ObsFilter, RunStore};

#[tokio::main(flavor = "current_thread")]
async fn main() {
    let key = match std::env::var(DEFAULT_API_KEY_ENV) {
        Ok(k) if !k.trim().is_empty() => k,
        _ => {
            println!("skipping live smoke: {DEFAULT_API_KEY_ENV} is not set");
            return;
        }
    };
    let model = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "openai/gpt-4o-mini".to_string());

    let mut plan = default_plan(VariedVariable::SystemPrompt, vec![model.clone()]);
    plan.variants.truncate(1);
    plan.variant_count = 1;
    plan.user_prompts.truncate(2);
    plan.repetitions = 1;

    let work = tempfile::tempdir().expect("temp dir");
    let runs_dir = work.path().join("runs");
    let mut store = RunStore::create(&runs_dir, &plan, "live").expect("fresh store");
    let run_id = store.run_id().to_string();
    println!("live smoke against {model}, run {run_id}");

    let backend: Arc<dyn ChatBackend> = Arc::new(
        HttpBackend::new(DEFAULT_BASE_URL, key, Duration::from_secs(60)).expect("http client"),
    );
    let policy = RetryPolicy::default();

    let outcome = run_plan(Arc::clone(&backend), &policy, &mut store, 2, None)
        .await
        .expect("generation persists");
    println!(
        "generated {} ({} failed)",
        outcome.generated, outcome.failed_generations
    );

    let outcome = reduce_run(backend, &policy, &mut store, 2)
        .await
        .expect("reduction persists");
    println!(
        "judged {}: {} observations, {} rejections",
        outcome.judged, outcome.observations, outcome.rejections
    );
    store.mark_complete().expect("manifest write");

    let observations =
        load_observations(&runs_dir, &run_id, &ObsFilter::default()).expect("events readable");
    for o in &observations {
        println!(
            "{}: kept {} / {} ({:.0}% retained)",
            o.trial_id,
            o.kept,
            o.amount,
            100.0 * o.retained_fraction
        );
    }
}
