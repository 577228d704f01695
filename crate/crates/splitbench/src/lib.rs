//! Batch experiment harness for dictator-game behavioral studies on
//! chat-completion models.
//!
//! The pipeline expands a prompt-variation matrix into trials, queries a
//! chat-completions backend (live or deterministic mock), reduces each open
//! response to a validated `{kept, given, refusal}` split via a same-model
//! judge step, and summarizes retained-fraction distributions as
//! letter-value statistics alongside linguistic marker profiles.
//!
//! See the crate `examples/` directory for one runnable example per major
//! capability, and the `splitbench` binary for the `run` / `reduce` /
//! `analyze` / `report` pipeline commands.

pub mod cli;
pub mod gateway;
pub mod judge;
pub mod lingua;
pub mod model;
pub mod prompts;
pub mod report;
pub mod stats;
pub mod store;

pub use gateway::{
    run_plan, ChatBackend, ChatReply, ChatRequest, HttpBackend, MockBackend, MockScript,
    RetryPolicy,
};
pub use judge::{parse_closed, reduce_run};
pub use lingua::{categorize_decision, profile_records, DecisionCategory, MarkerProfile};
pub use model::{
    retained_fraction, validate_split, Bindings, ClosedResponse, ExperimentPlan, Observation,
    PromptTemplate, RejectionReason, TrialRecord, VariedVariable,
};
pub use prompts::{default_bindings, default_plan, expand, load_plan, substitute};
pub use report::{render_chart, write_report, ReportSpec};
pub use stats::{group_summaries, letter_values, LetterValueSummary};
