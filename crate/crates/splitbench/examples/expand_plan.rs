//! Expands the bundled default plan into trial stubs and prints the grid.
//!
//! ```sh
//! cargo run --example expand_plan
//! ```

use splitbench::model::VariedVariable;
use splitbench::prompts::{default_plan, expand};

fn main() {
    let plan = default_plan(
        VariedVariable::SystemPrompt,
        vec!["anthropic/claude-3.5-haiku".into()],
    );
    let stubs = expand(&plan).expect("bundled plan is valid");

    println!(
        "varying {} over {} variants x {} prompts x {} repetitions = {} trials\n",
        plan.varied_variable,
        plan.variant_count,
        plan.user_prompts.len(),
        plan.repetitions,
        stubs.len()
    );

    for stub in stubs.iter().take(3) {
        println!("{}", stub.trial_id);
        println!("  system: {:?}", clip(&stub.rendered_system, 60));
        println!("  user:   {:?}", clip(&stub.rendered_user, 60));
    }
    println!("...");
    let last = stubs.last().expect("nonempty grid");
    println!("{} (last)", last.trial_id);

    // The same plan always expands to the same grid.
    let again = expand(&plan).expect("bundled plan is valid");
    assert_eq!(stubs, again);
    println!(
        "\nexpansion is deterministic: {} stubs, stable order",
        again.len()
    );
}

fn clip(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
