//! What the judge-output parser accepts and why it rejects: fences, prose,
//! ambiguity, and the split-validation rules.
//!
//! ```sh
//! cargo run --example judge_parsing
//! ```

use rust_decimal::Decimal;
use splitbench::judge::parse_closed;
use splitbench::model::validate_split;
use std::str::FromStr;

fn main() {
    let amount = Decimal::from_str("10").unwrap();
    let outputs = [
        r#"{"kept": 7, "given": 3, "refusal": false}"#,
        "```json\n{\"kept\": 2.5, \"given\": 7.5, \"refusal\": false}\n```",
        r#"Sure! The verdict is {"kept": 5, "given": 5, "refusal": false}. Anything else?"#,
        r#"{"kept": null, "given": null, "refusal": true}"#,
        r#"{"kept": 6, "given": 5, "refusal": false}"#,
        r#"{"kept": -1, "given": 11, "refusal": false}"#,
        r#"{"kept": null, "given": 4, "refusal": false}"#,
        r#"{"kept": 5, "given": 5, "refusal": false} or {"kept": 6, "given": 4, "refusal": false}"#,
        "I could not find a number in the answer.",
    ];

    for output in outputs {
        let preview: String = output.chars().take(56).collect();
        print!("{preview:<58} -> ");
        match parse_closed(output) {
            Err(reason) => println!("rejected at parse: {}", reason.as_str()),
            Ok(closed) => match validate_split(&closed, amount) {
                Err(reason) => println!("parsed, rejected at validation: {}", reason.as_str()),
                Ok(split) => println!(
                    "valid: kept {} given {} retained {:.2}",
                    split.kept, split.given, split.retained_fraction
                ),
            },
        }
    }
}
