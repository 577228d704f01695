//! Counts hedging and connective markers in free-form answers and shows how
//! the per-100-token rates and decision categories come out.
//!
//! ```sh
//! cargo run --example marker_profile
//! ```

use splitbench::lingua::{
    categorize_decision, count_if_clauses, count_markers, tokenize, MarkerDictionary,
};

fn main() {
    let epistemic = MarkerDictionary::epistemic();
    let discourse = MarkerDictionary::discourse();

    let answers = [
        "I think an even split is certainly the fairest outcome, so I keep 5 \
         and give 5. Even if the other participant never learns who I am, \
         fairness matters because trust depends on it.",
        "I'll keep 8 and give 2. The money was allocated to me, therefore I am \
         entitled to most of it, although a small gift seems polite.",
        "Perhaps I should give everything away? No. I keep 10. If generosity \
         were free I might act differently, but it is not.",
    ];
    let retained = [0.5, 0.8, 1.0];

    for (text, frac) in answers.iter().zip(retained) {
        let tokens = tokenize(text);
        let epi = count_markers(&tokens, &epistemic);
        let dis = count_markers(&tokens, &discourse);
        let ifs = count_if_clauses(&tokens);
        let category = categorize_decision(frac);

        println!("answer ({} tokens, {}):", tokens.len(), category.as_str());
        println!(
            "  {}",
            text.split_whitespace().collect::<Vec<_>>().join(" ")
        );
        for (phrase, n) in &epi.by_phrase {
            println!("    epistemic  {phrase:<12} x{n}");
        }
        for (phrase, n) in &dis.by_phrase {
            println!("    discourse  {phrase:<12} x{n}");
        }
        let per_100 = |hits: usize| 100.0 * hits as f64 / tokens.len() as f64;
        println!(
            "    rates/100 tokens: epistemic {:.2}, discourse {:.2}, if-clauses {:.2} ({ifs} raw)",
            per_100(epi.total),
            per_100(dis.total),
            per_100(ifs),
        );
        println!();
    }
}
