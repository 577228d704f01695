//! Letter-value summaries on synthetic samples: the fourths/eighths/...
//! recursion, the outlier rule, and the degenerate constant case.
//!
//! ```sh
//! cargo run --example letter_values
//! ```

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use splitbench::stats::letter_values;

fn show(label: &str, values: &[f64]) {
    let summary = letter_values(values, 0.1).expect("nonempty sample");
    println!("{label} (n = {})", summary.n);
    println!("  median: {:.4}", summary.median);
    for (level, (lower, upper)) in summary.pairs.iter().enumerate() {
        println!(
            "  pair {}: [{:.4}, {:.4}] width {:.4}",
            level + 1,
            lower,
            upper,
            upper - lower
        );
    }
    println!("  outliers: {:?}\n", summary.outliers);
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let uniform: Vec<f64> = (0..100).map(|_| rng.gen::<f64>()).collect();
    show("uniform sample", &uniform);

    // Two-sided heavy tails: a mass at 0.5 with a few extreme splits.
    let mut heavy = vec![0.5; 90];
    heavy.extend([0.0, 0.0, 0.01, 0.02, 0.98, 0.99, 1.0, 1.0, 0.97, 0.03]);
    show("heavy tails around an even split", &heavy);

    // The motivating degenerate case: a constant sample has zero-width
    // pairs and no outliers, where quartile whiskers would collapse.
    let constant = vec![0.72; 100];
    show("constant sample", &constant);
}
