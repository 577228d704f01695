//! Renders a letter-value chart from synthetic observations and writes it to
//! `letter_values_demo.svg` in the working directory.
//!
//! ```sh
//! cargo run --example render_svg
//! ```

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rust_decimal::prelude::FromPrimitive;
use rust_decimal::Decimal;
use splitbench::model::Observation;
use splitbench::report::{render_chart, ReportSpec};
use splitbench::stats::group_summaries;

/// Synthetic group: `center` is the typical retained fraction, `spread` the
/// half-width of the uniform noise around it.
fn fake_group(
    rng: &mut ChaCha8Rng,
    model: &str,
    variant_index: usize,
    center: f64,
    spread: f64,
    n: usize,
) -> Vec<Observation> {
    let amount = Decimal::from(10);
    (0..n)
        .map(|i| {
            let frac = (center + spread * (rng.gen::<f64>() * 2.0 - 1.0)).clamp(0.0, 1.0);
            let kept = (Decimal::from_f64(frac).unwrap() * amount).round_dp(2);
            Observation {
                trial_id: format!("demo-{model}-v{variant_index:02}-{i:03}"),
                model: model.to_string(),
                variant_index,
                kept,
                given: amount - kept,
                amount,
                retained_fraction: frac,
            }
        })
        .collect()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut observations = Vec::new();
    observations.extend(fake_group(&mut rng, "even-steven", 0, 0.50, 0.04, 120));
    observations.extend(fake_group(&mut rng, "even-steven", 1, 0.55, 0.10, 120));
    observations.extend(fake_group(&mut rng, "keepers-llm", 0, 0.82, 0.12, 120));
    observations.extend(fake_group(&mut rng, "keepers-llm", 1, 0.95, 0.05, 120));

    let models = vec!["even-steven".to_string(), "keepers-llm".to_string()];
    let spec = ReportSpec::new("svg-demo");
    let table = group_summaries(&observations, &models, 2, spec.outlier_prop).unwrap();

    for group in &table.groups {
        println!(
            "{} v{:02}: n = {}, median retained = {:.3}, {} letter-value pairs, {} outliers",
            group.model,
            group.variant_index,
            group.summary.n,
            group.summary.median,
            group.summary.pairs.len(),
            group.summary.outliers.len(),
        );
    }

    let svg = render_chart(&table, &spec, "0123456789abcdef");
    let path = "letter_values_demo.svg";
    std::fs::write(path, &svg).expect("write svg");
    println!("\nwrote {path} ({} bytes)", svg.len());
}
