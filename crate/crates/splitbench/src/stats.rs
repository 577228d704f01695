//! Letter-value summaries of retained-fraction distributions.
//!
//! Letter values extend the quartiles by a halving depth recursion
//! (fourths, eighths, sixteenths, ...), which keeps heavily tied data from
//! degenerating: when the interquartile range collapses to zero, deeper
//! letter-value pairs still resolve the tails instead of flagging half the
//! sample as outliers.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Observation;

/// Median, nested letter-value intervals, and outliers for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetterValueSummary {
    /// Sample count.
    pub n: usize,
    pub median: f64,
    /// `(lower, upper)` bounds from innermost (fourths) outward.
    pub pairs: Vec<(f64, f64)>,
    /// Samples strictly outside the outermost pair, in ascending order.
    pub outliers: Vec<f64>,
    pub outlier_prop: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("letter values need a non-empty sample")]
    EmptyGroup,
    #[error("sample contains a non-finite value")]
    NonFiniteSample,
    #[error("outlier proportion must lie strictly between 0 and 1, got {0}")]
    BadOutlierProp(f64),
}

/// Depths are exact half-integers; tracking `2 * depth` as an integer keeps
/// the recursion free of float drift.
fn depth_sequence(n: usize) -> impl Iterator<Item = u64> {
    let mut halves = n as u64 + 1; // d1 = (n + 1) / 2
    std::iter::from_fn(move || {
        let current = halves;
        let floor = halves / 2;
        halves = floor + 1; // d_{i+1} = (floor(d_i) + 1) / 2
        Some(current)
    })
}

/// Order statistic at a half-integer depth from the bottom of `sorted`
/// (`halves` = 2 * depth). A fractional depth takes the mean of the two
/// adjacent order statistics.
fn value_at_depth(sorted: &[f64], halves: u64) -> f64 {
    if halves.is_multiple_of(2) {
        sorted[(halves / 2 - 1) as usize]
    } else {
        let m = (halves / 2) as usize;
        (sorted[m - 1] + sorted[m]) / 2.0
    }
}

/// Number of letter-value pairs: the smallest `k >= 1` such that the
/// expected per-side tail count `n / 2^(k+1)` does not exceed
/// `max(1, n * outlier_prop / 2)`, i.e. the shallowest nesting that renders
/// at most about `outlier_prop` of the data as outliers.
fn pair_count(n: usize, outlier_prop: f64) -> usize {
    let target = (n as f64 * outlier_prop / 2.0).max(1.0);
    let mut k = 1usize;
    while k < 64 && n as f64 / 2f64.powi(k as i32 + 1) > target {
        k += 1;
    }
    k
}

/// Computes the letter-value summary of `samples`.
///
/// The depth recursion is `d1 = (n+1)/2`, `d_{i+1} = (floor(d_i)+1)/2`; the
/// median sits at `d1` and pair `i` at `d_{i+1}`. Once the recursion reaches
/// depth 1 the pair spans the full sample range and deeper pairs would only
/// repeat it, so the nesting stops there.
pub fn letter_values(samples: &[f64], outlier_prop: f64) -> Result<LetterValueSummary, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptyGroup);
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFiniteSample);
    }
    if !(outlier_prop > 0.0 && outlier_prop < 1.0) {
        return Err(StatsError::BadOutlierProp(outlier_prop));
    }

    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = sorted.len();

    let mut depths = depth_sequence(n);
    let median_halves = depths.next().expect("infinite sequence");
    let median = value_at_depth(&sorted, median_halves);

    let k = pair_count(n, outlier_prop);
    let mut pairs = Vec::with_capacity(k);
    for halves in depths.take(k) {
        let lower = value_at_depth(&sorted, halves);
        let upper = value_at_depth(&sorted, 2 * (n as u64 + 1) - halves);
        pairs.push((lower, upper));
        if halves == 2 {
            break; // depth 1 covers the full range; deeper pairs repeat it
        }
    }

    let (outer_lower, outer_upper) = *pairs.last().expect("k >= 1");
    let outliers = sorted
        .iter()
        .copied()
        .filter(|&x| x < outer_lower || x > outer_upper)
        .collect();

    Ok(LetterValueSummary {
        n,
        median,
        pairs,
        outliers,
        outlier_prop,
    })
}

/// One summarized (model, variant) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub model: String,
    pub variant_index: usize,
    pub summary: LetterValueSummary,
}

/// Summaries for every non-empty group, plus the grid combinations that had
/// no observations at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub groups: Vec<GroupSummary>,
    /// `(model, variant_index)` combinations from the expected grid with
    /// zero observations.
    pub empty_groups: Vec<(String, usize)>,
    pub outlier_prop: f64,
}

/// Groups observations by (model, variant) and summarizes retained
/// fractions per group. `models` x `variant_count` describes the expected
/// grid; combinations absent from the data land in the coverage note.
pub fn group_summaries(
    observations: &[Observation],
    models: &[String],
    variant_count: usize,
    outlier_prop: f64,
) -> Result<SummaryTable, StatsError> {
    let mut grouped: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for obs in observations {
        grouped
            .entry((obs.model.clone(), obs.variant_index))
            .or_default()
            .push(obs.retained_fraction);
    }

    let mut groups = Vec::with_capacity(grouped.len());
    for ((model, variant_index), samples) in &grouped {
        groups.push(GroupSummary {
            model: model.clone(),
            variant_index: *variant_index,
            summary: letter_values(samples, outlier_prop)?,
        });
    }

    let mut empty_groups = Vec::new();
    for model in models {
        for variant in 0..variant_count {
            if !grouped.contains_key(&(model.clone(), variant)) {
                empty_groups.push((model.clone(), variant));
            }
        }
    }

    Ok(SummaryTable {
        groups,
        empty_groups,
        outlier_prop,
    })
}

/// Serializes the summary table as CSV. The pair columns run out to the
/// deepest nesting present in the table; shallower groups leave the extra
/// cells empty, so adding models or variants never reorders existing
/// columns.
pub fn write_summary_csv<W: Write>(
    table: &SummaryTable,
    run_id: &str,
    out: W,
) -> Result<(), csv::Error> {
    let max_pairs = table
        .groups
        .iter()
        .map(|g| g.summary.pairs.len())
        .max()
        .unwrap_or(0);

    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec![
        "run_id".to_string(),
        "model".to_string(),
        "variant".to_string(),
        "n".to_string(),
        "median".to_string(),
    ];
    for k in 1..=max_pairs {
        header.push(format!("pair{k}_lower"));
        header.push(format!("pair{k}_upper"));
    }
    header.push("outlier_count".to_string());
    writer.write_record(&header)?;

    for group in &table.groups {
        let mut row = vec![
            run_id.to_string(),
            group.model.clone(),
            group.variant_index.to_string(),
            group.summary.n.to_string(),
            group.summary.median.to_string(),
        ];
        for k in 0..max_pairs {
            match group.summary.pairs.get(k) {
                Some((lo, hi)) => {
                    row.push(lo.to_string());
                    row.push(hi.to_string());
                }
                None => {
                    row.push(String::new());
                    row.push(String::new());
                }
            }
        }
        row.push(group.summary.outliers.len().to_string());
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}
