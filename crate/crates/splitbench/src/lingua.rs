//! Linguistic marker profiles over open responses: hedging/certainty
//! vocabulary, discourse connectives, and conditional clauses, grouped by
//! the decision the trial ended up expressing.
//!
//! Matching is token-based. A phrase hits only when its tokens appear as a
//! contiguous token run, so "thinking" never counts for "think" and
//! "as if" never leaks an "if" clause.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::model::{Observation, TrialRecord};

/// Lowercased word tokens: alphanumeric runs, with apostrophes kept when
/// they sit between alphanumerics ("don't" is one token). Curly
/// apostrophes normalize to ASCII.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if (c == '\'' || c == '\u{2019}')
            && !current.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            current.push('\'');
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// A named list of marker phrases, each stored as its token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkerDictionary {
    pub name: String,
    pub phrases: Vec<Vec<String>>,
}

impl MarkerDictionary {
    /// One phrase per line; blank lines and `#` comments are skipped.
    pub fn parse(name: &str, text: &str) -> MarkerDictionary {
        let phrases = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(tokenize)
            .filter(|p| !p.is_empty())
            .collect();
        MarkerDictionary {
            name: name.to_string(),
            phrases,
        }
    }

    pub fn epistemic() -> MarkerDictionary {
        MarkerDictionary::parse("epistemic", include_str!("../assets/markers_epistemic.txt"))
    }

    pub fn discourse() -> MarkerDictionary {
        MarkerDictionary::parse("discourse", include_str!("../assets/markers_discourse.txt"))
    }
}

/// Occurrence counts for one dictionary over one token stream. Phrases
/// count independently, so overlapping phrases may each score.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MarkerHits {
    pub total: usize,
    /// Space-joined phrase -> occurrences, nonzero entries only.
    pub by_phrase: BTreeMap<String, usize>,
}

pub fn count_markers(tokens: &[String], dict: &MarkerDictionary) -> MarkerHits {
    let mut hits = MarkerHits::default();
    for phrase in &dict.phrases {
        if phrase.len() > tokens.len() {
            continue;
        }
        let occurrences = tokens
            .windows(phrase.len())
            .filter(|w| *w == phrase.as_slice())
            .count();
        if occurrences > 0 {
            hits.total += occurrences;
            hits.by_phrase.insert(phrase.join(" "), occurrences);
        }
    }
    hits
}

/// Conditional clauses: "if" tokens that are not the tail of the "as if"
/// or "even if" connectives.
pub fn count_if_clauses(tokens: &[String]) -> usize {
    tokens
        .iter()
        .enumerate()
        .filter(|(i, t)| {
            *t == "if"
                && (*i == 0 || {
                    let prev = tokens[i - 1].as_str();
                    prev != "as" && prev != "even"
                })
        })
        .count()
}

/// Where a retained fraction lands: an even-handed band around one half,
/// inclusive, with self- and other-favoring on either side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionCategory {
    FavorsOther,
    Fair,
    FavorsSelf,
}

impl DecisionCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            DecisionCategory::FavorsOther => "favors_other",
            DecisionCategory::Fair => "fair",
            DecisionCategory::FavorsSelf => "favors_self",
        }
    }
}

pub fn categorize_decision(retained_fraction: f64) -> DecisionCategory {
    if retained_fraction < 0.45 {
        DecisionCategory::FavorsOther
    } else if retained_fraction <= 0.55 {
        DecisionCategory::Fair
    } else {
        DecisionCategory::FavorsSelf
    }
}

/// Marker counts for one trial's open response. `decision_category` is
/// absent when the trial produced no valid observation; such trials are
/// still profiled, under an uncategorized bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerProfile {
    pub trial_id: String,
    pub model: String,
    pub variant_index: usize,
    pub token_count: usize,
    pub epistemic: MarkerHits,
    pub discourse: MarkerHits,
    pub if_clauses: usize,
    pub decision_category: Option<DecisionCategory>,
}

impl MarkerProfile {
    /// Hits per 100 tokens; an empty response rates zero.
    pub fn rate_per_100(hits: usize, token_count: usize) -> f64 {
        if token_count == 0 {
            0.0
        } else {
            hits as f64 * 100.0 / token_count as f64
        }
    }

    pub fn epistemic_rate(&self) -> f64 {
        Self::rate_per_100(self.epistemic.total, self.token_count)
    }

    pub fn discourse_rate(&self) -> f64 {
        Self::rate_per_100(self.discourse.total, self.token_count)
    }

    pub fn if_rate(&self) -> f64 {
        Self::rate_per_100(self.if_clauses, self.token_count)
    }
}

/// Profiles every trial that produced an open response, labeling each with
/// the decision category of its observation when one exists.
pub fn profile_records(
    records: &[TrialRecord],
    observations: &[Observation],
) -> Vec<MarkerProfile> {
    let epistemic = MarkerDictionary::epistemic();
    let discourse = MarkerDictionary::discourse();
    let categories: BTreeMap<&str, DecisionCategory> = observations
        .iter()
        .map(|o| {
            (
                o.trial_id.as_str(),
                categorize_decision(o.retained_fraction),
            )
        })
        .collect();
    records
        .iter()
        .filter_map(|record| {
            let response = record.open_response.as_deref()?;
            let tokens = tokenize(response);
            Some(MarkerProfile {
                trial_id: record.trial_id.clone(),
                model: record.model.clone(),
                variant_index: record.variant_index,
                token_count: tokens.len(),
                epistemic: count_markers(&tokens, &epistemic),
                discourse: count_markers(&tokens, &discourse),
                if_clauses: count_if_clauses(&tokens),
                decision_category: categories.get(record.trial_id.as_str()).copied(),
            })
        })
        .collect()
}

/// Aggregated marker rates for one (model, decision category) group.
/// Variances are population variances of the per-trial rates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryProfile {
    pub model: String,
    pub category: Option<DecisionCategory>,
    pub trials: usize,
    pub epistemic_mean: f64,
    pub epistemic_var: f64,
    pub discourse_mean: f64,
    pub discourse_var: f64,
    pub if_mean: f64,
    pub if_var: f64,
    /// Distinct marker phrases seen anywhere in the group.
    pub epistemic_types: usize,
    pub discourse_types: usize,
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Groups profiles by (model, decision category); the uncategorized bucket
/// sorts first within each model.
pub fn category_profiles(profiles: &[MarkerProfile]) -> Vec<CategoryProfile> {
    let mut groups: BTreeMap<(String, Option<DecisionCategory>), Vec<&MarkerProfile>> =
        BTreeMap::new();
    for p in profiles {
        groups
            .entry((p.model.clone(), p.decision_category))
            .or_default()
            .push(p);
    }
    groups
        .into_iter()
        .map(|((model, category), members)| {
            let epistemic: Vec<f64> = members.iter().map(|p| p.epistemic_rate()).collect();
            let discourse: Vec<f64> = members.iter().map(|p| p.discourse_rate()).collect();
            let ifs: Vec<f64> = members.iter().map(|p| p.if_rate()).collect();
            let (epistemic_mean, epistemic_var) = mean_var(&epistemic);
            let (discourse_mean, discourse_var) = mean_var(&discourse);
            let (if_mean, if_var) = mean_var(&ifs);
            let epistemic_types: BTreeSet<&str> = members
                .iter()
                .flat_map(|p| p.epistemic.by_phrase.keys().map(String::as_str))
                .collect();
            let discourse_types: BTreeSet<&str> = members
                .iter()
                .flat_map(|p| p.discourse.by_phrase.keys().map(String::as_str))
                .collect();
            CategoryProfile {
                model,
                category,
                trials: members.len(),
                epistemic_mean,
                epistemic_var,
                discourse_mean,
                discourse_var,
                if_mean,
                if_var,
                epistemic_types: epistemic_types.len(),
                discourse_types: discourse_types.len(),
            }
        })
        .collect()
}

/// One row per (model, decision category) group.
pub fn write_marker_csv<W: Write>(
    profiles: &[CategoryProfile],
    writer: W,
) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "model",
        "category",
        "trials",
        "epistemic_mean",
        "epistemic_var",
        "discourse_mean",
        "discourse_var",
        "if_mean",
        "if_var",
        "epistemic_types",
        "discourse_types",
    ])?;
    for p in profiles {
        out.write_record([
            p.model.as_str(),
            p.category.map_or("uncategorized", |c| c.as_str()),
            &p.trials.to_string(),
            &format!("{:.6}", p.epistemic_mean),
            &format!("{:.6}", p.epistemic_var),
            &format!("{:.6}", p.discourse_mean),
            &format!("{:.6}", p.discourse_var),
            &format!("{:.6}", p.if_mean),
            &format!("{:.6}", p.if_var),
            &p.epistemic_types.to_string(),
            &p.discourse_types.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
