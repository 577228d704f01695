//! Acceptance gate: one test per shipping criterion, each ending in a
//! single `PASS [criterion N]` line. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines; the
//! live smoke test is ignored by default and needs an API key.

mod common;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::lv_oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::Deserialize;
use splitbench::gateway::{
    run_plan, ChatBackend, HttpBackend, MockBackend, MockRule, MockScript, RetryPolicy,
    DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL,
};
use splitbench::judge::{reduce_run, JUDGE_MARKER};
use splitbench::lingua::{
    category_profiles, count_markers, profile_records, tokenize, MarkerDictionary,
};
use splitbench::model::{
    validate_split, ClosedResponse, PromptTemplate, RejectionReason, RequestParams, TrialRecord,
    VariedVariable,
};
use splitbench::prompts::{
    default_bindings, default_plan, default_user_prompts, expand, substitute,
};
use splitbench::report::{write_report, ReportSpec};
use splitbench::stats::letter_values;
use splitbench::store::{
    load_events, load_manifest, load_observations, Event, ObsFilter, RunStore,
};

fn blank_rule() -> MockRule {
    MockRule {
        model: None,
        user_contains: None,
        system_contains: None,
        repetition_index: None,
        response: None,
        responses: None,
        fail_transient: None,
        fail_permanent: None,
    }
}

/// Mock script with scripted refusals (repetition 7) and a seeded choice
/// among three phrasings (repetition 2). Judge rules come first: every
/// judge request carries the judge marker or a response fragment, so
/// generation rules never see them.
fn variety_script() -> MockScript {
    let judge = |fragment: &str, reply: &str| MockRule {
        user_contains: Some(fragment.to_string()),
        response: Some(reply.to_string()),
        ..blank_rule()
    };
    MockScript {
        rules: vec![
            judge(
                "I refuse to take part",
                r#"{"kept": null, "given": null, "refusal": true}"#,
            ),
            judge("keep 7", r#"{"kept": 7, "given": 3, "refusal": false}"#),
            judge("keep 3", r#"{"kept": 3, "given": 7, "refusal": false}"#),
            judge("keep 6", r#"{"kept": 6, "given": 4, "refusal": false}"#),
            judge(JUDGE_MARKER, r#"{"kept": 5, "given": 5, "refusal": false}"#),
            MockRule {
                repetition_index: Some(7),
                response: Some("I refuse to take part in this.".to_string()),
                ..blank_rule()
            },
            MockRule {
                repetition_index: Some(2),
                responses: Some(vec![
                    "Thinking it over, I keep 7 and give 3.".to_string(),
                    "I keep 3, the rest goes to them.".to_string(),
                    "Certainly: I keep 6 and give 4 because that seems fair.".to_string(),
                ]),
                ..blank_rule()
            },
        ],
        default_response: "I think the fairest choice is an even split, so I keep 5 and give 5."
            .to_string(),
        seed: 42,
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn c01_full_mock_run_accounts_for_every_trial() {
    let started = Instant::now();
    let work = tempfile::tempdir().unwrap();
    let runs_dir = work.path().join("runs");

    let plan = default_plan(VariedVariable::SystemPrompt, vec!["mock-model".to_string()]);
    assert_eq!(expand(&plan).unwrap().len(), 800);

    let mut store = RunStore::create(&runs_dir, &plan, "mock").unwrap();
    let run_id = store.run_id().to_string();
    let backend: Arc<dyn ChatBackend> = Arc::new(MockBackend::new(variety_script()).unwrap());
    let policy = RetryPolicy::default();

    let gen = run_plan(Arc::clone(&backend), &policy, &mut store, 32, None)
        .await
        .unwrap();
    assert_eq!(gen.generated, 800);
    assert_eq!(gen.failed_generations, 0);

    let red = reduce_run(backend, &policy, &mut store, 32).await.unwrap();
    assert_eq!(red.observations, 720);
    assert_eq!(red.rejections, 80);
    store.mark_complete().unwrap();

    let manifest = load_manifest(&runs_dir, &run_id).unwrap();
    assert_eq!(manifest.counts.generated, 800);
    assert_eq!(
        manifest.counts.observations + manifest.counts.total_rejections(),
        800,
        "observations + rejections must account for every trial"
    );
    assert_eq!(
        manifest.counts.rejections.get(&RejectionReason::Refusal),
        Some(&80)
    );

    let observations = load_observations(&runs_dir, &run_id, &ObsFilter::default()).unwrap();
    let mut per_group: BTreeMap<(String, usize), usize> = BTreeMap::new();
    for o in &observations {
        *per_group
            .entry((o.model.clone(), o.variant_index))
            .or_default() += 1;
    }
    assert_eq!(per_group.len(), 8);
    for (&(_, variant), &n) in &per_group {
        assert!(
            n <= 100,
            "variant {variant} has {n} observations, budget is 100"
        );
        assert_eq!(n, 90, "variant {variant}");
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:.2?}");
    println!(
        "PASS [criterion 1] 800-trial mock run in {elapsed:.2?}: 720 observations + 80 rejections, \
         every (model, variant) within the 100-observation budget"
    );
}

/// One dataset per n, cycling through shapes that stress ties, skew, small
/// supports, and occasional extremes.
fn dataset(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| match seed % 4 {
            0 => rng.gen::<f64>(),
            1 => (rng.gen::<f64>() * 10.0).round() / 10.0,
            2 => rng.gen_range(0..8) as f64,
            _ => {
                if i % 9 == 0 {
                    rng.gen::<f64>() * 1000.0
                } else {
                    0.5 + rng.gen::<f64>() * 0.01
                }
            }
        })
        .collect()
}

#[test]
fn c02_letter_values_match_independent_oracle() {
    for i in 0..200usize {
        let n = i + 1;
        let samples = dataset(n, 5000 + i as u64);
        let got = letter_values(&samples, 0.1).unwrap();
        let want = lv_oracle::letter_values(&samples, 0.1);
        assert_eq!(got.median, want.median, "median, dataset {i} (n={n})");
        assert_eq!(got.pairs, want.pairs, "pairs, dataset {i} (n={n})");
        assert_eq!(got.outliers, want.outliers, "outliers, dataset {i} (n={n})");

        let fraction = got.outliers.len() as f64 / n as f64;
        assert!(
            fraction <= 0.1 + 2.0 / n as f64,
            "dataset {i} (n={n}): outlier fraction {fraction}"
        );
    }
    println!(
        "PASS [criterion 2] letter values equal the sorting oracle on 200 datasets \
         (n = 1..=200), outlier fraction always <= 0.1 + 2/n"
    );
}

#[test]
fn c03_constant_data_yields_zero_width_pairs_and_no_outliers() {
    let samples = vec![0.72; 100];
    let summary = letter_values(&samples, 0.1).unwrap();
    assert_eq!(summary.median, 0.72);
    assert!(!summary.pairs.is_empty());
    for &(lo, hi) in &summary.pairs {
        assert_eq!((lo, hi), (0.72, 0.72), "pair must collapse to the point");
    }
    assert!(
        summary.outliers.is_empty(),
        "no point lies outside a zero-width fence"
    );

    let want = lv_oracle::letter_values(&samples, 0.1);
    assert_eq!(summary.pairs, want.pairs);
    assert_eq!(summary.outliers, want.outliers);
    println!(
        "PASS [criterion 3] 100 identical values collapse every letter-value pair to \
         zero width with zero outliers"
    );
}

#[derive(Deserialize)]
struct CorpusItem {
    expected: String,
    judge_output: Option<String>,
}

fn judge_corpus() -> Vec<CorpusItem> {
    serde_json::from_str(include_str!("fixtures/judge_corpus.json")).unwrap()
}

fn reason_from_label(label: &str) -> RejectionReason {
    use RejectionReason::*;
    for reason in [
        Refusal,
        MissingField,
        NegativeValue,
        SumMismatch,
        InvalidFormat,
        Ambiguous,
        EmptyResponse,
        JudgeFailure,
    ] {
        if reason.as_str() == label {
            return reason;
        }
    }
    panic!("unknown expected label `{label}`");
}

/// Corpus item i rides trial (prompt i/10, repetition i%10). Judge rules are
/// listed first and key on the embedded `corpus-item-NNN` response, so the
/// prompt-keyed generation rules only ever see generation requests.
fn corpus_script(items: &[CorpusItem], prompts: &[PromptTemplate]) -> MockScript {
    let mut rules = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let marker = format!("corpus-item-{i:03}");
        match (&item.judge_output, item.expected.as_str()) {
            (Some(reply), _) => rules.push(MockRule {
                user_contains: Some(marker),
                response: Some(reply.clone()),
                ..blank_rule()
            }),
            (None, "judge_failure") => rules.push(MockRule {
                user_contains: Some(marker),
                fail_permanent: Some(true),
                ..blank_rule()
            }),
            (None, _) => {} // an empty open response never reaches the judge
        }
    }
    for (i, item) in items.iter().enumerate() {
        let prefix = prompts[i / 10].text.split('<').next().unwrap().to_string();
        let response = if item.expected == "empty_response" {
            String::new()
        } else {
            format!("corpus-item-{i:03}")
        };
        rules.push(MockRule {
            user_contains: Some(prefix),
            repetition_index: Some(i % 10),
            response: Some(response),
            ..blank_rule()
        });
    }
    MockScript {
        rules,
        default_response: "unmatched request".to_string(),
        seed: 0,
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn c04_judge_reduction_classifies_labeled_corpus_exactly() {
    let items = judge_corpus();
    assert_eq!(items.len(), 100);

    let mut plan = default_plan(VariedVariable::SystemPrompt, vec!["mock-model".to_string()]);
    plan.variants.truncate(1);
    plan.variant_count = 1;
    assert_eq!(plan.user_prompts.len(), 10);
    assert_eq!(plan.repetitions, 10);

    let work = tempfile::tempdir().unwrap();
    let runs_dir = work.path().join("runs");
    let mut store = RunStore::create(&runs_dir, &plan, "mock").unwrap();
    let run_id = store.run_id().to_string();

    let script = corpus_script(&items, &plan.user_prompts);
    let backend: Arc<dyn ChatBackend> = Arc::new(MockBackend::new(script).unwrap());
    let policy = RetryPolicy::default();

    let gen = run_plan(Arc::clone(&backend), &policy, &mut store, 16, None)
        .await
        .unwrap();
    assert_eq!(gen.generated, 100);
    assert_eq!(gen.failed_generations, 0);
    let red = reduce_run(backend, &policy, &mut store, 16).await.unwrap();
    store.mark_complete().unwrap();

    let mut observed = BTreeMap::new();
    let mut rejected = BTreeMap::new();
    for event in load_events(&runs_dir, &run_id).unwrap() {
        match event {
            Event::Observation { observation } => {
                observed.insert(observation.trial_id.clone(), observation);
            }
            Event::Rejection(r) => {
                rejected.insert(r.trial_id.clone(), r.reason);
            }
            _ => {}
        }
    }

    let mut expected_rejections: BTreeMap<RejectionReason, u64> = BTreeMap::new();
    let mut expected_valid = 0u64;
    for (i, item) in items.iter().enumerate() {
        let trial_id = format!("m00-v00-p{:02}-r{:02}", i / 10, i % 10);
        if item.expected == "valid" {
            expected_valid += 1;
            assert!(
                observed.contains_key(&trial_id),
                "item {i} ({trial_id}) should be a valid observation, got {:?}",
                rejected.get(&trial_id)
            );
            assert!(!rejected.contains_key(&trial_id), "item {i} double-counted");
        } else {
            let want = reason_from_label(&item.expected);
            *expected_rejections.entry(want).or_default() += 1;
            assert_eq!(
                rejected.get(&trial_id),
                Some(&want),
                "item {i} ({trial_id}): judge output {:?}",
                item.judge_output
            );
            assert!(!observed.contains_key(&trial_id), "item {i} double-counted");
        }
    }

    let manifest = load_manifest(&runs_dir, &run_id).unwrap();
    assert_eq!(manifest.counts.observations, expected_valid);
    assert_eq!(manifest.counts.rejections, expected_rejections);
    assert_eq!(red.observations as u64, expected_valid);
    // Empty responses are rejected without a judge call.
    assert_eq!(manifest.counts.judged, 96);

    println!(
        "PASS [criterion 4] 100-item labeled corpus reduced with zero misclassifications: \
         {} valid, rejections {}",
        expected_valid,
        expected_rejections
            .iter()
            .map(|(r, n)| format!("{}={n}", r.as_str()))
            .collect::<Vec<_>>()
            .join(", ")
    );
}

#[test]
fn c05_split_validation_respects_the_sum_tolerance_dichotomy() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut accepted = 0usize;
    let mut rejected = 0usize;

    for i in 0..1000usize {
        let mantissa: i64 = rng.gen_range(1..=1_000_000_000_000);
        let scale: u32 = rng.gen_range(0..=8);
        let amount = Decimal::from_i128_with_scale(mantissa as i128, scale);
        let tol = Decimal::new(1, 9).max(amount * Decimal::new(1, 6));

        let (kept, given) = if i % 17 == 0 {
            // Over-keeping within tolerance: valid, clamps to retain all.
            (amount + tol / Decimal::TWO, Decimal::ZERO)
        } else {
            let kept = amount * Decimal::new(rng.gen_range(0..=1000), 3);
            let offset = match i % 5 {
                0 => Decimal::ZERO,
                1 => tol / Decimal::TWO,
                2 => tol, // boundary: |sum - amount| == tol still passes
                3 => tol * Decimal::TWO,
                _ => tol * Decimal::from(3),
            };
            let mut given = amount - kept - offset;
            if given.is_sign_negative() {
                given = amount - kept + offset;
            }
            (kept, given)
        };

        let within = (kept + given - amount).abs() <= tol;
        let closed = ClosedResponse {
            kept: Some(kept),
            given: Some(given),
            refusal: false,
        };
        match validate_split(&closed, amount) {
            Ok(split) => {
                assert!(within, "triple {i}: out-of-tolerance sum was accepted");
                assert!(
                    (0.0..=1.0).contains(&split.retained_fraction),
                    "triple {i}: fraction {}",
                    split.retained_fraction
                );
                let independent = kept.min(amount).to_f64().unwrap() / amount.to_f64().unwrap();
                assert!(
                    (split.retained_fraction - independent).abs() <= 1e-9,
                    "triple {i}: fraction {} vs kept/amount {independent}",
                    split.retained_fraction
                );
                accepted += 1;
            }
            Err(reason) => {
                assert!(
                    !within,
                    "triple {i}: in-tolerance sum rejected as {reason:?}"
                );
                assert_eq!(reason, RejectionReason::SumMismatch, "triple {i}");
                rejected += 1;
            }
        }
    }

    assert!(
        accepted >= 300 && rejected >= 300,
        "{accepted} / {rejected}"
    );
    println!(
        "PASS [criterion 5] 1000 (kept, given, amount) triples: {accepted} within tolerance \
         accepted with retained fraction in [0,1] exact to 1e-9, {rejected} beyond tolerance rejected"
    );
}

#[test]
fn c06_substitution_leaves_no_tokens_and_preserves_the_length_identity() {
    let rendered = substitute(&default_user_prompts()[0], &default_bindings());
    assert_eq!(
        rendered,
        "Assume, you have 10$. Decide how to distribute them between you and a participant."
    );

    let fragments = [
        "You have ",
        "<A>",
        "<U>",
        " to split",
        "<X>",
        "<a>",
        " <",
        "> ",
        "amount<A",
        "U> ",
        "between <A> and <U>",
        "µ-unit ",
        "é. ",
        "no tokens here",
        "<A><A><U>",
        "a < b > c ",
    ];
    let units = ["$", "USD", "€", "tokens", "¤", "zł", "credits", "¢¢"];

    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for i in 0..500usize {
        let mut text = String::new();
        for _ in 0..rng.gen_range(0..=12) {
            text.push_str(fragments[rng.gen_range(0..fragments.len())]);
        }
        let mut amount = String::new();
        for _ in 0..rng.gen_range(1..=12) {
            amount.push(char::from(b'0' + rng.gen_range(0..10u8)));
        }
        if rng.gen_bool(0.3) {
            let at = rng.gen_range(1..=amount.len());
            amount.insert(at.min(amount.len() - 1).max(1), '.');
        }
        let unit = units[rng.gen_range(0..units.len())].repeat(rng.gen_range(1..=2));

        let template = PromptTemplate {
            id: format!("rand-{i}"),
            text: text.clone(),
        };
        let mut bindings = default_bindings();
        bindings.amount = amount.clone();
        bindings.unit = unit.clone();

        let out = substitute(&template, &bindings);
        assert!(!out.contains("<A>"), "template {i}: {text:?} -> {out:?}");
        assert!(!out.contains("<U>"), "template {i}: {text:?} -> {out:?}");

        let c_a = text.matches("<A>").count() as i64;
        let c_u = text.matches("<U>").count() as i64;
        assert_eq!(
            out.len() as i64,
            text.len() as i64 + c_a * (amount.len() as i64 - 3) + c_u * (unit.len() as i64 - 3),
            "template {i}: {text:?} with amount {amount:?}, unit {unit:?}"
        );
    }
    println!(
        "PASS [criterion 6] 500 random substitutions: no tokens survive, byte-length identity \
         holds, worked example renders byte-exactly"
    );
}

fn quadratic_count(tokens: &[String], phrase: &[String]) -> usize {
    (0..tokens.len())
        .filter(|&i| i + phrase.len() <= tokens.len() && tokens[i..i + phrase.len()] == *phrase)
        .count()
}

fn planted_record(i: usize, text: String) -> TrialRecord {
    TrialRecord {
        trial_id: format!("planted-{i:03}"),
        model: "planted-model".to_string(),
        variant_index: 0,
        prompt_index: 0,
        repetition_index: 0,
        rendered_system: String::new(),
        rendered_user: String::new(),
        bindings: default_bindings(),
        request_params: RequestParams {
            temperature: 1.0,
            max_tokens: 64,
        },
        open_response: Some(text),
        stage_metadata: Vec::new(),
    }
}

#[test]
fn c07_marker_counts_match_quadratic_oracle_and_recover_planted_rates() {
    let epistemic = MarkerDictionary::epistemic();
    let discourse = MarkerDictionary::discourse();

    // Vocabulary rich in boundary traps: superstrings of markers, "if"
    // with and without the excluded connective heads, apostrophes.
    let vocabulary = [
        "think",
        "thinking",
        "i",
        "believe",
        "believer",
        "might",
        "mightier",
        "must",
        "musty",
        "as",
        "if",
        "even",
        "iffy",
        "so",
        "sow",
        "since",
        "sincere",
        "thus",
        "although",
        "however",
        "because",
        "therefore",
        "perhaps",
        "certainly",
        "uncertainly",
        "probably",
        "likely",
        "unlikely",
        "keep",
        "give",
        "split",
        "fair",
        "i'll",
        "can't",
        "the",
        "and",
    ];
    let separators = [" ", " ", " ", ", ", ". ", "; ", "\n"];

    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for t in 0..100usize {
        let mut text = String::new();
        for w in 0..rng.gen_range(0..=250) {
            if w > 0 {
                text.push_str(separators[rng.gen_range(0..separators.len())]);
            }
            text.push_str(vocabulary[rng.gen_range(0..vocabulary.len())]);
        }
        let tokens = tokenize(&text);

        for dict in [&epistemic, &discourse] {
            let got = count_markers(&tokens, dict);
            let mut want_total = 0;
            let mut want_by_phrase = BTreeMap::new();
            for phrase in &dict.phrases {
                let n = quadratic_count(&tokens, phrase);
                if n > 0 {
                    want_by_phrase.insert(phrase.join(" "), n);
                }
                want_total += n;
            }
            assert_eq!(got.total, want_total, "text {t}, dict {}", dict.name);
            assert_eq!(
                got.by_phrase, want_by_phrase,
                "text {t}, dict {}",
                dict.name
            );
        }
    }

    // Planted rates: 40 docs of 100 tokens; "perhaps" planted 2 or 4 times
    // (mean 3 per 100 tokens), "because" planted 5 times in every doc.
    let mut records = Vec::new();
    for d in 0..40usize {
        let epistemic_plants = if d % 2 == 0 { 2 } else { 4 };
        let mut words = vec!["perhaps"; epistemic_plants];
        words.extend(std::iter::repeat_n("because", 5));
        words.resize(100, "filler");
        for i in (1..words.len()).rev() {
            words.swap(i, rng.gen_range(0..=i));
        }
        records.push(planted_record(d, words.join(" ")));
    }
    let profiles = profile_records(&records, &[]);
    let groups = category_profiles(&profiles);
    assert_eq!(groups.len(), 1);
    let group = &groups[0];
    assert_eq!(group.trials, 40);
    assert!(
        (group.epistemic_mean - 3.0).abs() <= 0.03,
        "epistemic mean {}",
        group.epistemic_mean
    );
    assert!(
        (group.discourse_mean - 5.0).abs() <= 0.05,
        "discourse mean {}",
        group.discourse_mean
    );

    println!(
        "PASS [criterion 7] marker counts equal the quadratic scan on 100 trap-laden texts; \
         planted rates recovered within 1% (epistemic {:.3}/100, discourse {:.3}/100)",
        group.epistemic_mean, group.discourse_mean
    );
}

async fn full_pipeline(root: &std::path::Path) -> (String, std::path::PathBuf) {
    let runs_dir = root.join("runs");
    let plan = default_plan(VariedVariable::SystemPrompt, vec!["mock-model".to_string()]);
    let mut store = RunStore::create(&runs_dir, &plan, "mock").unwrap();
    let run_id = store.run_id().to_string();
    let backend: Arc<dyn ChatBackend> = Arc::new(MockBackend::new(variety_script()).unwrap());
    let policy = RetryPolicy::default();
    run_plan(Arc::clone(&backend), &policy, &mut store, 32, None)
        .await
        .unwrap();
    reduce_run(backend, &policy, &mut store, 32).await.unwrap();
    store.mark_complete().unwrap();

    let out_dir = root.join("out").join(&run_id);
    write_report(&runs_dir, &out_dir, &ReportSpec::new(&run_id)).unwrap();
    (run_id, out_dir)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn c08_repeated_pipelines_produce_byte_identical_artifacts() {
    let work_a = tempfile::tempdir().unwrap();
    let work_b = tempfile::tempdir().unwrap();
    let (run_a, out_a) = full_pipeline(work_a.path()).await;
    let (run_b, out_b) = full_pipeline(work_b.path()).await;
    assert_eq!(
        run_a, run_b,
        "same plan and backend must yield the same run id"
    );

    for name in [
        "observations.csv",
        "summary.csv",
        "markers.csv",
        "letter_values.svg",
    ] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert!(!a.is_empty(), "{name} is empty");
        assert_eq!(a, b, "{name} differs between invocations");
    }
    println!(
        "PASS [criterion 8] two pipeline invocations produced byte-identical observation CSV \
         and SVG report (plus summary and marker tables)"
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn c09_resume_after_interrupt_issues_only_the_missing_calls() {
    let interrupted = 123usize;
    let plan = default_plan(VariedVariable::SystemPrompt, vec!["mock-model".to_string()]);
    let policy = RetryPolicy::default();

    // Interrupted: stop after 123 persisted trials and drop the handle,
    // as a crash would.
    let work_a = tempfile::tempdir().unwrap();
    let runs_a = work_a.path().join("runs");
    let run_id;
    {
        let mut store = RunStore::create(&runs_a, &plan, "mock").unwrap();
        run_id = store.run_id().to_string();
        let backend = Arc::new(MockBackend::new(variety_script()).unwrap());
        let out = run_plan(
            backend.clone() as Arc<dyn ChatBackend>,
            &policy,
            &mut store,
            32,
            Some(interrupted),
        )
        .await
        .unwrap();
        assert_eq!(out.generated, interrupted);
        assert_eq!(backend.call_count(), interrupted as u64);
    }

    // Restart with a fresh store handle and a fresh call counter.
    let mut store = RunStore::open(&runs_a, &run_id).unwrap();
    assert_eq!(store.generated_trial_ids().len(), interrupted);
    let backend = Arc::new(MockBackend::new(variety_script()).unwrap());
    let out = run_plan(
        backend.clone() as Arc<dyn ChatBackend>,
        &policy,
        &mut store,
        32,
        None,
    )
    .await
    .unwrap();
    assert_eq!(out.skipped, interrupted);
    assert_eq!(out.generated, 800 - interrupted);
    assert_eq!(
        backend.call_count(),
        (800 - interrupted) as u64,
        "the restart must query exactly the missing trials"
    );
    reduce_run(
        backend.clone() as Arc<dyn ChatBackend>,
        &policy,
        &mut store,
        32,
    )
    .await
    .unwrap();
    store.mark_complete().unwrap();

    // Uninterrupted control run with the same plan.
    let work_b = tempfile::tempdir().unwrap();
    let runs_b = work_b.path().join("runs");
    let mut control = RunStore::create(&runs_b, &plan, "mock").unwrap();
    let backend: Arc<dyn ChatBackend> = Arc::new(MockBackend::new(variety_script()).unwrap());
    run_plan(Arc::clone(&backend), &policy, &mut control, 32, None)
        .await
        .unwrap();
    reduce_run(backend, &policy, &mut control, 32)
        .await
        .unwrap();
    control.mark_complete().unwrap();

    let mut resumed = load_manifest(&runs_a, &run_id).unwrap();
    let uninterrupted = load_manifest(&runs_b, &run_id).unwrap();
    resumed.created = uninterrupted.created; // wall-clock start is the only allowed difference
    assert_eq!(resumed, uninterrupted);

    println!(
        "PASS [criterion 9] interrupt after {interrupted} trials, restart issued exactly \
         {} generation calls; final manifest matches an uninterrupted run",
        800 - interrupted
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
#[ignore = "talks to a live endpoint; set OPENROUTER_API_KEY and run with --ignored"]
async fn c10_live_smoke_produces_at_least_one_observation() {
    let key = match std::env::var(DEFAULT_API_KEY_ENV) {
        Ok(k) if !k.trim().is_empty() => k,
        _ => {
            println!("SKIP [criterion 10] {DEFAULT_API_KEY_ENV} is not set");
            return;
        }
    };
    let model =
        std::env::var("SPLITBENCH_LIVE_MODEL").unwrap_or_else(|_| "openai/gpt-4o-mini".to_string());

    let mut plan = default_plan(VariedVariable::SystemPrompt, vec![model.clone()]);
    plan.variants.truncate(1);
    plan.variant_count = 1;
    plan.user_prompts.truncate(2);
    plan.repetitions = 2;

    let work = tempfile::tempdir().unwrap();
    let runs_dir = work.path().join("runs");
    let mut store = RunStore::create(&runs_dir, &plan, "live").unwrap();
    let run_id = store.run_id().to_string();

    let backend: Arc<dyn ChatBackend> =
        Arc::new(HttpBackend::new(DEFAULT_BASE_URL, key, Duration::from_secs(90)).unwrap());
    let policy = RetryPolicy::default();
    run_plan(Arc::clone(&backend), &policy, &mut store, 2, None)
        .await
        .unwrap();
    let red = reduce_run(backend, &policy, &mut store, 2).await.unwrap();
    store.mark_complete().unwrap();

    let observations = load_observations(&runs_dir, &run_id, &ObsFilter::default()).unwrap();
    assert!(
        !observations.is_empty(),
        "live run produced no valid observation ({} rejections)",
        red.rejections
    );
    println!(
        "PASS [criterion 10] live smoke against {model}: {} of 4 trials became observations",
        observations.len()
    );
}
