//! Reduction stage: a same-model judge turns each free-form answer into a
//! closed `{kept, given, refusal}` split, which is then validated against
//! the trial's endowment.
//!
//! The judge gets one semantic attempt per trial. Transport failures retry
//! like any other backend call (logged as `judge.attempt` entries), but an
//! answer the judge cannot ground becomes a rejection, never a re-ask.

use std::str::FromStr;
use std::sync::Arc;

use futures::StreamExt;
use rust_decimal::Decimal;

use crate::gateway::{
    call_with_retry, ChatBackend, ChatRequest, MockRule, MockScript, RetryPolicy, RunError,
};
use crate::model::{validate_split, ClosedResponse, RejectionReason, StageMeta, TrialRecord};
use crate::store::{Event, JudgeEvent, JudgeOutcome, RejectionEvent, RunStore};

/// The grading instructions sent to the judge, with `{RESPONSE}`,
/// `{AMOUNT}` and `{UNIT}` placeholders.
pub const JUDGE_PROMPT_TEMPLATE: &str = include_str!("../assets/judge_prompt.txt");

/// A stable fragment of the judge prompt, for mock scripts that need to
/// tell judge calls apart from generation calls.
pub const JUDGE_MARKER: &str = "Report the decision as exactly one JSON object";

/// Closed responses are tiny; this caps judge output length.
pub const JUDGE_MAX_TOKENS: u32 = 256;

/// Renders the judge prompt in a single pass: placeholders in the template
/// are substituted, placeholder-shaped text inside the substituted values
/// is left alone. The amount is the trial's bound string, verbatim.
pub fn render_judge_prompt(response: &str, amount: &str, unit: &str) -> String {
    let template = JUDGE_PROMPT_TEMPLATE;
    let mut out = String::with_capacity(template.len() + response.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let (value, token_len) = if tail.starts_with("{RESPONSE}") {
            (response, "{RESPONSE}".len())
        } else if tail.starts_with("{AMOUNT}") {
            (amount, "{AMOUNT}".len())
        } else if tail.starts_with("{UNIT}") {
            (unit, "{UNIT}".len())
        } else {
            out.push('{');
            rest = &tail[1..];
            continue;
        };
        out.push_str(value);
        rest = &tail[token_len..];
    }
    out.push_str(rest);
    out
}

/// The judge request for one trial: same model, temperature zero.
pub fn judge_request(record: &TrialRecord, response: &str) -> ChatRequest {
    ChatRequest {
        model: record.model.clone(),
        system: String::new(),
        user: render_judge_prompt(response, &record.bindings.amount, &record.bindings.unit),
        temperature: 0.0,
        max_tokens: JUDGE_MAX_TOKENS,
        trial_id: record.trial_id.clone(),
        repetition_index: record.repetition_index,
    }
}

/// Every balanced top-level `{...}` span, honoring JSON string quoting so
/// braces inside string values do not split a candidate.
fn brace_candidates(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' if depth > 0 => in_string = true,
            b'{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            b'}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    spans.push(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    spans
}

/// Missing key or JSON null map to no amount; numbers convert exactly from
/// their decimal literal; any other type disqualifies the candidate.
fn amount_field(value: Option<&serde_json::Value>) -> Option<Option<Decimal>> {
    match value {
        None | Some(serde_json::Value::Null) => Some(None),
        Some(serde_json::Value::Number(n)) => {
            let literal = n.to_string();
            Decimal::from_str(&literal)
                .ok()
                .or_else(|| Decimal::from_scientific(&literal).ok())
                .map(Some)
        }
        Some(_) => None,
    }
}

fn candidate_closed(candidate: &str) -> Option<ClosedResponse> {
    let value: serde_json::Value = serde_json::from_str(candidate).ok()?;
    let obj = value.as_object()?;
    let refusal = obj.get("refusal")?.as_bool()?;
    let kept = amount_field(obj.get("kept"))?;
    let given = amount_field(obj.get("given"))?;
    Some(ClosedResponse {
        kept,
        given,
        refusal,
    })
}

/// Extracts the closed split from raw judge output, tolerating code fences
/// and surrounding prose. Exactly one candidate object may parse: none is
/// `InvalidFormat`, several are `Ambiguous`.
pub fn parse_closed(text: &str) -> Result<ClosedResponse, RejectionReason> {
    let mut parsed: Vec<ClosedResponse> = brace_candidates(text)
        .into_iter()
        .filter_map(candidate_closed)
        .collect();
    match parsed.len() {
        0 => Err(RejectionReason::InvalidFormat),
        1 => Ok(parsed.pop().expect("len checked")),
        _ => Err(RejectionReason::Ambiguous),
    }
}

/// The canonical text form of a closed response, with bare JSON numbers.
/// `parse_closed` inverts it exactly.
pub fn closed_to_json(closed: &ClosedResponse) -> String {
    let amount = |v: &Option<Decimal>| v.map_or("null".to_string(), |d| d.to_string());
    format!(
        r#"{{"kept": {}, "given": {}, "refusal": {}}}"#,
        amount(&closed.kept),
        amount(&closed.given),
        closed.refusal
    )
}

/// What `reduce_run` did in one invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReduceOutcome {
    /// Trials the judge was called for in this invocation.
    pub judged: usize,
    /// New valid observations.
    pub observations: usize,
    /// New rejections, including empty responses and judge failures.
    pub rejections: usize,
    /// Trials already reduced by a previous invocation.
    pub skipped: usize,
    /// Trials with no open response at all (generation failures); these
    /// are never judged and never counted as rejections.
    pub unjudgeable: usize,
}

enum Verdict {
    Observation(crate::model::Observation, ClosedResponse, Option<String>),
    Rejection(RejectionReason, Option<ClosedResponse>, Option<String>),
}

fn judge_verdict(record: &TrialRecord, raw: Option<String>) -> Verdict {
    let Some(raw_text) = raw else {
        return Verdict::Rejection(RejectionReason::JudgeFailure, None, None);
    };
    match parse_closed(&raw_text) {
        Err(reason) => Verdict::Rejection(reason, None, Some(raw_text)),
        Ok(closed) => match validate_split(&closed, record.bindings.amount_decimal()) {
            Err(reason) => Verdict::Rejection(reason, Some(closed), Some(raw_text)),
            Ok(split) => {
                let obs = crate::model::Observation::from_split(record, split);
                Verdict::Observation(obs, closed, Some(raw_text))
            }
        },
    }
}

/// Reduces every generated-but-unreduced trial of the run: empty responses
/// are rejected without a judge call, everything else gets exactly one
/// judge verdict. Idempotent across invocations; failed generations are
/// left alone. On return, observations plus rejections account for every
/// reduced trial with an open response.
pub async fn reduce_run(
    backend: Arc<dyn ChatBackend>,
    policy: &RetryPolicy,
    store: &mut RunStore,
    max_in_flight: usize,
) -> Result<ReduceOutcome, RunError> {
    let records = store.records()?;
    let mut outcome = ReduceOutcome {
        judged: 0,
        observations: 0,
        rejections: 0,
        skipped: 0,
        unjudgeable: 0,
    };

    let mut pending = Vec::new();
    for record in records {
        if store.reduced_trial_ids().contains(&record.trial_id) {
            outcome.skipped += 1;
            continue;
        }
        let Some(response) = record.open_response.clone() else {
            outcome.unjudgeable += 1;
            continue;
        };
        if response.trim().is_empty() {
            append_reduction(
                store,
                &record,
                Verdict::Rejection(RejectionReason::EmptyResponse, None, None),
                Vec::new(),
                &mut outcome,
            )?;
            continue;
        }
        pending.push((record, response));
    }

    let mut verdicts = futures::stream::iter(pending.into_iter().map(|(record, response)| {
        let backend = Arc::clone(&backend);
        let policy = policy.clone();
        async move {
            let request = judge_request(&record, &response);
            let (result, metas) =
                call_with_retry(backend.as_ref(), &policy, &request, "judge").await;
            (record, result.ok().map(|r| r.text), metas)
        }
    }))
    .buffer_unordered(max_in_flight.max(1));

    while let Some((record, raw, metas)) = verdicts.next().await {
        outcome.judged += 1;
        let verdict = judge_verdict(&record, raw);
        append_reduction(store, &record, verdict, metas, &mut outcome)?;
    }
    Ok(outcome)
}

fn append_reduction(
    store: &mut RunStore,
    record: &TrialRecord,
    verdict: Verdict,
    meta: Vec<StageMeta>,
    outcome: &mut ReduceOutcome,
) -> Result<(), RunError> {
    let result = (|| match verdict {
        Verdict::Observation(observation, closed, raw_output) => {
            store.append(&Event::Judge(JudgeEvent {
                trial_id: record.trial_id.clone(),
                model: record.model.clone(),
                variant_index: record.variant_index,
                raw_output,
                closed: Some(closed),
                outcome: JudgeOutcome::Valid,
                meta,
            }))?;
            store.append(&Event::Observation { observation })?;
            outcome.observations += 1;
            Ok(())
        }
        Verdict::Rejection(reason, closed, raw_output) => {
            // An empty response never reached the judge, so it gets no
            // judge event, only the rejection.
            if !(reason == RejectionReason::EmptyResponse && raw_output.is_none()) {
                store.append(&Event::Judge(JudgeEvent {
                    trial_id: record.trial_id.clone(),
                    model: record.model.clone(),
                    variant_index: record.variant_index,
                    raw_output,
                    closed,
                    outcome: JudgeOutcome::Rejected(reason),
                    meta,
                }))?;
            }
            store.append(&Event::Rejection(RejectionEvent {
                trial_id: record.trial_id.clone(),
                model: record.model.clone(),
                variant_index: record.variant_index,
                reason,
            }))?;
            outcome.rejections += 1;
            Ok(())
        }
    })();
    if let Err(e) = result {
        let note = format!(
            "store failure during reduction at trial {}",
            record.trial_id
        );
        let _ = store.mark_aborted(note);
        return Err(RunError::Store(e));
    }
    Ok(())
}

/// A self-contained mock script for demo runs: generation calls answer
/// with an even split, judge calls answer with its closed form. Pairs with
/// the bundled default plan (endowment 10).
pub fn demo_script() -> MockScript {
    MockScript {
        rules: vec![MockRule {
            model: None,
            user_contains: Some(JUDGE_MARKER.to_string()),
            system_contains: None,
            repetition_index: None,
            response: Some(r#"{"kept": 5, "given": 5, "refusal": false}"#.to_string()),
            responses: None,
            fail_transient: None,
            fail_permanent: None,
        }],
        default_response: "I think the fairest choice is an even split, so I keep 5 and give 5."
            .to_string(),
        seed: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockBackend;
    use crate::model::VariedVariable;
    use crate::prompts;
    use crate::store::load_events;
    use proptest::prelude::*;
    use std::time::Duration;

    fn dec(s: &str) -> Decimal {
        Decimal::from_str(s).unwrap()
    }

    #[test]
    fn template_carries_placeholders_and_marker() {
        for needle in ["{RESPONSE}", "{AMOUNT}", "{UNIT}", JUDGE_MARKER] {
            assert!(JUDGE_PROMPT_TEMPLATE.contains(needle), "missing {needle}");
        }
    }

    #[test]
    fn rendering_substitutes_each_placeholder() {
        let prompt = render_judge_prompt("I keep it all.", "0.12345678901234567890", "BTC");
        assert!(prompt.contains("given 0.12345678901234567890 BTC"));
        assert!(prompt.contains("I keep it all."));
        assert!(prompt.contains("the total of 0.12345678901234567890 makes it unambiguous"));
        assert!(!prompt.contains("{RESPONSE}"));
        assert!(!prompt.contains("{AMOUNT}"));
        assert!(!prompt.contains("{UNIT}"));
    }

    #[test]
    fn rendering_never_rescans_substituted_text() {
        let prompt = render_judge_prompt("See {AMOUNT} and {RESPONSE}.", "10", "$");
        // The braces inside the answer survive verbatim.
        assert!(prompt.contains("See {AMOUNT} and {RESPONSE}."));
    }

    #[test]
    fn parses_a_bare_object() {
        let closed = parse_closed(r#"{"kept": 7, "given": 3, "refusal": false}"#).unwrap();
        assert_eq!(closed.kept, Some(dec("7")));
        assert_eq!(closed.given, Some(dec("3")));
        assert!(!closed.refusal);
    }

    #[test]
    fn parses_through_fences_and_prose() {
        let text = "Sure! Here is the grading result:\n```json\n{\"kept\": 2.5, \"given\": 7.5, \"refusal\": false}\n```\nLet me know if you need anything else.";
        let closed = parse_closed(text).unwrap();
        assert_eq!(closed.kept, Some(dec("2.5")));
        assert_eq!(closed.given, Some(dec("7.5")));
    }

    #[test]
    fn preserves_long_decimal_literals_exactly() {
        let closed =
            parse_closed(r#"{"kept": 0.12345678901234567890, "given": 0, "refusal": false}"#)
                .unwrap();
        assert_eq!(closed.kept, Some(dec("0.12345678901234567890")));
    }

    #[test]
    fn accepts_nulls_and_missing_amounts() {
        let closed = parse_closed(r#"{"kept": null, "given": 4, "refusal": false}"#).unwrap();
        assert_eq!(closed.kept, None);
        assert_eq!(closed.given, Some(dec("4")));

        let closed = parse_closed(r#"{"refusal": true}"#).unwrap();
        assert_eq!(closed.kept, None);
        assert_eq!(closed.given, None);
        assert!(closed.refusal);
    }

    #[test]
    fn scientific_notation_converts() {
        let closed = parse_closed(r#"{"kept": 1e2, "given": 0, "refusal": false}"#).unwrap();
        assert_eq!(closed.kept, Some(dec("100")));
    }

    #[test]
    fn braces_inside_string_values_stay_in_one_candidate() {
        let text = r#"{"kept": 5, "given": 5, "refusal": false, "note": "don't {panic}"}"#;
        let closed = parse_closed(text).unwrap();
        assert_eq!(closed.kept, Some(dec("5")));
    }

    #[test]
    fn rejects_when_no_candidate_parses() {
        for text in [
            "",
            "I keep five.",
            "{not json}",
            r#"{"kept": 5, "given": 5}"#,
            r#"{"kept": "5", "given": 5, "refusal": false}"#,
            r#"{"kept": 5, "given": 5, "refusal": "no"}"#,
            r#"{"kept": [5], "given": 5, "refusal": false}"#,
        ] {
            assert_eq!(
                parse_closed(text),
                Err(RejectionReason::InvalidFormat),
                "{text:?}"
            );
        }
    }

    #[test]
    fn two_parseable_objects_are_ambiguous() {
        let text = r#"{"kept": 5, "given": 5, "refusal": false} or maybe {"kept": 6, "given": 4, "refusal": false}"#;
        assert_eq!(parse_closed(text), Err(RejectionReason::Ambiguous));
    }

    #[test]
    fn unparseable_neighbors_do_not_make_output_ambiguous() {
        let text = r#"Given {AMOUNT}, the split is {"kept": 5, "given": 5, "refusal": false}."#;
        assert!(parse_closed(text).is_ok());
    }

    proptest! {
        #[test]
        fn closed_form_round_trips(
            kept in proptest::option::of((0u64..1_000_000_000, 0u32..6)),
            given in proptest::option::of((0u64..1_000_000_000, 0u32..6)),
            refusal: bool,
        ) {
            let to_dec = |(m, s): (u64, u32)| Decimal::new(m as i64, s);
            let closed = ClosedResponse {
                kept: kept.map(to_dec),
                given: given.map(to_dec),
                refusal,
            };
            prop_assert_eq!(parse_closed(&closed_to_json(&closed)), Ok(closed));
        }
    }

    fn fast_policy() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            base_backoff: Duration::from_millis(1),
            multiplier: 2.0,
            jitter_frac: 0.5,
        }
    }

    fn tiny_plan() -> crate::model::ExperimentPlan {
        let mut plan = prompts::default_plan(VariedVariable::SystemPrompt, vec!["m".into()]);
        plan.variants.truncate(2);
        plan.variant_count = 2;
        plan.user_prompts.truncate(2);
        plan.repetitions = 2;
        plan
    }

    fn rule(user_contains: &str, response: &str) -> MockRule {
        MockRule {
            model: None,
            user_contains: Some(user_contains.to_string()),
            system_contains: None,
            repetition_index: None,
            response: Some(response.to_string()),
            responses: None,
            fail_transient: None,
            fail_permanent: None,
        }
    }

    async fn generated_store(
        runs_dir: &std::path::Path,
        script: &MockScript,
    ) -> (RunStore, Arc<MockBackend>) {
        let plan = tiny_plan();
        let mut store = RunStore::create(runs_dir, &plan, "mock").unwrap();
        let backend = Arc::new(MockBackend::new(script.clone()).unwrap());
        let dyn_backend: Arc<dyn ChatBackend> = backend.clone();
        crate::gateway::run_plan(dyn_backend, &fast_policy(), &mut store, 4, None)
            .await
            .unwrap();
        (store, backend)
    }

    /// A generation-only rule: applies to requests of one repetition index
    /// that are not judge calls (judge rules must precede it).
    fn gen_rule(repetition: usize, response: &str) -> MockRule {
        MockRule {
            repetition_index: Some(repetition),
            user_contains: None,
            ..rule("", response)
        }
    }

    #[tokio::test]
    async fn reduce_accounts_for_every_open_response() {
        // 8 trials: repetition 0 keeps seven, repetition 1 refuses. Judge
        // rules come first and are keyed on the embedded answer text, so
        // the repetition-keyed generation rules never shadow them.
        let script = MockScript {
            rules: vec![
                rule("I keep 7", r#"{"kept": 7, "given": 3, "refusal": false}"#),
                rule(
                    "No thanks",
                    r#"{"kept": null, "given": null, "refusal": true}"#,
                ),
                gen_rule(0, "I keep 7$ and give 3$."),
                gen_rule(1, "No thanks, I will not take part."),
            ],
            default_response: "unused".into(),
            seed: 0,
        };

        let tmp = tempfile::tempdir().unwrap();
        let (mut store, backend) = generated_store(tmp.path(), &script).await;
        assert_eq!(store.manifest().counts.generated, 8);
        let generation_calls = backend.call_count();

        let dyn_backend: Arc<dyn ChatBackend> = backend.clone();
        let outcome = reduce_run(dyn_backend, &fast_policy(), &mut store, 4)
            .await
            .unwrap();
        assert_eq!(outcome.judged, 8);
        assert_eq!(outcome.observations, 4);
        assert_eq!(outcome.rejections, 4);
        assert_eq!(outcome.skipped, 0);
        assert_eq!(backend.call_count(), generation_calls + 8);

        let counts = &store.manifest().counts;
        assert_eq!(counts.observations, 4);
        assert_eq!(counts.rejections[&RejectionReason::Refusal], 4);
        assert_eq!(
            counts.observations + counts.total_rejections(),
            counts.generated
        );

        // Every observation retains 0.7 of the default endowment of 10.
        let run_id = store.run_id().to_string();
        drop(store);
        let observations = crate::store::load_observations(
            tmp.path(),
            &run_id,
            &crate::store::ObsFilter::default(),
        )
        .unwrap();
        assert_eq!(observations.len(), 4);
        for obs in &observations {
            assert_eq!(obs.kept, dec("7"));
            assert_eq!(obs.given, dec("3"));
            assert!((obs.retained_fraction - 0.7).abs() < 1e-12);
        }
    }

    #[tokio::test]
    async fn reduce_is_idempotent() {
        let script = MockScript {
            rules: vec![rule(
                JUDGE_MARKER,
                r#"{"kept": 5, "given": 5, "refusal": false}"#,
            )],
            default_response: "I keep 5 and give 5.".into(),
            seed: 0,
        };
        let tmp = tempfile::tempdir().unwrap();
        let (mut store, backend) = generated_store(tmp.path(), &script).await;

        let dyn_backend: Arc<dyn ChatBackend> = backend.clone();
        let first = reduce_run(dyn_backend, &fast_policy(), &mut store, 4)
            .await
            .unwrap();
        assert_eq!(first.judged, 8);
        let calls_after_first = backend.call_count();

        let dyn_backend: Arc<dyn ChatBackend> = backend.clone();
        let second = reduce_run(dyn_backend, &fast_policy(), &mut store, 4)
            .await
            .unwrap();
        assert_eq!(second.judged, 0);
        assert_eq!(second.skipped, 8);
        assert_eq!(second.observations, 0);
        assert_eq!(backend.call_count(), calls_after_first);
        assert_eq!(store.manifest().counts.observations, 8);
    }

    #[tokio::test]
    async fn empty_responses_reject_without_a_judge_call() {
        let script = MockScript {
            rules: vec![
                rule(JUDGE_MARKER, r#"{"kept": 5, "given": 5, "refusal": false}"#),
                gen_rule(0, "   \n"),
            ],
            default_response: "I keep 5 and give 5.".into(),
            seed: 0,
        };
        let tmp = tempfile::tempdir().unwrap();
        let (mut store, backend) = generated_store(tmp.path(), &script).await;
        let generation_calls = backend.call_count();

        let dyn_backend: Arc<dyn ChatBackend> = backend.clone();
        let outcome = reduce_run(dyn_backend, &fast_policy(), &mut store, 4)
            .await
            .unwrap();
        // 4 of 8 trials answered with whitespace; only the other 4 reach
        // the judge.
        assert_eq!(outcome.judged, 4);
        assert_eq!(outcome.observations, 4);
        assert_eq!(outcome.rejections, 4);
        assert_eq!(backend.call_count(), generation_calls + 4);
        assert_eq!(
            store.manifest().counts.rejections[&RejectionReason::EmptyResponse],
            4
        );

        // Empty-response trials have a rejection event but no judge event.
        let run_id = store.run_id().to_string();
        drop(store);
        let events = load_events(tmp.path(), &run_id).unwrap();
        let judge_events = events
            .iter()
            .filter(|e| matches!(e, Event::Judge(_)))
            .count();
        assert_eq!(judge_events, 4);
    }

    #[tokio::test]
    async fn judge_transport_failure_becomes_a_rejection() {
        let script = MockScript {
            rules: vec![{
                let mut r = rule(JUDGE_MARKER, "");
                r.response = None;
                r.fail_transient = Some(99);
                r
            }],
            default_response: "I keep 5 and give 5.".into(),
            seed: 0,
        };
        let tmp = tempfile::tempdir().unwrap();
        let (mut store, backend) = generated_store(tmp.path(), &script).await;

        let dyn_backend: Arc<dyn ChatBackend> = backend.clone();
        let outcome = reduce_run(dyn_backend, &fast_policy(), &mut store, 4)
            .await
            .unwrap();
        assert_eq!(outcome.observations, 0);
        assert_eq!(outcome.rejections, 8);
        assert_eq!(
            store.manifest().counts.rejections[&RejectionReason::JudgeFailure],
            8
        );

        // The exhausted retries leave judge.attempt entries in the event.
        let run_id = store.run_id().to_string();
        drop(store);
        let events = load_events(tmp.path(), &run_id).unwrap();
        let judge_event = events
            .iter()
            .find_map(|e| match e {
                Event::Judge(j) => Some(j),
                _ => None,
            })
            .unwrap();
        let stages: Vec<_> = judge_event.meta.iter().map(|m| m.stage.as_str()).collect();
        assert_eq!(stages, ["judge.attempt", "judge.attempt", "judge"]);
        assert_eq!(
            judge_event.outcome,
            JudgeOutcome::Rejected(RejectionReason::JudgeFailure)
        );
    }

    #[tokio::test]
    async fn failed_generations_are_left_alone() {
        let script = MockScript {
            rules: vec![
                rule(JUDGE_MARKER, r#"{"kept": 5, "given": 5, "refusal": false}"#),
                {
                    let mut r = gen_rule(1, "");
                    r.response = None;
                    r.fail_permanent = Some(true);
                    r
                },
            ],
            default_response: "I keep 5 and give 5.".into(),
            seed: 0,
        };
        let tmp = tempfile::tempdir().unwrap();
        let (mut store, backend) = generated_store(tmp.path(), &script).await;

        let dyn_backend: Arc<dyn ChatBackend> = backend;
        let outcome = reduce_run(dyn_backend, &fast_policy(), &mut store, 4)
            .await
            .unwrap();
        assert_eq!(outcome.unjudgeable, 4);
        assert_eq!(outcome.observations, 4);
        assert_eq!(outcome.rejections, 0);
        let counts = &store.manifest().counts;
        assert_eq!(counts.observations + counts.total_rejections(), 4);
    }

    #[tokio::test]
    async fn demo_script_yields_clean_even_splits() {
        let tmp = tempfile::tempdir().unwrap();
        let (mut store, backend) = generated_store(tmp.path(), &demo_script()).await;
        let dyn_backend: Arc<dyn ChatBackend> = backend;
        let outcome = reduce_run(dyn_backend, &fast_policy(), &mut store, 4)
            .await
            .unwrap();
        assert_eq!(outcome.observations, 8);
        assert_eq!(outcome.rejections, 0);
    }
}
