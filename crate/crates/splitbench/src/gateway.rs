//! Chat-completions transport: a live OpenAI-style HTTP backend and a
//! deterministic scripted mock, behind one async trait.
//!
//! The gateway is the only concurrent part of the pipeline. `run_plan`
//! keeps at most `max_in_flight` requests outstanding and hands each
//! finished record to the single store writer as it completes; callers must
//! not assume completion order.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use chrono::Utc;
use futures::StreamExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{PlanError, StageMeta, TrialRecord};
use crate::prompts::expand;
use crate::store::{Event, RunStore, StoreError};

/// One chat call: rendered prompts plus sampling parameters. `trial_id` and
/// `repetition_index` carry the originating trial so the mock backend can
/// key deterministic choices and scripted matches.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub trial_id: String,
    pub repetition_index: usize,
}

impl ChatRequest {
    /// The generation-stage request for a trial stub.
    pub fn generation(stub: &TrialRecord) -> ChatRequest {
        ChatRequest {
            model: stub.model.clone(),
            system: stub.rendered_system.clone(),
            user: stub.rendered_user.clone(),
            temperature: stub.request_params.temperature,
            max_tokens: stub.request_params.max_tokens,
            trial_id: stub.trial_id.clone(),
            repetition_index: stub.repetition_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub prompt_tokens: Option<u32>,
    pub completion_tokens: Option<u32>,
}

/// Transport failures, split by how the retry loop must treat them.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    /// Worth retrying: rate limits, 5xx, timeouts, connection drops.
    #[error("transient backend failure: {0}")]
    Transient(String),
    /// Not worth retrying: auth failures, bad requests, scripted denials.
    #[error("permanent backend failure: {0}")]
    Permanent(String),
    /// The backend answered but the payload was not the expected shape.
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn chat(&self, request: &ChatRequest) -> Result<ChatReply, BackendError>;
    /// Short stable tag used in run ids ("live", "mock").
    fn kind(&self) -> &'static str;
}

/// Seedless, dependency-free FNV-1a: stable across platforms and releases,
/// used wherever the gateway needs a deterministic pseudo-random choice.
fn fnv1a64(parts: &[&[u8]]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for part in parts {
        for &b in *part {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
    }
    hash
}

/// Exponential backoff with bounded deterministic jitter. With
/// `jitter_frac <= multiplier - 1` consecutive delays never decrease.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff: Duration,
    pub multiplier: f64,
    /// Fraction of the nominal delay added as jitter, in `[0, multiplier-1]`.
    pub jitter_frac: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_backoff: Duration::from_millis(500),
            multiplier: 2.0,
            jitter_frac: 0.5,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("max_attempts must be at least 1")]
    NoAttempts,
    #[error("multiplier must be at least 1")]
    ShrinkingBackoff,
    #[error("jitter_frac must lie in [0, multiplier - 1] to keep delays non-decreasing")]
    JitterTooWide,
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.max_attempts < 1 {
            return Err(PolicyError::NoAttempts);
        }
        if self.multiplier.is_nan() || self.multiplier < 1.0 {
            return Err(PolicyError::ShrinkingBackoff);
        }
        if !(0.0..=self.multiplier - 1.0).contains(&self.jitter_frac) {
            return Err(PolicyError::JitterTooWide);
        }
        Ok(())
    }

    /// Delay before retrying after `failed_attempts` failures of `key`.
    /// Deterministic in its inputs.
    pub fn delay(&self, key: &str, failed_attempts: u32) -> Duration {
        let unit = fnv1a64(&[key.as_bytes(), &failed_attempts.to_le_bytes()]) as f64
            / (u64::MAX as f64 + 1.0);
        let factor =
            self.multiplier.powi(failed_attempts as i32 - 1) * (1.0 + self.jitter_frac * unit);
        Duration::from_secs_f64(self.base_backoff.as_secs_f64() * factor)
    }
}

/// Runs one backend call with retries on transient failures. Every
/// non-final attempt logs a `{stage}.attempt` entry; the final attempt,
/// successful or not, logs the single `{stage}` entry.
pub async fn call_with_retry(
    backend: &dyn ChatBackend,
    policy: &RetryPolicy,
    request: &ChatRequest,
    stage: &str,
) -> (Result<ChatReply, BackendError>, Vec<StageMeta>) {
    let mut metas = Vec::new();
    let max_attempts = policy.max_attempts.max(1);
    for attempt in 1..=max_attempts {
        let timestamp = Utc::now();
        let start = Instant::now();
        let result = backend.chat(request).await;
        let duration_ms = start.elapsed().as_millis() as u64;
        let is_final = match &result {
            Ok(_) => true,
            Err(BackendError::Transient(_)) => attempt == max_attempts,
            Err(_) => true,
        };
        let (tokens, error) = match &result {
            Ok(reply) => ((reply.prompt_tokens, reply.completion_tokens), None),
            Err(e) => ((None, None), Some(e.to_string())),
        };
        metas.push(StageMeta {
            stage: if is_final {
                stage.to_string()
            } else {
                format!("{stage}.attempt")
            },
            timestamp,
            duration_ms,
            prompt_tokens: tokens.0,
            completion_tokens: tokens.1,
            error,
        });
        if is_final {
            return (result, metas);
        }
        tokio::time::sleep(policy.delay(&request.trial_id, attempt)).await;
    }
    unreachable!("loop returns on the final attempt");
}

/// Generation stage for one stub: on success the open response is set; on
/// failure the record stays (flagged by the error in its `generate` entry)
/// with `open_response` absent.
pub async fn complete(
    backend: &dyn ChatBackend,
    policy: &RetryPolicy,
    mut stub: TrialRecord,
) -> TrialRecord {
    let request = ChatRequest::generation(&stub);
    let (result, metas) = call_with_retry(backend, policy, &request, "generate").await;
    stub.stage_metadata.extend(metas);
    if let Ok(reply) = result {
        stub.open_response = Some(reply.text);
    }
    stub
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("stored plan is no longer valid: {0}")]
    Plan(#[from] PlanError),
}

/// What `run_plan` did in one invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOutcome {
    /// Trials completed and persisted by this invocation.
    pub generated: usize,
    /// Trials skipped because a previous invocation already persisted them.
    pub skipped: usize,
    /// Among the newly generated, how many ended without an open response.
    pub failed_generations: usize,
}

/// Runs the generation stage for every stub not yet persisted, streaming
/// each finished record into the store. `stop_after` bounds how many new
/// records this invocation persists (a crash-injection hook for tests);
/// `None` runs to completion.
pub async fn run_plan(
    backend: Arc<dyn ChatBackend>,
    policy: &RetryPolicy,
    store: &mut RunStore,
    max_in_flight: usize,
    stop_after: Option<usize>,
) -> Result<RunOutcome, RunError> {
    let stubs = expand(store.plan())?;
    let skip = store.generated_trial_ids().clone();
    let pending: Vec<TrialRecord> = stubs
        .into_iter()
        .filter(|s| !skip.contains(&s.trial_id))
        .collect();
    let limit = stop_after.unwrap_or(pending.len()).min(pending.len());

    let mut completions = futures::stream::iter(pending.into_iter().map(|stub| {
        let backend = Arc::clone(&backend);
        let policy = policy.clone();
        async move { complete(backend.as_ref(), &policy, stub).await }
    }))
    .buffer_unordered(max_in_flight.max(1));

    let mut generated = 0usize;
    let mut failed_generations = 0usize;
    while generated < limit {
        let Some(record) = completions.next().await else {
            break;
        };
        if record.open_response.is_none() {
            failed_generations += 1;
        }
        if let Err(e) = store.append(&Event::Generate { record }) {
            let note = format!(
                "store failure during generation; last persisted trial: {}",
                store.last_generated_trial().unwrap_or("none")
            );
            // Best effort: the abort note itself may fail on a dead disk.
            let _ = store.mark_aborted(note);
            return Err(RunError::Store(e));
        }
        generated += 1;
    }

    Ok(RunOutcome {
        generated,
        skipped: skip.len(),
        failed_generations,
    })
}

/// One scripted mock rule: all present match fields must hold, first
/// matching rule wins. A `fail_transient` rule stops applying after it has
/// failed the same request `fail_transient` times, letting the next
/// matching rule (or the default response) take over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetition_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responses: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_transient: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_permanent: Option<bool>,
}

impl MockRule {
    fn matches(&self, req: &ChatRequest) -> bool {
        self.model.as_ref().is_none_or(|m| *m == req.model)
            && self
                .user_contains
                .as_ref()
                .is_none_or(|s| req.user.contains(s.as_str()))
            && self
                .system_contains
                .as_ref()
                .is_none_or(|s| req.system.contains(s.as_str()))
            && self
                .repetition_index
                .is_none_or(|r| r == req.repetition_index)
    }

    fn action_count(&self) -> usize {
        usize::from(self.response.is_some())
            + usize::from(self.responses.is_some())
            + usize::from(self.fail_transient.is_some())
            + usize::from(self.fail_permanent == Some(true))
    }
}

/// A deterministic canned backend, described by a JSON document:
///
/// ```json
/// {
///   "seed": 7,
///   "default_response": "I keep 5 and give 5.",
///   "rules": [
///     { "user_contains": "rice", "response": "I refuse." },
///     { "repetition_index": 3, "responses": ["keep all", "give all"] },
///     { "model": "m", "fail_transient": 2 },
///     { "system_contains": "broken", "fail_permanent": true }
///   ]
/// }
/// ```
///
/// Rules are tried in order against every request; the first match applies.
/// `responses` picks one entry by a seeded hash of the trial id, so a given
/// script and plan always replay identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    pub default_response: String,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("mock script JSON at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("mock script rule {0} must set exactly one of response / responses / fail_transient / fail_permanent")]
    AmbiguousRule(usize),
    #[error("mock script rule {0}: responses must be non-empty")]
    EmptyResponses(usize),
}

impl MockScript {
    pub fn parse(json: &str) -> Result<MockScript, ScriptError> {
        let script: MockScript = serde_json::from_str(json).map_err(|e| ScriptError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        script.validate()?;
        Ok(script)
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        for (i, rule) in self.rules.iter().enumerate() {
            if rule.action_count() != 1 {
                return Err(ScriptError::AmbiguousRule(i));
            }
            if let Some(rs) = &rule.responses {
                if rs.is_empty() {
                    return Err(ScriptError::EmptyResponses(i));
                }
            }
        }
        Ok(())
    }
}

/// In-memory mock transport. Counts every call (the resume tests hinge on
/// that) and tracks per-request failure budgets for `fail_transient` rules.
pub struct MockBackend {
    script: MockScript,
    calls: AtomicU64,
    transient_budget: Mutex<HashMap<u64, u32>>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Result<MockBackend, ScriptError> {
        script.validate()?;
        Ok(MockBackend {
            script,
            calls: AtomicU64::new(0),
            transient_budget: Mutex::new(HashMap::new()),
        })
    }

    /// Total chat calls served, including scripted failures.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn reply(&self, req: &ChatRequest, text: &str) -> ChatReply {
        // Rough, deterministic token estimates: enough for metadata tests.
        ChatReply {
            text: text.to_string(),
            prompt_tokens: Some(((req.system.len() + req.user.len()) / 4) as u32),
            completion_tokens: Some((text.len() / 4).max(1) as u32),
        }
    }
}

#[async_trait]
impl ChatBackend for MockBackend {
    async fn chat(&self, req: &ChatRequest) -> Result<ChatReply, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        for rule in &self.script.rules {
            if !rule.matches(req) {
                continue;
            }
            if let Some(times) = rule.fail_transient {
                let key = fnv1a64(&[
                    req.model.as_bytes(),
                    req.system.as_bytes(),
                    req.user.as_bytes(),
                    req.trial_id.as_bytes(),
                ]);
                let mut budget = self.transient_budget.lock().expect("mock lock");
                let used = budget.entry(key).or_insert(0);
                if *used < times {
                    *used += 1;
                    return Err(BackendError::Transient(format!(
                        "scripted transient failure {used} of {times}"
                    )));
                }
                // Budget exhausted: this rule steps aside.
                continue;
            }
            if rule.fail_permanent == Some(true) {
                return Err(BackendError::Permanent("scripted permanent failure".into()));
            }
            if let Some(text) = &rule.response {
                return Ok(self.reply(req, text));
            }
            if let Some(texts) = &rule.responses {
                let idx = fnv1a64(&[&self.script.seed.to_le_bytes(), req.trial_id.as_bytes()])
                    as usize
                    % texts.len();
                return Ok(self.reply(req, &texts[idx]));
            }
        }
        Ok(self.reply(req, &self.script.default_response.clone()))
    }

    fn kind(&self) -> &'static str {
        "mock"
    }
}

/// Live OpenAI-style chat-completions backend: POST
/// `{base_url}/chat/completions` with a bearer key.
pub struct HttpBackend {
    client: reqwest::Client,
    base_url: String,
    api_key: String,
}

pub const DEFAULT_BASE_URL: &str = "https://openrouter.ai/api/v1";
pub const DEFAULT_API_KEY_ENV: &str = "OPENROUTER_API_KEY";

impl HttpBackend {
    pub fn new(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        request_timeout: Duration,
    ) -> Result<HttpBackend, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(request_timeout)
            .build()
            .map_err(|e| BackendError::Permanent(format!("http client: {e}")))?;
        Ok(HttpBackend {
            client,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
        })
    }
}

/// The request document for one chat call. An empty system prompt sends no
/// system message at all.
pub fn build_request_body(req: &ChatRequest) -> serde_json::Value {
    let mut messages = Vec::new();
    if !req.system.is_empty() {
        messages.push(serde_json::json!({ "role": "system", "content": req.system }));
    }
    messages.push(serde_json::json!({ "role": "user", "content": req.user }));
    serde_json::json!({
        "model": req.model,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    })
}

#[derive(Deserialize)]
struct WireReply {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: Option<u32>,
    #[serde(default)]
    completion_tokens: Option<u32>,
}

/// Classifies an HTTP response into a reply or a typed failure: 429/408/5xx
/// are transient, other non-success statuses permanent, undecodable
/// payloads protocol errors.
pub fn classify_response(status: u16, body: &str) -> Result<ChatReply, BackendError> {
    match status {
        200..=299 => {}
        408 | 429 | 500..=599 => {
            return Err(BackendError::Transient(format!(
                "HTTP {status}: {}",
                truncate(body, 200)
            )))
        }
        401 | 403 => {
            return Err(BackendError::Permanent(format!(
                "HTTP {status} (check the API key): {}",
                truncate(body, 200)
            )))
        }
        _ => {
            return Err(BackendError::Permanent(format!(
                "HTTP {status}: {}",
                truncate(body, 200)
            )))
        }
    }
    let wire: WireReply = serde_json::from_str(body)
        .map_err(|e| BackendError::Protocol(format!("undecodable payload: {e}")))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Protocol("payload has no choices".into()))?;
    let (prompt_tokens, completion_tokens) = wire
        .usage
        .map(|u| (u.prompt_tokens, u.completion_tokens))
        .unwrap_or((None, None));
    Ok(ChatReply {
        text: choice.message.content,
        prompt_tokens,
        completion_tokens,
    })
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[async_trait]
impl ChatBackend for HttpBackend {
    async fn chat(&self, req: &ChatRequest) -> Result<ChatReply, BackendError> {
        let url = format!("{}/chat/completions", self.base_url);
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&build_request_body(req))
            .send()
            .await
            .map_err(|e| {
                if e.is_timeout() || e.is_connect() {
                    BackendError::Transient(format!("request failed: {e}"))
                } else {
                    BackendError::Permanent(format!("request failed: {e}"))
                }
            })?;
        let status = response.status().as_u16();
        let body = response
            .text()
            .await
            .map_err(|e| BackendError::Transient(format!("body read failed: {e}")))?;
        classify_response(status, &body)
    }

    fn kind(&self) -> &'static str {
        "live"
    }
}
