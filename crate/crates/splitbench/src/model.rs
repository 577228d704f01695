//! Shared domain types and the elementary numeric contracts (retained
//! fraction, split validation) used by every other module.
//!
//! Endowment amounts are carried as exact decimal strings end-to-end and
//! parsed to [`Decimal`] for arithmetic, so values with up to 20 fractional
//! digits survive the round trip through prompts, judges, and storage.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum number of fractional digits an amount may carry.
pub const MAX_AMOUNT_SCALE: u32 = 20;

/// A user-prompt template containing zero or more `<A>` / `<U>` tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template `{id}` is empty")]
    Empty { id: String },
    #[error("template `{id}` contains unknown token `{token}` at byte {offset}")]
    UnknownToken {
        id: String,
        token: String,
        offset: usize,
    },
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, TemplateError> {
        let template = Self {
            id: id.into(),
            text: text.into(),
        };
        template.validate()?;
        Ok(template)
    }

    /// Checks the token grammar: `<A>` and `<U>` are the only recognized
    /// tokens; any other `<word>`-shaped span is an error. A bare `<` that
    /// does not look like a token (e.g. "a < b") is ordinary text.
    pub fn validate(&self) -> Result<(), TemplateError> {
        if self.text.is_empty() {
            return Err(TemplateError::Empty {
                id: self.id.clone(),
            });
        }
        for (offset, token) in scan_token_like(&self.text) {
            if token != "<A>" && token != "<U>" {
                return Err(TemplateError::UnknownToken {
                    id: self.id.clone(),
                    token: token.to_string(),
                    offset,
                });
            }
        }
        Ok(())
    }
}

/// Yields `(byte_offset, span)` for every `<word>`-shaped span in `text`,
/// where `word` is one or more ASCII alphanumerics or underscores.
pub(crate) fn scan_token_like(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'>' {
                out.push((i, &text[i..=j]));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out.into_iter()
}

/// The variable bindings for one trial: endowment amount, unit, and the
/// system prompt. `amount` stays a string so the original digits (including
/// trailing zeros) render verbatim into prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bindings {
    pub amount: String,
    pub unit: String,
    pub system_prompt: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BindingsError {
    #[error("amount `{0}` is not a non-negative decimal with at most 20 fractional digits")]
    BadAmount(String),
    #[error("unit must be non-empty")]
    EmptyUnit,
    #[error("unit `{0}` must not contain the template tokens `<A>` or `<U>`")]
    TokenInUnit(String),
}

/// Units render verbatim into user prompts, so they must be non-empty and
/// free of template tokens (otherwise substitution output could smuggle an
/// unreplaced token).
pub fn validate_unit(unit: &str) -> Result<(), BindingsError> {
    if unit.is_empty() {
        return Err(BindingsError::EmptyUnit);
    }
    if unit.contains("<A>") || unit.contains("<U>") {
        return Err(BindingsError::TokenInUnit(unit.to_string()));
    }
    Ok(())
}

impl Bindings {
    pub fn validate(&self) -> Result<(), BindingsError> {
        parse_amount(&self.amount)?;
        validate_unit(&self.unit)?;
        Ok(())
    }

    /// The amount as an exact decimal. Panics if the bindings were never
    /// validated; construction paths all validate first.
    pub fn amount_decimal(&self) -> Decimal {
        parse_amount(&self.amount).expect("bindings validated on construction")
    }
}

/// Parses the amount grammar: `digits[.digits]`, no sign, at most
/// [`MAX_AMOUNT_SCALE`] fractional digits.
pub fn parse_amount(s: &str) -> Result<Decimal, BindingsError> {
    let bad = || BindingsError::BadAmount(s.to_string());
    let (int_part, frac_part) = match s.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (s, None),
    };
    if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    if let Some(frac) = frac_part {
        if frac.is_empty()
            || frac.len() > MAX_AMOUNT_SCALE as usize
            || !frac.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(bad());
        }
    }
    Decimal::from_str(s).map_err(|_| bad())
}

/// Which variable an experiment varies; the other two stay at their defaults
/// for every trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariedVariable {
    SystemPrompt,
    Amount,
    Unit,
}

impl fmt::Display for VariedVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VariedVariable::SystemPrompt => "system_prompt",
            VariedVariable::Amount => "amount",
            VariedVariable::Unit => "unit",
        };
        f.write_str(s)
    }
}

/// The full declarative description of one study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub varied_variable: VariedVariable,
    /// Ordered values for the varied variable.
    pub variants: Vec<String>,
    /// How many variants the plan declares; `variants.len()` must match.
    pub variant_count: usize,
    pub defaults: Bindings,
    pub user_prompts: Vec<PromptTemplate>,
    pub repetitions: u32,
    pub models: Vec<String>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("field `variants`: {got} values given but `variant_count` declares {declared}")]
    VariantCountMismatch { got: usize, declared: usize },
    #[error("field `variants`: values must be pairwise distinct (duplicate at index {0})")]
    DuplicateVariant(usize),
    #[error("field `variants[{index}]`: {source}")]
    BadAmountVariant { index: usize, source: BindingsError },
    #[error("field `variants[{index}]`: {source}")]
    BadUnitVariant { index: usize, source: BindingsError },
    #[error("field `defaults`: {0}")]
    BadDefaults(BindingsError),
    #[error("field `user_prompts`: must contain at least one template")]
    NoUserPrompts,
    #[error("field `user_prompts`: {0}")]
    BadTemplate(TemplateError),
    #[error("field `user_prompts`: duplicate template id `{0}`")]
    DuplicatePromptId(String),
    #[error("field `repetitions`: must be at least 1")]
    ZeroRepetitions,
    #[error("field `temperature`: must be finite and >= 0")]
    BadTemperature,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.variants.len() != self.variant_count {
            return Err(PlanError::VariantCountMismatch {
                got: self.variants.len(),
                declared: self.variant_count,
            });
        }
        for (i, v) in self.variants.iter().enumerate() {
            if self.variants[..i].contains(v) {
                return Err(PlanError::DuplicateVariant(i));
            }
            match self.varied_variable {
                VariedVariable::Amount => {
                    parse_amount(v)
                        .map_err(|source| PlanError::BadAmountVariant { index: i, source })?;
                }
                VariedVariable::Unit => {
                    validate_unit(v)
                        .map_err(|source| PlanError::BadUnitVariant { index: i, source })?;
                }
                VariedVariable::SystemPrompt => {}
            }
        }
        self.defaults.validate().map_err(PlanError::BadDefaults)?;
        if self.user_prompts.is_empty() {
            return Err(PlanError::NoUserPrompts);
        }
        for (i, p) in self.user_prompts.iter().enumerate() {
            p.validate().map_err(PlanError::BadTemplate)?;
            if self.user_prompts[..i].iter().any(|q| q.id == p.id) {
                return Err(PlanError::DuplicatePromptId(p.id.clone()));
            }
        }
        if self.repetitions == 0 {
            return Err(PlanError::ZeroRepetitions);
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(PlanError::BadTemperature);
        }
        // An empty model list is deliberately valid: it expands to an empty
        // run with a valid empty manifest.
        Ok(())
    }

    /// Total trial stubs this plan expands to.
    pub fn stub_count(&self) -> usize {
        self.models.len()
            * self.variants.len()
            * self.user_prompts.len()
            * self.repetitions as usize
    }
}

/// Generation request parameters recorded per trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

/// One metadata entry per pipeline stage (plus per-attempt entries under
/// `<stage>.attempt` names).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMeta {
    pub stage: String,
    pub timestamp: DateTime<Utc>,
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One model query: rendered prompts, request parameters, the raw open
/// response (absent when generation failed), and stage metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub model: String,
    pub variant_index: usize,
    pub prompt_index: usize,
    pub repetition_index: usize,
    pub rendered_system: String,
    pub rendered_user: String,
    /// Effective bindings after applying the varied variable.
    pub bindings: Bindings,
    pub request_params: RequestParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub open_response: Option<String>,
    pub stage_metadata: Vec<StageMeta>,
}

impl TrialRecord {
    pub fn push_stage(&mut self, meta: StageMeta) {
        self.stage_metadata.push(meta);
    }
}

/// Judge output reduced from an open response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosedResponse {
    pub kept: Option<Decimal>,
    pub given: Option<Decimal>,
    pub refusal: bool,
}

/// Why a trial was filtered out instead of yielding an observation.
/// Rejections are data, not faults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    /// The judge flagged the open response as a refusal.
    Refusal,
    /// `refusal` was false but `kept` or `given` was absent.
    MissingField,
    /// A split part was negative.
    NegativeValue,
    /// `kept + given` differs from the endowment beyond tolerance.
    SumMismatch,
    /// The judge output held no single well-typed JSON object.
    InvalidFormat,
    /// More than one candidate JSON object in the judge output.
    Ambiguous,
    /// The open response was empty, so no judge call was made.
    EmptyResponse,
    /// The judge transport failed for this trial.
    JudgeFailure,
}

impl RejectionReason {
    pub const ALL: [RejectionReason; 8] = [
        RejectionReason::Refusal,
        RejectionReason::MissingField,
        RejectionReason::NegativeValue,
        RejectionReason::SumMismatch,
        RejectionReason::InvalidFormat,
        RejectionReason::Ambiguous,
        RejectionReason::EmptyResponse,
        RejectionReason::JudgeFailure,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RejectionReason::Refusal => "refusal",
            RejectionReason::MissingField => "missing_field",
            RejectionReason::NegativeValue => "negative_value",
            RejectionReason::SumMismatch => "sum_mismatch",
            RejectionReason::InvalidFormat => "invalid_format",
            RejectionReason::Ambiguous => "ambiguous",
            RejectionReason::EmptyResponse => "empty_response",
            RejectionReason::JudgeFailure => "judge_failure",
        }
    }
}

impl fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A validated split: the numeric core of an observation before trial
/// identifiers are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidSplit {
    pub kept: Decimal,
    pub given: Decimal,
    pub retained_fraction: f64,
}

/// A closed response that passed validation, tied back to its trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub trial_id: String,
    pub model: String,
    pub variant_index: usize,
    pub kept: Decimal,
    pub given: Decimal,
    pub amount: Decimal,
    pub retained_fraction: f64,
}

impl Observation {
    pub fn from_split(trial: &TrialRecord, split: ValidSplit) -> Self {
        Observation {
            trial_id: trial.trial_id.clone(),
            model: trial.model.clone(),
            variant_index: trial.variant_index,
            kept: split.kept,
            given: split.given,
            amount: trial.bindings.amount_decimal(),
            retained_fraction: split.retained_fraction,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SplitError {
    #[error("amount must be positive, got {0}")]
    DegenerateAmount(Decimal),
    #[error("kept must be non-negative, got {0}")]
    NegativeSplit(Decimal),
}

/// Sum tolerance for validating `kept + given` against the endowment.
/// Judges emit rounded JSON numbers, so exact equality is too strict.
pub fn sum_tolerance(amount: Decimal) -> Decimal {
    let floor = Decimal::new(1, 9); // 1e-9
    let relative = amount * Decimal::new(1, 6); // 1e-6 * amount
    floor.max(relative)
}

/// The fraction of the endowment the agent kept for itself.
pub fn retained_fraction(kept: Decimal, amount: Decimal) -> Result<f64, SplitError> {
    if amount.is_zero() {
        return Err(SplitError::DegenerateAmount(amount));
    }
    if kept.is_sign_negative() && !kept.is_zero() {
        return Err(SplitError::NegativeSplit(kept));
    }
    Ok((kept / amount).to_f64().unwrap_or(f64::NAN))
}

/// Validates one closed response against the trial's endowment.
///
/// Returns a [`ValidSplit`] iff `refusal` is false, both parts are present
/// and non-negative, and the parts sum to the endowment within
/// [`sum_tolerance`]. Everything else maps to exactly one
/// [`RejectionReason`]; the check order fixes which reason wins when several
/// apply (refusal, then missing field, then negative value, then sum).
///
/// The returned split is normalized so `kept + given` equals the endowment
/// exactly: tolerance slack in the judge's numbers is absorbed into `given`,
/// and the retained fraction is clamped to `[0, 1]` (the passing checks
/// guarantee it is already within tolerance of that interval).
pub fn validate_split(
    closed: &ClosedResponse,
    amount: Decimal,
) -> Result<ValidSplit, RejectionReason> {
    if closed.refusal {
        return Err(RejectionReason::Refusal);
    }
    let (kept, given) = match (closed.kept, closed.given) {
        (Some(k), Some(g)) => (k, g),
        _ => return Err(RejectionReason::MissingField),
    };
    if (kept.is_sign_negative() && !kept.is_zero())
        || (given.is_sign_negative() && !given.is_zero())
    {
        return Err(RejectionReason::NegativeValue);
    }
    if (kept + given - amount).abs() > sum_tolerance(amount) {
        return Err(RejectionReason::SumMismatch);
    }
    if amount.is_zero() {
        // A zero endowment admits no meaningful fraction; the sum check
        // already forced kept + given to be ~0, but there is nothing to
        // retain a share of.
        return Err(RejectionReason::SumMismatch);
    }
    let kept_eff = kept.min(amount);
    let retained = (kept_eff / amount).to_f64().unwrap_or(f64::NAN);
    Ok(ValidSplit {
        kept: kept_eff,
        given: amount - kept_eff,
        retained_fraction: retained.clamp(0.0, 1.0),
    })
}
