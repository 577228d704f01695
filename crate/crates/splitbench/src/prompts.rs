//! Template rendering and plan expansion: turns an [`ExperimentPlan`] into
//! the exact ordered list of trial stubs, varying one variable while the
//! others stay pinned to the defaults.
//!
//! The bundled variant sets (system prompts, amounts, units) and the ten
//! user-prompt templates live under `assets/` and are compiled in; a plan
//! file can replace any of them.

use serde::Deserialize;
use thiserror::Error;

use crate::model::{
    parse_amount, validate_unit, Bindings, ExperimentPlan, PlanError, PromptTemplate,
    RequestParams, TrialRecord, VariedVariable,
};

pub const DEFAULT_SYSTEM_PROMPT: &str = "You are a helpful assistant.";
pub const DEFAULT_AMOUNT: &str = "10";
pub const DEFAULT_UNIT: &str = "$";
pub const DEFAULT_REPETITIONS: u32 = 10;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

/// The baseline bindings every trial starts from; the varied variable then
/// overrides exactly one field.
pub fn default_bindings() -> Bindings {
    Bindings {
        amount: DEFAULT_AMOUNT.to_string(),
        unit: DEFAULT_UNIT.to_string(),
        system_prompt: DEFAULT_SYSTEM_PROMPT.to_string(),
    }
}

/// Replaces every `<A>` with the amount and every `<U>` with the unit, in
/// one left-to-right pass. Substituted text is never re-scanned, so a
/// binding value cannot trigger further replacement.
pub fn substitute(template: &PromptTemplate, bindings: &Bindings) -> String {
    let text = &template.text;
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len() + 16);
    let mut last = 0;
    let mut i = 0;
    // Token boundaries are pure ASCII, so byte scanning cannot split a
    // multi-byte character.
    while i + 3 <= bytes.len() {
        if bytes[i] == b'<'
            && bytes[i + 2] == b'>'
            && (bytes[i + 1] == b'A' || bytes[i + 1] == b'U')
        {
            out.push_str(&text[last..i]);
            out.push_str(if bytes[i + 1] == b'A' {
                &bindings.amount
            } else {
                &bindings.unit
            });
            i += 3;
            last = i;
        } else {
            i += 1;
        }
    }
    out.push_str(&text[last..]);
    out
}

/// Deterministic trial identifier. The two-digit padding makes the
/// lexicographic order of identifiers coincide with expansion order for up
/// to 100 values per axis; wider plans stay unique, merely sorted
/// differently.
pub fn trial_id(model_idx: usize, variant_idx: usize, prompt_idx: usize, rep_idx: usize) -> String {
    format!("m{model_idx:02}-v{variant_idx:02}-p{prompt_idx:02}-r{rep_idx:02}")
}

/// Expands a plan into trial stubs, ordered model-major, then variant,
/// prompt, repetition. Only the varied variable differs from the defaults
/// in any stub.
pub fn expand(plan: &ExperimentPlan) -> Result<Vec<TrialRecord>, PlanError> {
    plan.validate()?;
    let params = RequestParams {
        temperature: plan.temperature,
        max_tokens: plan.max_tokens,
    };
    let mut stubs = Vec::with_capacity(plan.stub_count());
    for (mi, model) in plan.models.iter().enumerate() {
        for (vi, variant) in plan.variants.iter().enumerate() {
            let mut bindings = plan.defaults.clone();
            match plan.varied_variable {
                VariedVariable::SystemPrompt => bindings.system_prompt = variant.clone(),
                VariedVariable::Amount => bindings.amount = variant.clone(),
                VariedVariable::Unit => bindings.unit = variant.clone(),
            }
            for (pi, prompt) in plan.user_prompts.iter().enumerate() {
                let rendered_user = substitute(prompt, &bindings);
                for rep in 0..plan.repetitions as usize {
                    stubs.push(TrialRecord {
                        trial_id: trial_id(mi, vi, pi, rep),
                        model: model.clone(),
                        variant_index: vi,
                        prompt_index: pi,
                        repetition_index: rep,
                        rendered_system: bindings.system_prompt.clone(),
                        rendered_user: rendered_user.clone(),
                        bindings: bindings.clone(),
                        request_params: params,
                        open_response: None,
                        stage_metadata: Vec::new(),
                    });
                }
            }
        }
    }
    Ok(stubs)
}

/// An ordered set of values for one varied variable, each value carrying a
/// free-text provenance note.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantSet {
    pub kind: VariedVariable,
    pub values: Vec<String>,
    /// One note per value, parallel to `values`.
    pub provenance: Vec<String>,
}

impl VariantSet {
    pub fn validate(&self) -> Result<(), PlanError> {
        for (i, v) in self.values.iter().enumerate() {
            if self.values[..i].contains(v) {
                return Err(PlanError::DuplicateVariant(i));
            }
            match self.kind {
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
        Ok(())
    }
}

/// `{ value, note }` entries used by the amount and unit assets.
#[derive(Deserialize)]
struct VariantEntry {
    value: String,
    note: String,
}

fn variant_set_from_entries(kind: VariedVariable, json: &str) -> VariantSet {
    let entries: Vec<VariantEntry> =
        serde_json::from_str(json).expect("bundled variant asset is well-formed JSON");
    let set = VariantSet {
        kind,
        values: entries.iter().map(|e| e.value.clone()).collect(),
        provenance: entries.into_iter().map(|e| e.note).collect(),
    };
    set.validate().expect("bundled variant asset is valid");
    set
}

/// The eight bundled system-prompt variants: four short ones (the default,
/// an empty prompt, and two other brief assistant prompts) and four longer
/// product-style prompts. The long prompts are in-house placeholders shaped
/// like production assistant prompts with anything date-like left out;
/// replace them via a plan file to study real products.
pub fn default_system_prompts() -> VariantSet {
    let slots: [(&str, &str); 8] = [
        (
            include_str!("../assets/system_prompts/00_helpful.txt"),
            "default assistant prompt",
        ),
        (
            include_str!("../assets/system_prompts/01_empty.txt"),
            "empty system prompt",
        ),
        (
            include_str!("../assets/system_prompts/02_concise.txt"),
            "short assistant prompt, brevity-oriented",
        ),
        (
            include_str!("../assets/system_prompts/03_thoughtful.txt"),
            "short assistant prompt, deliberation-oriented",
        ),
        (
            include_str!("../assets/system_prompts/04_product_aria.txt"),
            "product-style placeholder (suite assistant); swap in a real product prompt, date variables removed",
        ),
        (
            include_str!("../assets/system_prompts/05_product_quill.txt"),
            "product-style placeholder (general chat assistant); swap in a real product prompt, date variables removed",
        ),
        (
            include_str!("../assets/system_prompts/06_product_copperfield.txt"),
            "product-style placeholder (persona-heavy assistant); swap in a real product prompt, date variables removed",
        ),
        (
            include_str!("../assets/system_prompts/07_product_meridian.txt"),
            "product-style placeholder (enterprise assistant); swap in a real product prompt, date variables removed",
        ),
    ];
    let set = VariantSet {
        kind: VariedVariable::SystemPrompt,
        values: slots.iter().map(|(v, _)| v.to_string()).collect(),
        provenance: slots.iter().map(|(_, n)| n.to_string()).collect(),
    };
    set.validate().expect("bundled system prompts are valid");
    set
}

/// The eight bundled endowment amounts: low and high discrete values, a
/// degenerate zero, and continuous values with 10 and 20 fractional digits.
pub fn default_amounts() -> VariantSet {
    variant_set_from_entries(
        VariedVariable::Amount,
        include_str!("../assets/amounts.json"),
    )
}

/// The eight bundled units: currency symbols and codes, a cryptocurrency in
/// two spellings, and two divisible physical goods.
pub fn default_units() -> VariantSet {
    variant_set_from_entries(VariedVariable::Unit, include_str!("../assets/units.json"))
}

pub fn default_variants(kind: VariedVariable) -> VariantSet {
    match kind {
        VariedVariable::SystemPrompt => default_system_prompts(),
        VariedVariable::Amount => default_amounts(),
        VariedVariable::Unit => default_units(),
    }
}

#[derive(Deserialize)]
struct UserPromptEntry {
    id: String,
    text: String,
    #[allow(dead_code)]
    note: String,
}

/// The ten bundled user-prompt templates. The first carries the canonical
/// wording; the other nine are neutral house paraphrases of it and are meant
/// to be replaced when a study fixes its own instruction set.
pub fn default_user_prompts() -> Vec<PromptTemplate> {
    let entries: Vec<UserPromptEntry> =
        serde_json::from_str(include_str!("../assets/user_prompts.json"))
            .expect("bundled user prompts are well-formed JSON");
    entries
        .into_iter()
        .map(|e| PromptTemplate::new(e.id, e.text).expect("bundled user prompts are valid"))
        .collect()
}

/// A ready-to-run plan over the bundled defaults: 8 variants of `varied`,
/// 10 user prompts, 10 repetitions, temperature 1.0.
pub fn default_plan(varied: VariedVariable, models: Vec<String>) -> ExperimentPlan {
    let variants = default_variants(varied).values;
    ExperimentPlan {
        varied_variable: varied,
        variant_count: variants.len(),
        variants,
        defaults: default_bindings(),
        user_prompts: default_user_prompts(),
        repetitions: DEFAULT_REPETITIONS,
        models,
        temperature: DEFAULT_TEMPERATURE,
        max_tokens: DEFAULT_MAX_TOKENS,
    }
}

/// Errors from reading a plan file: a JSON problem with its position, or a
/// structurally valid document that violates a plan invariant.
#[derive(Debug, Error)]
pub enum PlanLoadError {
    #[error("plan JSON at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("plan invalid: {0}")]
    Invalid(#[from] PlanError),
}

/// Either a bare template string (id assigned by position) or an
/// `{ id, text }` object.
#[derive(Deserialize)]
#[serde(untagged)]
enum PromptSpec {
    Text(String),
    Full { id: String, text: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BindingsFile {
    amount: Option<String>,
    unit: Option<String>,
    system_prompt: Option<String>,
}

/// The on-disk plan document. Every field except `varied_variable` and
/// `models` is optional and falls back to the bundled defaults.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    varied_variable: VariedVariable,
    models: Vec<String>,
    variants: Option<Vec<String>>,
    variant_count: Option<usize>,
    defaults: Option<BindingsFile>,
    user_prompts: Option<Vec<PromptSpec>>,
    repetitions: Option<u32>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
}

/// Parses and validates a plan document, applying bundled defaults for
/// every omitted field.
pub fn load_plan(json: &str) -> Result<ExperimentPlan, PlanLoadError> {
    let file: PlanFile = serde_json::from_str(json).map_err(|e| PlanLoadError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let variants = file
        .variants
        .unwrap_or_else(|| default_variants(file.varied_variable).values);
    let variant_count = file.variant_count.unwrap_or(variants.len());

    let base = default_bindings();
    let defaults = match file.defaults {
        Some(d) => Bindings {
            amount: d.amount.unwrap_or(base.amount),
            unit: d.unit.unwrap_or(base.unit),
            system_prompt: d.system_prompt.unwrap_or(base.system_prompt),
        },
        None => base,
    };

    let user_prompts = match file.user_prompts {
        Some(specs) => specs
            .into_iter()
            .enumerate()
            .map(|(i, spec)| {
                let (id, text) = match spec {
                    PromptSpec::Text(text) => (format!("p{i:02}"), text),
                    PromptSpec::Full { id, text } => (id, text),
                };
                PromptTemplate::new(id, text).map_err(PlanError::BadTemplate)
            })
            .collect::<Result<Vec<_>, _>>()?,
        None => default_user_prompts(),
    };

    let plan = ExperimentPlan {
        varied_variable: file.varied_variable,
        variants,
        variant_count,
        defaults,
        user_prompts,
        repetitions: file.repetitions.unwrap_or(DEFAULT_REPETITIONS),
        models: file.models,
        temperature: file.temperature.unwrap_or(DEFAULT_TEMPERATURE),
        max_tokens: file.max_tokens.unwrap_or(DEFAULT_MAX_TOKENS),
    };
    plan.validate()?;
    Ok(plan)
}
