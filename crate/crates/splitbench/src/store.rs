//! Append-only run persistence: one JSON Lines event log per run plus a
//! manifest for resume and audit.
//!
//! Layout under the runs directory:
//! `runs/{run_id}/plan.json`, `runs/{run_id}/events.jsonl`,
//! `runs/{run_id}/manifest.json`. The run id is the backend kind plus a
//! 12-hex prefix of the plan digest, so the same plan on the same backend
//! always lands in the same directory and can be resumed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{
    ClosedResponse, ExperimentPlan, Observation, RejectionReason, StageMeta, TrialRecord,
};

/// Content hash of a plan: SHA-256 over the canonical compact JSON
/// serialization of the parsed plan, so formatting changes in a plan file
/// never change the run identity.
pub fn plan_digest(plan: &ExperimentPlan) -> String {
    let canonical = serde_json::to_string(plan).expect("plans serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Run identifier: backend kind plus the first 12 hex digits of the plan
/// digest (e.g. `mock-3f9ab2c47d01`).
pub fn run_id_for(plan: &ExperimentPlan, backend_kind: &str) -> String {
    format!("{backend_kind}-{}", &plan_digest(plan)[..12])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Aborted,
}

/// Lifetime counters for one run. Replaying the event log reconstructs
/// these exactly.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunCounts {
    pub stubs: u64,
    pub generated: u64,
    pub judged: u64,
    pub observations: u64,
    pub rejections: BTreeMap<RejectionReason, u64>,
}

impl RunCounts {
    pub fn total_rejections(&self) -> u64 {
        self.rejections.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub plan_digest: String,
    pub created: DateTime<Utc>,
    pub counts: RunCounts,
    pub status: RunStatus,
    /// Free-text annotation, e.g. the last persisted trial after an abort.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// How a judge call resolved: a validated split or a typed rejection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeOutcome {
    Valid,
    Rejected(RejectionReason),
}

/// A judge call for one trial, with the raw judge text kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeEvent {
    pub trial_id: String,
    pub model: String,
    pub variant_index: usize,
    pub raw_output: Option<String>,
    pub closed: Option<ClosedResponse>,
    pub outcome: JudgeOutcome,
    pub meta: Vec<StageMeta>,
}

/// A trial filtered out of the analysis, with its reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionEvent {
    pub trial_id: String,
    pub model: String,
    pub variant_index: usize,
    pub reason: RejectionReason,
}

/// One line in `events.jsonl`, discriminated by an `event_type` field.
///
/// Deserialization is written by hand (dispatch over `event_type` through a
/// `Value`) because serde's derived internally-tagged decoding buffers
/// values in a way that cannot represent arbitrary-precision numbers.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event_type", rename_all = "snake_case")]
pub enum Event {
    /// A trial finished the generation stage (successfully or flagged).
    Generate {
        record: TrialRecord,
    },
    Judge(JudgeEvent),
    /// A validated observation.
    Observation {
        observation: Observation,
    },
    Rejection(RejectionEvent),
}

impl Event {
    pub fn trial_id(&self) -> &str {
        match self {
            Event::Generate { record } => &record.trial_id,
            Event::Judge(j) => &j.trial_id,
            Event::Observation { observation } => &observation.trial_id,
            Event::Rejection(r) => &r.trial_id,
        }
    }
}

impl<'de> Deserialize<'de> for Event {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        use serde::de::Error as DeError;
        let mut value = serde_json::Value::deserialize(deserializer)?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| DeError::custom("event must be a JSON object"))?;
        let tag = match obj.remove("event_type") {
            Some(serde_json::Value::String(s)) => s,
            _ => return Err(DeError::custom("missing or non-string `event_type`")),
        };
        let rest = serde_json::Value::Object(std::mem::take(obj));
        fn from<T: serde::de::DeserializeOwned, E: DeError>(v: serde_json::Value) -> Result<T, E> {
            serde_json::from_value(v).map_err(E::custom)
        }
        match tag.as_str() {
            "generate" => {
                #[derive(Deserialize)]
                struct Body {
                    record: TrialRecord,
                }
                let body: Body = from(rest)?;
                Ok(Event::Generate {
                    record: body.record,
                })
            }
            "judge" => Ok(Event::Judge(from(rest)?)),
            "observation" => {
                #[derive(Deserialize)]
                struct Body {
                    observation: Observation,
                }
                let body: Body = from(rest)?;
                Ok(Event::Observation {
                    observation: body.observation,
                })
            }
            "rejection" => Ok(Event::Rejection(from(rest)?)),
            other => Err(DeError::custom(format!("unknown event_type `{other}`"))),
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("run `{0}` not found")]
    NotFound(String),
    #[error("run `{0}` already exists")]
    AlreadyExists(String),
    #[error("run `{run_id}` is {status:?}; no further events may be appended")]
    RunClosed { run_id: String, status: RunStatus },
    #[error("{path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("event for unknown trial `{trial_id}`: {message}")]
    Integrity { trial_id: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Read filter for [`load_observations`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObsFilter {
    pub model: Option<String>,
    pub variant_index: Option<usize>,
}

impl ObsFilter {
    fn matches(&self, obs: &Observation) -> bool {
        self.model.as_ref().is_none_or(|m| *m == obs.model)
            && self.variant_index.is_none_or(|v| v == obs.variant_index)
    }
}

/// A writable handle on one run. There is exactly one writer per run:
/// concurrent producers must funnel completed events through the task that
/// owns this handle.
pub struct RunStore {
    dir: PathBuf,
    events_path: PathBuf,
    writer: BufWriter<File>,
    manifest: RunManifest,
    plan: ExperimentPlan,
    /// Trials that already have a generate event (resume skip set).
    generated_ids: BTreeSet<String>,
    /// Trials that already resolved the reduction stage (judge outcome or
    /// an observation/rejection without a judge call).
    reduced_ids: BTreeSet<String>,
}

impl RunStore {
    /// Creates a fresh run directory and writes `plan.json` plus an initial
    /// manifest with status `running`.
    pub fn create(
        runs_dir: &Path,
        plan: &ExperimentPlan,
        backend_kind: &str,
    ) -> Result<RunStore, StoreError> {
        let run_id = run_id_for(plan, backend_kind);
        let dir = runs_dir.join(&run_id);
        if dir.exists() {
            return Err(StoreError::AlreadyExists(run_id));
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;

        let plan_path = dir.join("plan.json");
        let plan_json = serde_json::to_string_pretty(plan).expect("plans serialize");
        fs::write(&plan_path, plan_json).map_err(io_err(&plan_path))?;

        let manifest = RunManifest {
            run_id,
            plan_digest: plan_digest(plan),
            created: Utc::now(),
            counts: RunCounts {
                stubs: plan.stub_count() as u64,
                ..RunCounts::default()
            },
            status: RunStatus::Running,
            note: None,
        };
        write_manifest(&dir, &manifest)?;

        let events_path = dir.join("events.jsonl");
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&events_path)
            .map_err(io_err(&events_path))?;

        Ok(RunStore {
            dir,
            events_path,
            writer: BufWriter::new(file),
            manifest,
            plan: plan.clone(),
            generated_ids: BTreeSet::new(),
            reduced_ids: BTreeSet::new(),
        })
    }

    /// Opens an existing run for appending, replaying the event log to
    /// rebuild counters and resume sets. A partially written final line
    /// (crash during append) is truncated away; corruption anywhere else is
    /// an error.
    pub fn open(runs_dir: &Path, run_id: &str) -> Result<RunStore, StoreError> {
        let dir = runs_dir.join(run_id);
        if !dir.is_dir() {
            return Err(StoreError::NotFound(run_id.to_string()));
        }
        let manifest_path = dir.join("manifest.json");
        let manifest_json = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let mut manifest: RunManifest =
            serde_json::from_str(&manifest_json).map_err(|e| StoreError::Corrupt {
                path: manifest_path.clone(),
                line: e.line(),
                message: e.to_string(),
            })?;

        let plan_path = dir.join("plan.json");
        let plan_json = fs::read_to_string(&plan_path).map_err(io_err(&plan_path))?;
        let plan: ExperimentPlan =
            serde_json::from_str(&plan_json).map_err(|e| StoreError::Corrupt {
                path: plan_path.clone(),
                line: e.line(),
                message: e.to_string(),
            })?;

        let events_path = dir.join("events.jsonl");
        let (events, keep_bytes) = read_events_tolerating_tail(&events_path)?;

        // The log is the source of truth; a crash may have lost the final
        // manifest rewrite, so counters are rebuilt from the events.
        let mut counts = RunCounts {
            stubs: plan.stub_count() as u64,
            ..RunCounts::default()
        };
        let mut generated_ids = BTreeSet::new();
        let mut reduced_ids = BTreeSet::new();
        for event in &events {
            apply_event(&mut counts, &mut generated_ids, &mut reduced_ids, event)?;
        }
        manifest.counts = counts;

        // Drop any partially written final line before appending again.
        let file_len = fs::metadata(&events_path)
            .map(|m| m.len())
            .unwrap_or(keep_bytes);
        if keep_bytes < file_len {
            let f = OpenOptions::new()
                .write(true)
                .open(&events_path)
                .map_err(io_err(&events_path))?;
            f.set_len(keep_bytes).map_err(io_err(&events_path))?;
        }
        write_manifest(&dir, &manifest)?;

        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&events_path)
            .map_err(io_err(&events_path))?;

        Ok(RunStore {
            dir,
            events_path,
            writer: BufWriter::new(file),
            manifest,
            plan,
            generated_ids,
            reduced_ids,
        })
    }

    pub fn run_id(&self) -> &str {
        &self.manifest.run_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn plan(&self) -> &ExperimentPlan {
        &self.plan
    }

    pub fn generated_trial_ids(&self) -> &BTreeSet<String> {
        &self.generated_ids
    }

    pub fn reduced_trial_ids(&self) -> &BTreeSet<String> {
        &self.reduced_ids
    }

    /// Appends one event: serialized as a single line, flushed to the OS
    /// before returning, counters updated, manifest rewritten.
    pub fn append(&mut self, event: &Event) -> Result<(), StoreError> {
        if self.manifest.status != RunStatus::Running {
            return Err(StoreError::RunClosed {
                run_id: self.manifest.run_id.clone(),
                status: self.manifest.status,
            });
        }
        apply_event(
            &mut self.manifest.counts,
            &mut self.generated_ids,
            &mut self.reduced_ids,
            event,
        )?;
        let mut line = serde_json::to_string(event).expect("events serialize");
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .map_err(io_err(&self.events_path))?;
        self.writer.flush().map_err(io_err(&self.events_path))?;
        write_manifest(&self.dir, &self.manifest)
    }

    pub fn mark_complete(&mut self) -> Result<(), StoreError> {
        self.manifest.status = RunStatus::Complete;
        self.manifest.note = None;
        write_manifest(&self.dir, &self.manifest)
    }

    pub fn mark_aborted(&mut self, note: String) -> Result<(), StoreError> {
        self.manifest.status = RunStatus::Aborted;
        self.manifest.note = Some(note);
        write_manifest(&self.dir, &self.manifest)
    }

    /// Reopens an aborted run for further appends. The abort note is kept
    /// until the run completes.
    pub fn resume(&mut self) -> Result<(), StoreError> {
        self.manifest.status = RunStatus::Running;
        write_manifest(&self.dir, &self.manifest)
    }

    /// The most recently generated trial, for abort notes.
    pub fn last_generated_trial(&self) -> Option<&str> {
        self.generated_ids.iter().next_back().map(|s| s.as_str())
    }

    /// Rereads this run's persisted trial records, in trial_id order. Safe
    /// while the store is open for appends: every append is flushed.
    pub fn records(&self) -> Result<Vec<TrialRecord>, StoreError> {
        let (events, _) = read_events_tolerating_tail(&self.events_path)?;
        let mut records: Vec<TrialRecord> = events
            .into_iter()
            .filter_map(|e| match e {
                Event::Generate { record } => Some(record),
                _ => None,
            })
            .collect();
        records.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
        Ok(records)
    }
}

/// Folds one event into the counters and resume sets, enforcing referential
/// integrity: reduction-stage events must reference a generated trial.
fn apply_event(
    counts: &mut RunCounts,
    generated_ids: &mut BTreeSet<String>,
    reduced_ids: &mut BTreeSet<String>,
    event: &Event,
) -> Result<(), StoreError> {
    let known = |ids: &BTreeSet<String>, id: &str, what: &str| {
        if ids.contains(id) {
            Ok(())
        } else {
            Err(StoreError::Integrity {
                trial_id: id.to_string(),
                message: format!("{what} event without a generate event"),
            })
        }
    };
    match event {
        Event::Generate { record } => {
            if !generated_ids.insert(record.trial_id.clone()) {
                return Err(StoreError::Integrity {
                    trial_id: record.trial_id.clone(),
                    message: "duplicate generate event".into(),
                });
            }
            counts.generated += 1;
        }
        Event::Judge(j) => {
            known(generated_ids, &j.trial_id, "judge")?;
            reduced_ids.insert(j.trial_id.clone());
            counts.judged += 1;
        }
        Event::Observation { observation } => {
            known(generated_ids, &observation.trial_id, "observation")?;
            reduced_ids.insert(observation.trial_id.clone());
            counts.observations += 1;
        }
        Event::Rejection(r) => {
            known(generated_ids, &r.trial_id, "rejection")?;
            reduced_ids.insert(r.trial_id.clone());
            *counts.rejections.entry(r.reason).or_insert(0) += 1;
        }
    }
    Ok(())
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), StoreError> {
    let path = dir.join("manifest.json");
    let tmp = dir.join("manifest.json.tmp");
    let json = serde_json::to_string_pretty(manifest).expect("manifests serialize");
    fs::write(&tmp, json).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &path).map_err(io_err(&path))
}

/// Reads every complete event line. Returns the events and the byte length
/// of the well-formed prefix; a torn final line (no trailing newline, bad
/// JSON) is excluded so the caller can truncate it away.
fn read_events_tolerating_tail(path: &Path) -> Result<(Vec<Event>, u64), StoreError> {
    if !path.exists() {
        return Ok((Vec::new(), 0));
    }
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut offset = 0u64;
    let mut line_no = 0usize;
    let mut buf = String::new();
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        match serde_json::from_str::<Event>(buf.trim_end()) {
            Ok(event) => {
                events.push(event);
                offset += n as u64;
            }
            Err(e) if !complete => {
                // Torn tail from a crash mid-append; drop it.
                let _ = e;
                break;
            }
            Err(e) => {
                return Err(StoreError::Corrupt {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok((events, offset))
}

/// Reads a completed (or in-progress) run's full event list.
pub fn load_events(runs_dir: &Path, run_id: &str) -> Result<Vec<Event>, StoreError> {
    let dir = runs_dir.join(run_id);
    if !dir.is_dir() {
        return Err(StoreError::NotFound(run_id.to_string()));
    }
    let (events, _) = read_events_tolerating_tail(&dir.join("events.jsonl"))?;
    Ok(events)
}

pub fn load_manifest(runs_dir: &Path, run_id: &str) -> Result<RunManifest, StoreError> {
    let path = runs_dir.join(run_id).join("manifest.json");
    if !path.exists() {
        return Err(StoreError::NotFound(run_id.to_string()));
    }
    let json = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&json).map_err(|e| StoreError::Corrupt {
        path,
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn load_plan_file(runs_dir: &Path, run_id: &str) -> Result<ExperimentPlan, StoreError> {
    let path = runs_dir.join(run_id).join("plan.json");
    if !path.exists() {
        return Err(StoreError::NotFound(run_id.to_string()));
    }
    let json = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&json).map_err(|e| StoreError::Corrupt {
        path,
        line: e.line(),
        message: e.to_string(),
    })
}

/// All generated trial records of a run, in trial_id order.
pub fn load_records(runs_dir: &Path, run_id: &str) -> Result<Vec<TrialRecord>, StoreError> {
    let mut records: Vec<TrialRecord> = load_events(runs_dir, run_id)?
        .into_iter()
        .filter_map(|e| match e {
            Event::Generate { record } => Some(record),
            _ => None,
        })
        .collect();
    records.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    Ok(records)
}

/// Observations matching the filter, in stable trial_id order. Rejected
/// trials never appear here.
pub fn load_observations(
    runs_dir: &Path,
    run_id: &str,
    filter: &ObsFilter,
) -> Result<Vec<Observation>, StoreError> {
    let mut observations: Vec<Observation> = load_events(runs_dir, run_id)?
        .into_iter()
        .filter_map(|e| match e {
            Event::Observation { observation } if filter.matches(&observation) => Some(observation),
            _ => None,
        })
        .collect();
    observations.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    Ok(observations)
}
