//! The submission matrix: documents x sampling settings x repeated trials.
//!
//! A [`CampaignPlan`] expands to a deterministic list of trial specs. The
//! trial index is part of each spec's identity, which is what makes repeated
//! submissions cacheable and resumable: re-running a plan skips every spec
//! whose key is already in the [`ResultStore`] without touching the provider.
//!
//! The store is append-only JSONL with one writer. Results are committed in
//! spec order regardless of worker interleaving, so a simulator run produces
//! a byte-identical store file under any `max_in_flight`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::gateway::{Provenance, Provider, ProviderError, SamplingParams};
use crate::prompting::{parse_response, render_prompt, PromptTemplate, Verdict};

/// The full submission grid for one model and prompt template version.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignPlan {
    pub temperatures: Vec<f64>,
    pub top_ps: Vec<f64>,
    pub top_k: u32,
    pub trials_per_setting: u32,
    pub template_digest: String,
    pub model_name: String,
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid sampling setting: {0}")]
    InvalidSetting(#[from] crate::gateway::ParamsError),
    #[error("temperature list is empty")]
    NoTemperatures,
    #[error("top_p list is empty")]
    NoTopPs,
    #[error("trials_per_setting must be positive")]
    NoTrials,
    #[error("duplicate {axis} value {value} in plan")]
    DuplicateAxisValue { axis: &'static str, value: f64 },
}

impl CampaignPlan {
    pub fn new(
        temperatures: Vec<f64>,
        top_ps: Vec<f64>,
        top_k: u32,
        trials_per_setting: u32,
        template: &PromptTemplate,
        model_name: impl Into<String>,
    ) -> Result<Self, PlanError> {
        if temperatures.is_empty() {
            return Err(PlanError::NoTemperatures);
        }
        if top_ps.is_empty() {
            return Err(PlanError::NoTopPs);
        }
        if trials_per_setting == 0 {
            return Err(PlanError::NoTrials);
        }
        // The grid must be a product of distinct axis values: duplicates
        // would assign two plan slots to one trial identity.
        for (axis, list) in [("temperature", &temperatures), ("top_p", &top_ps)] {
            for (i, &v) in list.iter().enumerate() {
                if list[..i].contains(&v) {
                    return Err(PlanError::DuplicateAxisValue { axis, value: v });
                }
            }
        }
        // Every grid point must construct; bounds are checked here once.
        for &t in &temperatures {
            for &p in &top_ps {
                SamplingParams::new(t, p, top_k)?;
            }
        }
        Ok(CampaignPlan {
            temperatures,
            top_ps,
            top_k,
            trials_per_setting,
            template_digest: template.version_digest().to_string(),
            model_name: model_name.into(),
        })
    }

    /// Grid size: temperatures x top_ps.
    pub fn settings(&self) -> Vec<SamplingParams> {
        let mut out = Vec::new();
        for &t in &self.temperatures {
            for &p in &self.top_ps {
                out.push(SamplingParams::new(t, p, self.top_k).expect("validated at construction"));
            }
        }
        out
    }

    /// Submissions per document: |grid| x trials.
    pub fn submissions_per_doc(&self) -> usize {
        self.temperatures.len() * self.top_ps.len() * self.trials_per_setting as usize
    }
}

/// One planned classification call.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub doc_idx: usize,
    pub doc_id: String,
    pub params: SamplingParams,
    pub trial: u32,
}

/// Expand a plan over a corpus in deterministic order: corpus order, then
/// temperature list order, then top_p list order, then trial index.
pub fn expand_plan(plan: &CampaignPlan, corpus: &Corpus) -> Vec<TrialSpec> {
    let mut specs =
        Vec::with_capacity(corpus.len() * plan.submissions_per_doc());
    for (doc_idx, doc) in corpus.documents.iter().enumerate() {
        for &t in &plan.temperatures {
            for &p in &plan.top_ps {
                let params =
                    SamplingParams::new(t, p, plan.top_k).expect("validated at construction");
                for trial in 0..plan.trials_per_setting {
                    specs.push(TrialSpec {
                        doc_idx,
                        doc_id: doc.id.clone(),
                        params,
                        trial,
                    });
                }
            }
        }
    }
    specs
}

/// Stable digest identifying one trial across runs. Any field change
/// changes the key; in particular the trial index, so repeated submissions
/// are distinct cache entries.
pub fn cache_key(
    doc_id: &str,
    params: &SamplingParams,
    trial: u32,
    template_digest: &str,
    model_name: &str,
) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    // Unit separator delimits fields; floats hash by exact bit pattern.
    let canonical = format!(
        "{doc_id}\x1f{:016x}\x1f{:016x}\x1f{}\x1f{trial}\x1f{template_digest}\x1f{model_name}",
        params.temperature().to_bits(),
        params.top_p().to_bits(),
        params.top_k(),
    );
    hasher.update(canonical.as_bytes());
    hex::encode(hasher.finalize())
}

/// One (document x params x trial) classification outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub doc_id: String,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub trial: u32,
    pub verdict: Verdict,
    pub evidence: Vec<String>,
    pub rationale: String,
    pub raw: String,
    #[serde(rename = "model")]
    pub model_name: String,
    pub template_digest: String,
    /// Milliseconds since the Unix epoch for live calls; 0 for simulator
    /// records so that replays are byte-identical.
    pub ts: u64,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn params(&self) -> SamplingParams {
        SamplingParams::new(self.temperature, self.top_p, self.top_k)
            .expect("stored params were validated before writing")
    }

    pub fn key(&self) -> String {
        cache_key(
            &self.doc_id,
            &self.params(),
            self.trial,
            &self.template_digest,
            &self.model_name,
        )
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O failure at {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("malformed store record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate trial key for doc {doc_id:?} (temperature={temperature}, top_p={top_p}, trial={trial})")]
    DuplicateKey {
        doc_id: String,
        temperature: f64,
        top_p: f64,
        trial: u32,
    },
}

/// Append-only JSONL store of trial records with an in-memory key index.
#[derive(Debug)]
pub struct ResultStore {
    path: PathBuf,
    records: Vec<TrialRecord>,
    index: HashMap<String, usize>,
}

impl ResultStore {
    /// Open (or create) a store, replaying existing records into the index.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut store = ResultStore {
            path: path.clone(),
            records: Vec::new(),
            index: HashMap::new(),
        };
        if path.exists() {
            let file = File::open(&path).map_err(|e| StoreError::Io {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line_no = idx + 1;
                let line = line.map_err(|e| StoreError::Io {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: TrialRecord =
                    serde_json::from_str(&line).map_err(|e| StoreError::MalformedRecord {
                        line: line_no,
                        reason: e.to_string(),
                    })?;
                store.insert(record)?;
            }
        }
        Ok(store)
    }

    fn insert(&mut self, record: TrialRecord) -> Result<(), StoreError> {
        let key = record.key();
        if self.index.contains_key(&key) {
            return Err(StoreError::DuplicateKey {
                doc_id: record.doc_id,
                temperature: record.temperature,
                top_p: record.top_p,
                trial: record.trial,
            });
        }
        self.index.insert(key, self.records.len());
        self.records.push(record);
        Ok(())
    }

    /// Append one record, writing through to disk before indexing.
    pub fn append(&mut self, record: TrialRecord, sink: &mut impl Write) -> Result<(), StoreError> {
        let line = serde_json::to_string(&record).expect("trial record serializes");
        writeln!(sink, "{line}").map_err(|e| StoreError::Io {
            path: self.path.display().to_string(),
            reason: e.to_string(),
        })?;
        self.insert(record)
    }

    fn open_append_sink(&self) -> Result<BufWriter<File>, StoreError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| StoreError::Io {
                path: self.path.display().to_string(),
                reason: e.to_string(),
            })?;
        Ok(BufWriter::new(file))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("template digest {got} does not match plan digest {expected}; the plan must be rebuilt for the edited template")]
    TemplateMismatch { expected: String, got: String },
}

/// Outcome counts for one `run_campaign` invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    /// Specs in the expanded plan.
    pub total: usize,
    /// Specs already present in the store (no provider call).
    pub skipped: usize,
    /// Provider calls performed by this run.
    pub executed: usize,
    /// Abstain verdicts among newly executed specs.
    pub abstains: usize,
    /// Provider failures degraded to Abstain records.
    pub errors: usize,
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn record_for(
    spec: &TrialSpec,
    plan: &CampaignPlan,
    provider: &dyn Provider,
    outcome: Result<String, ProviderError>,
) -> TrialRecord {
    let provenance = provider.provenance();
    let ts = match provenance {
        Provenance::Simulator => 0,
        _ => now_millis(),
    };
    let (raw, error) = match outcome {
        Ok(raw) => (raw, None),
        Err(e) => (String::new(), Some(e.to_string())),
    };
    let parsed = parse_response(&raw);
    TrialRecord {
        doc_id: spec.doc_id.clone(),
        temperature: spec.params.temperature(),
        top_p: spec.params.top_p(),
        top_k: spec.params.top_k(),
        trial: spec.trial,
        verdict: parsed.verdict,
        evidence: parsed.evidence,
        rationale: parsed.rationale,
        raw,
        model_name: plan.model_name.clone(),
        template_digest: plan.template_digest.clone(),
        ts,
        provenance,
        error,
    }
}

/// Execute every missing spec of the plan, appending records in spec order.
///
/// Specs whose keys are already stored are skipped without provider calls,
/// so an interrupted campaign resumes where it left off and a completed one
/// re-runs as a no-op. Provider failures degrade to Abstain records with an
/// error annotation; only store I/O aborts the run.
pub fn run_campaign(
    plan: &CampaignPlan,
    corpus: &Corpus,
    provider: &dyn Provider,
    store: &mut ResultStore,
    template: &PromptTemplate,
    max_in_flight: usize,
) -> Result<RunSummary, CampaignError> {
    if template.version_digest() != plan.template_digest {
        return Err(CampaignError::TemplateMismatch {
            expected: plan.template_digest.clone(),
            got: template.version_digest().to_string(),
        });
    }

    let specs = expand_plan(plan, corpus);
    let total = specs.len();
    let pending: Vec<TrialSpec> = specs
        .into_iter()
        .filter(|s| {
            !store.contains(&cache_key(
                &s.doc_id,
                &s.params,
                s.trial,
                &plan.template_digest,
                &plan.model_name,
            ))
        })
        .collect();
    let skipped = total - pending.len();

    if pending.is_empty() {
        return Ok(RunSummary {
            total,
            skipped,
            executed: 0,
            abstains: 0,
            errors: 0,
        });
    }

    let mut sink = store.open_append_sink()?;
    let workers = max_in_flight.max(1).min(pending.len());
    let cursor = AtomicUsize::new(0);
    let (tx, rx) = mpsc::sync_channel::<(usize, TrialRecord)>(workers * 4);

    let mut abstains = 0usize;
    let mut errors = 0usize;

    let append_result: Result<(), StoreError> = std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let cursor = &cursor;
            let pending = &pending;
            scope.spawn(move || loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= pending.len() {
                    break;
                }
                let spec = &pending[i];
                let doc = &corpus.documents[spec.doc_idx];
                let prompt = render_prompt(template, &doc.text);
                let outcome =
                    provider.classify_once(&prompt, &spec.params, &spec.doc_id, spec.trial);
                let record = record_for(spec, plan, provider, outcome);
                if tx.send((i, record)).is_err() {
                    break; // writer bailed on I/O failure
                }
            });
        }
        drop(tx);

        // Single writer: commit in spec order so the file layout is
        // independent of worker interleaving.
        let mut staged: BTreeMap<usize, TrialRecord> = BTreeMap::new();
        let mut next = 0usize;
        for (i, record) in rx {
            staged.insert(i, record);
            while let Some(record) = staged.remove(&next) {
                if record.verdict == Verdict::Abstain {
                    abstains += 1;
                }
                if record.error.is_some() {
                    errors += 1;
                }
                store.append(record, &mut sink)?;
                next += 1;
            }
        }
        Ok(())
    });
    append_result?;
    sink.flush().map_err(|e| StoreError::Io {
        path: store.path().display().to_string(),
        reason: e.to_string(),
    })?;

    Ok(RunSummary {
        total,
        skipped,
        executed: pending.len(),
        abstains,
        errors,
    })
}
