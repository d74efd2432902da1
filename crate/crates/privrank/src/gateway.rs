//! Classification providers behind one interface.
//!
//! [`Provider::classify_once`] turns (prompt, sampling params, trial
//! identity) into a raw response string. Two implementations:
//!
//! - [`HttpProvider`] - a chat-completions endpoint, with bounded in-flight
//!   requests and retry with exponential backoff;
//! - [`SimulatorProvider`] - a seeded stochastic stand-in whose per-document
//!   Bernoulli parameters come from a [`SimProfile`].
//!
//! Simulator randomness is counter-based: each draw is a pure function of
//! (seed, doc id, trial), so runs are bit-reproducible regardless of the
//! concurrency schedule. Sampling parameters enter the draw only for a
//! params-sensitive profile; the default profile models per-document
//! flakiness directly, so changing temperature or top-p leaves every
//! verdict unchanged.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Randomness knobs attached to every trial. Bounds are enforced at
/// construction; values are carried verbatim into requests and records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    temperature: f64,
    top_p: f64,
    top_k: u32,
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("temperature {0} outside [0, 2]")]
    Temperature(f64),
    #[error("top_p {0} outside (0, 1]")]
    TopP(f64),
    #[error("top_k must be a positive integer")]
    TopK,
}

impl SamplingParams {
    pub fn new(temperature: f64, top_p: f64, top_k: u32) -> Result<Self, ParamsError> {
        if !(0.0..=2.0).contains(&temperature) || temperature.is_nan() {
            return Err(ParamsError::Temperature(temperature));
        }
        if !(top_p > 0.0 && top_p <= 1.0) {
            return Err(ParamsError::TopP(top_p));
        }
        if top_k == 0 {
            return Err(ParamsError::TopK);
        }
        // Normalize -0.0 so equal settings hash to equal trial keys.
        let temperature = if temperature == 0.0 { 0.0 } else { temperature };
        Ok(SamplingParams {
            temperature,
            top_p,
            top_k,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn top_p(&self) -> f64 {
        self.top_p
    }

    pub fn top_k(&self) -> u32 {
        self.top_k
    }
}

/// Where a trial record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Live,
    Cache,
    Simulator,
}

/// Retry behavior for transient transport failures.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_backoff: Duration::from_millis(500),
        }
    }
}

/// Configuration for the HTTP chat-completions provider.
#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key. The key itself
    /// is never read from files or flags.
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    /// Many chat APIs reject `top_k`; it is sent only when the provider
    /// declares support.
    pub send_top_k: bool,
    pub timeout: Duration,
}

/// Configuration for the simulator provider.
#[derive(Debug, Clone)]
pub struct SimulatorConfig {
    pub profile: SimProfile,
    pub seed: u64,
    pub model_name: String,
}

/// Provider selection. The variants carry exactly the fields each kind
/// requires.
#[derive(Debug, Clone)]
pub enum ProviderConfig {
    Http(HttpConfig),
    Simulator(SimulatorConfig),
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no profile entry for document {0:?}")]
    UnknownDocument(String),
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport {
        attempts: u32,
        status: Option<u16>,
        message: String,
    },
    #[error("API key environment variable {0} is not set")]
    MissingApiKey(String),
}

/// One classification request under given sampling parameters.
///
/// Implementations must be safe for concurrent invocation up to their
/// configured in-flight bound.
pub trait Provider: Send + Sync {
    fn classify_once(
        &self,
        prompt: &str,
        params: &SamplingParams,
        doc_id: &str,
        trial: u32,
    ) -> Result<String, ProviderError>;

    fn provenance(&self) -> Provenance;

    fn model_name(&self) -> &str;

    /// Number of classify calls issued so far (resume instrumentation).
    fn call_count(&self) -> u64;
}

// ---------------------------------------------------------------------------
// Counter-based trial randomness
// ---------------------------------------------------------------------------

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a_extend(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// splitmix64 finalizer; full avalanche over the fnv accumulator.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Uniform draw in [0, 1) keyed by trial identity.
///
/// Pure and stable across runs, machines, and execution order. `params` is
/// folded in only when provided; the simulator passes `None` for
/// params-independent profiles so that identical (seed, doc, trial) yields
/// identical draws under every sampling setting.
pub(crate) fn trial_uniform(
    seed: u64,
    doc_id: &str,
    params: Option<&SamplingParams>,
    trial: u32,
) -> f64 {
    let mut h = FNV_OFFSET;
    h = fnv1a_extend(h, &seed.to_le_bytes());
    h = fnv1a_extend(h, &(doc_id.len() as u64).to_le_bytes());
    h = fnv1a_extend(h, doc_id.as_bytes());
    match params {
        Some(p) => {
            h = fnv1a_extend(h, &[1]);
            h = fnv1a_extend(h, &p.temperature.to_bits().to_le_bytes());
            h = fnv1a_extend(h, &p.top_p.to_bits().to_le_bytes());
            h = fnv1a_extend(h, &p.top_k.to_le_bytes());
        }
        None => {
            h = fnv1a_extend(h, &[0]);
        }
    }
    h = fnv1a_extend(h, &trial.to_le_bytes());
    let mixed = mix(mix(h));
    // Top 53 bits -> [0, 1) with full f64 resolution.
    (mixed >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in [0, 1) for a (seed, document, params, trial) tuple.
pub fn derive_trial_randomness(
    seed: u64,
    doc_id: &str,
    params: &SamplingParams,
    trial: u32,
) -> f64 {
    trial_uniform(seed, doc_id, Some(params), trial)
}

// ---------------------------------------------------------------------------
// Simulator
// ---------------------------------------------------------------------------

/// Per-document Bernoulli parameters standing in for a model's empirical
/// behavior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    /// Probability that a single trial returns Privileged.
    pub p_priv: f64,
    /// Probability that a single trial returns no usable response.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub p_abstain: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("cannot open profile {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("malformed profile record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate profile entry for document {0:?}")]
    DuplicateEntry(String),
    #[error("invalid probabilities for document {doc_id:?}: p_priv={p_priv}, p_abstain={p_abstain}")]
    InvalidProbability {
        doc_id: String,
        p_priv: f64,
        p_abstain: f64,
    },
    #[error("profile is missing entries for {missing} of {total} corpus documents (first: {first:?})")]
    MissingEntries {
        missing: usize,
        total: usize,
        first: String,
    },
}

/// A table of per-document trial probabilities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimProfile {
    entries: BTreeMap<String, ProfileEntry>,
    /// Hook for profiles whose probabilities react to sampling parameters.
    /// Ships false: the default profile models flakiness per document.
    pub params_sensitive: bool,
}

#[derive(Serialize, Deserialize)]
struct ProfileRecord {
    doc_id: String,
    p_priv: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    p_abstain: f64,
}

impl SimProfile {
    pub fn new() -> Self {
        SimProfile::default()
    }

    pub fn insert(&mut self, doc_id: impl Into<String>, entry: ProfileEntry) -> Result<(), ProfileError> {
        let doc_id = doc_id.into();
        validate_entry(&doc_id, &entry)?;
        if self.entries.contains_key(&doc_id) {
            return Err(ProfileError::DuplicateEntry(doc_id));
        }
        self.entries.insert(doc_id, entry);
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Option<&ProfileEntry> {
        self.entries.get(doc_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ProfileEntry)> {
        self.entries.iter()
    }

    /// Every corpus document must have exactly one entry.
    pub fn validate_covers<'a>(
        &self,
        doc_ids: impl Iterator<Item = &'a str>,
    ) -> Result<(), ProfileError> {
        let mut missing = 0usize;
        let mut total = 0usize;
        let mut first = String::new();
        for id in doc_ids {
            total += 1;
            if !self.entries.contains_key(id) {
                if missing == 0 {
                    first = id.to_string();
                }
                missing += 1;
            }
        }
        if missing > 0 {
            return Err(ProfileError::MissingEntries {
                missing,
                total,
                first,
            });
        }
        Ok(())
    }

    /// Load from JSONL: `{"doc_id", "p_priv", "p_abstain"?}` per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProfileError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| ProfileError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut profile = SimProfile::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| ProfileError::Io {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ProfileRecord =
                serde_json::from_str(&line).map_err(|e| ProfileError::MalformedRecord {
                    line: line_no,
                    reason: e.to_string(),
                })?;
            profile.insert(
                rec.doc_id,
                ProfileEntry {
                    p_priv: rec.p_priv,
                    p_abstain: rec.p_abstain,
                },
            )?;
        }
        Ok(profile)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ProfileError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| ProfileError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut out = BufWriter::new(file);
        for (doc_id, entry) in &self.entries {
            let rec = ProfileRecord {
                doc_id: doc_id.clone(),
                p_priv: entry.p_priv,
                p_abstain: entry.p_abstain,
            };
            let line = serde_json::to_string(&rec).expect("profile record serializes");
            writeln!(out, "{line}").map_err(|e| ProfileError::Io {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        }
        out.flush().map_err(|e| ProfileError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Ok(())
    }
}

fn validate_entry(doc_id: &str, entry: &ProfileEntry) -> Result<(), ProfileError> {
    let ok = (0.0..=1.0).contains(&entry.p_priv)
        && (0.0..=1.0).contains(&entry.p_abstain)
        && entry.p_priv + entry.p_abstain <= 1.0 + 1e-12;
    if !ok {
        return Err(ProfileError::InvalidProbability {
            doc_id: doc_id.to_string(),
            p_priv: entry.p_priv,
            p_abstain: entry.p_abstain,
        });
    }
    Ok(())
}

const PRIV_PASSAGES: &[&str] = &[
    "Please treat this as a request for legal advice regarding the pending matter.",
    "Per counsel's instruction, this analysis was prepared in anticipation of litigation.",
    "Attorney-client privileged: our lawyer has advised us not to proceed without review.",
];

const PRIV_RATIONALES: &[&str] = &[
    "The document contains a confidential exchange with counsel seeking legal advice.",
    "The material was prepared at the direction of an attorney in anticipation of litigation.",
    "The passage shows legal advice being requested from, and given by, counsel.",
];

const NOTPRIV_RATIONALES: &[&str] = &[
    "The document is an ordinary business communication; no legal advice is sought or given.",
    "The content is operational and involves no attorney or anticipation of litigation.",
];

/// Deterministic seeded stand-in for a live model.
///
/// Each trial draws one uniform from the trial identity and thresholds it
/// against the document's profile entry, then synthesizes a response in the
/// same free-text shape a live model would produce.
pub struct SimulatorProvider {
    profile: SimProfile,
    seed: u64,
    model_name: String,
    calls: AtomicU64,
}

impl SimulatorProvider {
    pub fn new(config: SimulatorConfig) -> Self {
        SimulatorProvider {
            profile: config.profile,
            seed: config.seed,
            model_name: config.model_name,
            calls: AtomicU64::new(0),
        }
    }

    pub fn profile(&self) -> &SimProfile {
        &self.profile
    }
}

impl Provider for SimulatorProvider {
    fn classify_once(
        &self,
        _prompt: &str,
        params: &SamplingParams,
        doc_id: &str,
        trial: u32,
    ) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let entry = self
            .profile
            .get(doc_id)
            .ok_or_else(|| ProviderError::UnknownDocument(doc_id.to_string()))?;
        let params_key = self.profile.params_sensitive.then_some(params);
        let u = trial_uniform(self.seed, doc_id, params_key, trial);
        // Independent draw for surface variety so wording never couples to
        // the verdict threshold.
        let flavor = mix(trial_uniform(self.seed ^ 0x5eed, doc_id, params_key, trial).to_bits());

        if u < entry.p_priv {
            let passage = PRIV_PASSAGES[(flavor % PRIV_PASSAGES.len() as u64) as usize];
            let rationale =
                PRIV_RATIONALES[((flavor >> 8) % PRIV_RATIONALES.len() as u64) as usize];
            Ok(format!(
                "Classification: Privileged\n\"{passage}\"\nRationale: {rationale}"
            ))
        } else if u < entry.p_priv + entry.p_abstain {
            Ok(String::new())
        } else {
            let rationale =
                NOTPRIV_RATIONALES[(flavor % NOTPRIV_RATIONALES.len() as u64) as usize];
            Ok(format!(
                "Classification: Not Privileged\nRationale: {rationale}"
            ))
        }
    }

    fn provenance(&self) -> Provenance {
        Provenance::Simulator
    }

    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

// ---------------------------------------------------------------------------
// HTTP provider
// ---------------------------------------------------------------------------

/// Counting semaphore bounding in-flight requests.
struct InFlight {
    available: Mutex<usize>,
    cv: Condvar,
}

impl InFlight {
    fn new(permits: usize) -> Self {
        InFlight {
            available: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        InFlightGuard { owner: self }
    }
}

struct InFlightGuard<'a> {
    owner: &'a InFlight,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.owner.available.lock().unwrap();
        *n += 1;
        self.owner.cv.notify_one();
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    top_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_k: Option<u32>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: Option<String>,
}

/// Chat-completions client with retry and a bounded in-flight window.
pub struct HttpProvider {
    config: HttpConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    in_flight: InFlight,
    calls: AtomicU64,
}

impl HttpProvider {
    pub fn new(config: HttpConfig) -> Result<Self, ProviderError> {
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| ProviderError::MissingApiKey(config.api_key_env.clone()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::Transport {
                attempts: 0,
                status: None,
                message: format!("client construction failed: {e}"),
            })?;
        let in_flight = InFlight::new(config.max_in_flight);
        Ok(HttpProvider {
            config,
            api_key,
            client,
            in_flight,
            calls: AtomicU64::new(0),
        })
    }

    fn attempt(&self, request: &ChatRequest<'_>) -> Result<String, (Option<u16>, String, bool)> {
        let resp = self
            .client
            .post(&self.config.endpoint_url)
            .bearer_auth(&self.api_key)
            .json(request)
            .send()
            .map_err(|e| {
                // Connect errors and timeouts are transient.
                (None, e.to_string(), true)
            })?;
        let status = resp.status();
        if status.is_success() {
            let body: ChatResponse = resp
                .json()
                .map_err(|e| (Some(status.as_u16()), format!("bad response body: {e}"), false))?;
            let content = body
                .choices
                .into_iter()
                .next()
                .and_then(|c| c.message.content)
                .unwrap_or_default();
            return Ok(content);
        }
        let retryable = status.as_u16() == 429 || status.is_server_error();
        Err((
            Some(status.as_u16()),
            format!("HTTP {status}"),
            retryable,
        ))
    }
}

impl Provider for HttpProvider {
    fn classify_once(
        &self,
        prompt: &str,
        params: &SamplingParams,
        _doc_id: &str,
        _trial: u32,
    ) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let _permit = self.in_flight.acquire();
        let request = ChatRequest {
            model: &self.config.model_name,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: params.temperature(),
            top_p: params.top_p(),
            top_k: self.config.send_top_k.then(|| params.top_k()),
        };

        let max_attempts = self.config.retry.max_attempts.max(1);
        let mut last: (Option<u16>, String) = (None, String::new());
        for attempt in 0..max_attempts {
            match self.attempt(&request) {
                Ok(content) => return Ok(content),
                Err((status, message, retryable)) => {
                    last = (status, message);
                    if !retryable {
                        return Err(ProviderError::Transport {
                            attempts: attempt + 1,
                            status: last.0,
                            message: last.1,
                        });
                    }
                    if attempt + 1 < max_attempts {
                        let backoff = self.config.retry.base_backoff.as_millis() as u64
                            * (1u64 << attempt.min(16));
                        let jitter = 0.5 + rand::Rng::gen_range(&mut rand::thread_rng(), 0.0..1.0);
                        std::thread::sleep(Duration::from_millis(
                            (backoff as f64 * jitter) as u64,
                        ));
                    }
                }
            }
        }
        Err(ProviderError::Transport {
            attempts: max_attempts,
            status: last.0,
            message: last.1,
        })
    }

    fn provenance(&self) -> Provenance {
        Provenance::Live
    }

    fn model_name(&self) -> &str {
        &self.config.model_name
    }

    fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::{parse_response, Verdict};

    fn params(t: f64, p: f64, k: u32) -> SamplingParams {
        SamplingParams::new(t, p, k).unwrap()
    }

    #[test]
    fn params_bounds_enforced() {
        assert!(SamplingParams::new(0.0, 1.0, 1).is_ok());
        assert!(SamplingParams::new(2.0, 0.5, 50).is_ok());
        assert!(matches!(
            SamplingParams::new(2.1, 0.5, 50),
            Err(ParamsError::Temperature(_))
        ));
        assert!(matches!(
            SamplingParams::new(1.0, 0.0, 50),
            Err(ParamsError::TopP(_))
        ));
        assert!(matches!(
            SamplingParams::new(1.0, 1.2, 50),
            Err(ParamsError::TopP(_))
        ));
        assert!(matches!(
            SamplingParams::new(1.0, 0.5, 0),
            Err(ParamsError::TopK)
        ));
    }

    #[test]
    fn trial_randomness_is_pure() {
        let p = params(0.7, 0.9, 50);
        let a = derive_trial_randomness(42, "doc-1", &p, 3);
        let b = derive_trial_randomness(42, "doc-1", &p, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn seed_change_alters_stream() {
        let p = params(0.7, 0.9, 50);
        let equal = (0..100)
            .filter(|&t| {
                derive_trial_randomness(1, "doc", &p, t) == derive_trial_randomness(2, "doc", &p, t)
            })
            .count();
        assert!(equal < 100, "all draws equal across different seeds");
    }

    #[test]
    fn draws_in_unit_interval() {
        let p = params(0.0, 0.2, 1);
        for t in 0..1000 {
            let u = derive_trial_randomness(7, "d", &p, t);
            assert!((0.0..1.0).contains(&u));
        }
    }

    /// Chi-square uniformity over 10,000 draws across distinct trial
    /// indices, 100 bins. Critical value from the chi-square inverse CDF at
    /// p = 0.99 (independent oracle).
    #[test]
    fn trial_draws_pass_uniformity_test() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let p = params(0.5, 0.9, 50);
        const DRAWS: usize = 10_000;
        const BINS: usize = 100;
        let mut counts = [0usize; BINS];
        for t in 0..DRAWS as u32 {
            let u = derive_trial_randomness(7, "doc-42", &p, t);
            counts[(u * BINS as f64) as usize] += 1;
        }
        let expected = DRAWS as f64 / BINS as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        let crit = ChiSquared::new((BINS - 1) as f64)
            .unwrap()
            .inverse_cdf(0.99);
        assert!(
            chi2 < crit,
            "chi2 = {chi2:.2} exceeds 0.99 critical value {crit:.2}"
        );
    }

    /// Draws at two trial indices behave independently: a 10x10 contingency
    /// table over paired draws passes a chi-square independence test.
    #[test]
    fn trial_indices_independent() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        const N: usize = 10_000;
        const SIDE: usize = 10;
        let p = params(0.5, 0.9, 50);
        let mut table = [[0usize; SIDE]; SIDE];
        for i in 0..N {
            let doc = format!("doc-{i}");
            let a = derive_trial_randomness(7, &doc, &p, 0);
            let b = derive_trial_randomness(7, &doc, &p, 1);
            table[(a * SIDE as f64) as usize][(b * SIDE as f64) as usize] += 1;
        }
        let row: Vec<f64> = (0..SIDE)
            .map(|i| table[i].iter().sum::<usize>() as f64)
            .collect();
        let col: Vec<f64> = (0..SIDE)
            .map(|j| (0..SIDE).map(|i| table[i][j]).sum::<usize>() as f64)
            .collect();
        let mut chi2 = 0.0;
        for i in 0..SIDE {
            for j in 0..SIDE {
                let expected = row[i] * col[j] / N as f64;
                let d = table[i][j] as f64 - expected;
                chi2 += d * d / expected;
            }
        }
        let df = ((SIDE - 1) * (SIDE - 1)) as f64;
        let crit = ChiSquared::new(df).unwrap().inverse_cdf(0.99);
        assert!(
            chi2 < crit,
            "chi2 = {chi2:.2} exceeds 0.99 critical value {crit:.2}"
        );
    }

    fn sim_with(entries: &[(&str, f64, f64)], seed: u64) -> SimulatorProvider {
        let mut profile = SimProfile::new();
        for (id, p_priv, p_abstain) in entries {
            profile
                .insert(
                    *id,
                    ProfileEntry {
                        p_priv: *p_priv,
                        p_abstain: *p_abstain,
                    },
                )
                .unwrap();
        }
        SimulatorProvider::new(SimulatorConfig {
            profile,
            seed,
            model_name: "sim".into(),
        })
    }

    #[test]
    fn degenerate_probabilities() {
        let sim = sim_with(&[("always", 1.0, 0.0), ("never", 0.0, 0.0)], 7);
        let p = params(0.9, 0.9, 50);
        for trial in 0..20 {
            let raw = sim.classify_once("x", &p, "always", trial).unwrap();
            assert_eq!(parse_response(&raw).verdict, Verdict::Privileged);
            let raw = sim.classify_once("x", &p, "never", trial).unwrap();
            assert_eq!(parse_response(&raw).verdict, Verdict::NotPrivileged);
        }
    }

    #[test]
    fn abstain_band_yields_empty_response() {
        let sim = sim_with(&[("silent", 0.0, 1.0)], 7);
        let p = params(0.0, 0.9, 50);
        let raw = sim.classify_once("x", &p, "silent", 0).unwrap();
        assert!(raw.is_empty());
        assert_eq!(parse_response(&raw).verdict, Verdict::Abstain);
    }

    /// Monte Carlo check against the Bernoulli parameter: 3 sigma over
    /// 10,000 trials at p = 0.5 is ~0.015.
    #[test]
    fn half_probability_fraction_within_tolerance() {
        let sim = sim_with(&[("flaky", 0.5, 0.0)], 7);
        let p = params(0.0, 0.9, 50);
        let mut privileged = 0usize;
        const TRIALS: u32 = 10_000;
        for trial in 0..TRIALS {
            let raw = sim.classify_once("x", &p, "flaky", trial).unwrap();
            if parse_response(&raw).verdict == Verdict::Privileged {
                privileged += 1;
            }
        }
        let fraction = privileged as f64 / TRIALS as f64;
        assert!(
            (fraction - 0.5).abs() <= 0.015,
            "fraction {fraction} outside 0.5 +/- 0.015"
        );
        assert_eq!(sim.call_count(), TRIALS as u64);
    }

    #[test]
    fn params_do_not_alter_verdicts_for_params_independent_profile() {
        let sim = sim_with(&[("flaky", 0.5, 0.0)], 7);
        let grid = [
            params(0.0, 0.2, 50),
            params(0.5, 0.5, 50),
            params(2.0, 1.0, 1),
        ];
        for trial in 0..50 {
            let verdicts: Vec<Verdict> = grid
                .iter()
                .map(|p| {
                    parse_response(&sim.classify_once("x", p, "flaky", trial).unwrap()).verdict
                })
                .collect();
            assert!(
                verdicts.windows(2).all(|w| w[0] == w[1]),
                "trial {trial}: {verdicts:?}"
            );
        }
    }

    #[test]
    fn params_sensitive_hook_varies_draws() {
        let mut profile = SimProfile::new();
        profile
            .insert(
                "flaky",
                ProfileEntry {
                    p_priv: 0.5,
                    p_abstain: 0.0,
                },
            )
            .unwrap();
        profile.params_sensitive = true;
        let sim = SimulatorProvider::new(SimulatorConfig {
            profile,
            seed: 7,
            model_name: "sim".into(),
        });
        let a = params(0.0, 0.2, 50);
        let b = params(2.0, 0.9, 50);
        let differing = (0..100)
            .filter(|&t| {
                let va = parse_response(&sim.classify_once("x", &a, "flaky", t).unwrap()).verdict;
                let vb = parse_response(&sim.classify_once("x", &b, "flaky", t).unwrap()).verdict;
                va != vb
            })
            .count();
        assert!(differing > 0, "params-sensitive profile never diverged");
    }

    #[test]
    fn unknown_document_is_an_error() {
        let sim = sim_with(&[("known", 0.5, 0.0)], 7);
        let p = params(0.0, 0.9, 50);
        assert!(matches!(
            sim.classify_once("x", &p, "unknown", 0),
            Err(ProviderError::UnknownDocument(_))
        ));
    }

    #[test]
    fn profile_rejects_invalid_probabilities() {
        let mut profile = SimProfile::new();
        assert!(matches!(
            profile.insert("bad", ProfileEntry { p_priv: 1.2, p_abstain: 0.0 }),
            Err(ProfileError::InvalidProbability { .. })
        ));
        assert!(matches!(
            profile.insert("bad2", ProfileEntry { p_priv: 0.7, p_abstain: 0.5 }),
            Err(ProfileError::InvalidProbability { .. })
        ));
    }

    #[test]
    fn profile_round_trips_through_jsonl() {
        let mut profile = SimProfile::new();
        profile
            .insert("a", ProfileEntry { p_priv: 1.0, p_abstain: 0.0 })
            .unwrap();
        profile
            .insert("b", ProfileEntry { p_priv: 0.5, p_abstain: 0.25 })
            .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        profile.save(f.path()).unwrap();
        let loaded = SimProfile::load(f.path()).unwrap();
        assert_eq!(profile, loaded);
    }

    #[test]
    fn coverage_validation_reports_missing() {
        let mut profile = SimProfile::new();
        profile
            .insert("a", ProfileEntry { p_priv: 0.0, p_abstain: 0.0 })
            .unwrap();
        let ids = ["a", "b", "c"];
        match profile.validate_covers(ids.iter().copied()) {
            Err(ProfileError::MissingEntries { missing, total, first }) => {
                assert_eq!((missing, total), (2, 3));
                assert_eq!(first, "b");
            }
            other => panic!("expected MissingEntries, got {other:?}"),
        }
    }
}
