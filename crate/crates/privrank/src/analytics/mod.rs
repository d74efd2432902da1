//! Confidence scores, ranking, precision/recall, threshold sweeps,
//! variability counts, and the analytic binomial oracle.
//!
//! Conventions, applied uniformly across every table:
//!
//! - An Abstain is not a vote: it is excluded from `ts` in confidence
//!   scores. When a single trial must yield a prediction, an Abstain maps
//!   to NotPrivileged (a non-answer withholds nothing).
//! - Metrics are computed over documents with at least one non-Abstain
//!   verdict in the submission pool; the fully-abstained remainder is
//!   reported alongside so either denominator convention is recoverable.
//! - Rates are exact rationals internally and are rounded to 0.1% only at
//!   display time.

pub mod calibrate;
pub mod table;

use std::collections::HashMap;

use thiserror::Error;

use crate::campaign::{CampaignPlan, TrialRecord};
use crate::corpus::{Corpus, GoldLabel};
use crate::gateway::SamplingParams;
use crate::prompting::Verdict;

pub use calibrate::{
    calibrate_profile, CalibrateError, Calibration, CalibrationTargets, PoolSizes,
};
pub use table::{Cell, EvalRow, EvalTable, TableMeta};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("store is incomplete: {total_missing} expected records missing (e.g. {})", example_keys(.missing))]
    IncompleteStore {
        /// Human-readable descriptions of the first few missing records.
        missing: Vec<String>,
        total_missing: usize,
    },
    #[error("document {0:?} has a prediction but no gold label")]
    MissingGold(String),
}

fn example_keys(missing: &[String]) -> String {
    missing.join(", ")
}

// ---------------------------------------------------------------------------
// Confidence scores
// ---------------------------------------------------------------------------

/// Per-document aggregate over a submission pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceRecord {
    pub doc_id: String,
    /// Privileged verdicts.
    pub np: u32,
    /// Counted (non-Abstain) submissions.
    pub ts: u32,
    pub abstains: u32,
    /// `np / ts`; absent when every submission abstained.
    pub score: Option<f64>,
    /// 1-based rank by descending score, ties broken by doc id; absent for
    /// unscored documents.
    pub rank: Option<u32>,
}

/// The confidence ratio `np / ts`; absent when `ts` is zero.
pub fn confidence_score(np: u32, ts: u32) -> Result<Option<f64>, AnalyticsError> {
    if np > ts {
        return Err(AnalyticsError::ContractViolation(format!(
            "np ({np}) exceeds ts ({ts})"
        )));
    }
    if ts == 0 {
        return Ok(None);
    }
    Ok(Some(np as f64 / ts as f64))
}

fn setting_bits(p: &SamplingParams) -> (u64, u64, u32) {
    (p.temperature().to_bits(), p.top_p().to_bits(), p.top_k())
}

/// Verify that the store holds one record for every (document x setting x
/// trial) of the plan, restricted to `settings`.
fn check_complete(
    records_by_key: &HashMap<(String, u64, u64, u32, u32), &TrialRecord>,
    plan: &CampaignPlan,
    corpus: &Corpus,
    settings: &[SamplingParams],
) -> Result<(), AnalyticsError> {
    let mut missing = Vec::new();
    let mut total_missing = 0usize;
    for doc in &corpus.documents {
        for s in settings {
            let (tb, pb, k) = setting_bits(s);
            for trial in 0..plan.trials_per_setting {
                if !records_by_key.contains_key(&(doc.id.clone(), tb, pb, k, trial)) {
                    total_missing += 1;
                    if missing.len() < 10 {
                        missing.push(format!(
                            "{} temperature={} top_p={} trial={}",
                            doc.id,
                            s.temperature(),
                            s.top_p(),
                            trial
                        ));
                    }
                }
            }
        }
    }
    if total_missing > 0 {
        return Err(AnalyticsError::IncompleteStore {
            missing,
            total_missing,
        });
    }
    Ok(())
}

fn index_records<'a>(
    records: &'a [TrialRecord],
    plan: &CampaignPlan,
) -> HashMap<(String, u64, u64, u32, u32), &'a TrialRecord> {
    let mut map = HashMap::new();
    for r in records {
        if r.template_digest != plan.template_digest || r.model_name != plan.model_name {
            continue;
        }
        map.insert(
            (
                r.doc_id.clone(),
                r.temperature.to_bits(),
                r.top_p.to_bits(),
                r.top_k,
                r.trial,
            ),
            r,
        );
    }
    map
}

/// Aggregate verdict counts into one [`ConfidenceRecord`] per corpus
/// document over the given submission pool (`settings` x all plan trials).
///
/// Counting is order-independent: shuffling the records never changes the
/// result. Fails if any expected record is missing.
pub fn aggregate(
    records: &[TrialRecord],
    plan: &CampaignPlan,
    corpus: &Corpus,
    settings: &[SamplingParams],
) -> Result<Vec<ConfidenceRecord>, AnalyticsError> {
    let by_key = index_records(records, plan);
    check_complete(&by_key, plan, corpus, settings)?;

    let mut out = Vec::with_capacity(corpus.len());
    for doc in &corpus.documents {
        let mut np = 0u32;
        let mut ts = 0u32;
        let mut abstains = 0u32;
        for s in settings {
            let (tb, pb, k) = setting_bits(s);
            for trial in 0..plan.trials_per_setting {
                let r = by_key[&(doc.id.clone(), tb, pb, k, trial)];
                match r.verdict {
                    Verdict::Privileged => {
                        np += 1;
                        ts += 1;
                    }
                    Verdict::NotPrivileged => ts += 1,
                    Verdict::Abstain => abstains += 1,
                }
            }
        }
        out.push(ConfidenceRecord {
            doc_id: doc.id.clone(),
            np,
            ts,
            abstains,
            score: confidence_score(np, ts)?,
            rank: None,
        });
    }
    assign_ranks(&mut out);
    Ok(out)
}

/// Rank scored records by descending score, ties broken by doc id.
fn assign_ranks(records: &mut [ConfidenceRecord]) {
    let mut order: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].score.is_some())
        .collect();
    order.sort_by(|&a, &b| {
        let sa = records[a].score.unwrap();
        let sb = records[b].score.unwrap();
        sb.partial_cmp(&sa)
            .unwrap()
            .then_with(|| records[a].doc_id.cmp(&records[b].doc_id))
    });
    for (rank0, &i) in order.iter().enumerate() {
        records[i].rank = Some(rank0 as u32 + 1);
    }
}

// ---------------------------------------------------------------------------
// Precision / recall
// ---------------------------------------------------------------------------

/// Predicted labels for a set of documents; `true` means Privileged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictionSet {
    preds: std::collections::BTreeMap<String, bool>,
}

impl PredictionSet {
    pub fn new() -> Self {
        PredictionSet::default()
    }

    pub fn insert(&mut self, doc_id: impl Into<String>, privileged: bool) {
        self.preds.insert(doc_id.into(), privileged);
    }

    pub fn get(&self, doc_id: &str) -> Option<bool> {
        self.preds.get(doc_id).copied()
    }

    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, bool)> {
        self.preds.iter().map(|(k, &v)| (k, v))
    }
}

/// Confusion counts with Privileged as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Metrics {
    pub fn evaluated(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `tp / (tp + fp)`; absent when nothing was predicted positive.
    pub fn precision(&self) -> Option<f64> {
        let den = self.tp + self.fp;
        (den > 0).then(|| self.tp as f64 / den as f64)
    }

    /// `tp / (tp + fn)`; absent when no gold positives were evaluated.
    pub fn recall(&self) -> Option<f64> {
        let den = self.tp + self.fn_;
        (den > 0).then(|| self.tp as f64 / den as f64)
    }
}

/// Standard confusion counts over the predicted documents.
pub fn precision_recall(
    preds: &PredictionSet,
    corpus: &Corpus,
) -> Result<Metrics, AnalyticsError> {
    let mut m = Metrics::default();
    for (doc_id, predicted_privileged) in preds.iter() {
        let gold = corpus
            .get(doc_id)
            .and_then(|d| d.gold)
            .ok_or_else(|| AnalyticsError::MissingGold(doc_id.clone()))?;
        match (predicted_privileged, gold) {
            (true, GoldLabel::Privileged) => m.tp += 1,
            (true, GoldLabel::NotPrivileged) => m.fp += 1,
            (false, GoldLabel::Privileged) => m.fn_ += 1,
            (false, GoldLabel::NotPrivileged) => m.tn += 1,
        }
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// Per-setting averages
// ---------------------------------------------------------------------------

/// Precision and recall averaged across trial indices for one setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SettingAverages {
    pub temperature: f64,
    pub top_p: f64,
    pub mean_precision: Option<f64>,
    pub mean_recall: Option<f64>,
    /// Documents with at least one non-Abstain verdict under this setting.
    pub evaluated: u64,
    pub fully_abstained: u64,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// For each plan setting: one prediction set per trial index (Abstain maps
/// to NotPrivileged), metrics per trial, then the arithmetic mean of
/// precision and recall across trials.
pub fn per_setting_averages(
    records: &[TrialRecord],
    plan: &CampaignPlan,
    corpus: &Corpus,
) -> Result<Vec<SettingAverages>, AnalyticsError> {
    let settings = plan.settings();
    let by_key = index_records(records, plan);
    check_complete(&by_key, plan, corpus, &settings)?;

    let mut out = Vec::with_capacity(settings.len());
    for s in &settings {
        let (tb, pb, k) = setting_bits(s);
        // Evaluated documents: >= 1 non-Abstain verdict under this setting.
        let mut evaluated_docs = Vec::new();
        let mut fully_abstained = 0u64;
        for doc in &corpus.documents {
            let any_vote = (0..plan.trials_per_setting).any(|trial| {
                by_key[&(doc.id.clone(), tb, pb, k, trial)].verdict != Verdict::Abstain
            });
            if any_vote {
                evaluated_docs.push(doc.id.clone());
            } else {
                fully_abstained += 1;
            }
        }

        let mut precisions = Vec::new();
        let mut recalls = Vec::new();
        for trial in 0..plan.trials_per_setting {
            let mut preds = PredictionSet::new();
            for doc_id in &evaluated_docs {
                let r = by_key[&(doc_id.clone(), tb, pb, k, trial)];
                preds.insert(doc_id.clone(), r.verdict == Verdict::Privileged);
            }
            let m = precision_recall(&preds, corpus)?;
            if let Some(p) = m.precision() {
                precisions.push(p);
            }
            if let Some(r) = m.recall() {
                recalls.push(r);
            }
        }
        out.push(SettingAverages {
            temperature: s.temperature(),
            top_p: s.top_p(),
            mean_precision: mean(&precisions),
            mean_recall: mean(&recalls),
            evaluated: evaluated_docs.len() as u64,
            fully_abstained,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Threshold sweep
// ---------------------------------------------------------------------------

/// One row of a score-threshold table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Lower bound of the score range; predict Privileged iff score >= t.
    pub threshold: f64,
    pub range_label: String,
    pub metrics: Metrics,
}

/// Fixed table ranges: lower bounds 0.9 down to 0.0 in steps of 0.1.
pub fn sweep_thresholds() -> Vec<(f64, String)> {
    (0..10)
        .rev()
        .map(|k| {
            (
                k as f64 / 10.0,
                format!("{:.2}-{:.2}", k as f64 / 10.0, (k + 1) as f64 / 10.0),
            )
        })
        .collect()
}

/// Cumulative threshold table: for each lower bound t (descending), predict
/// Privileged iff score >= t and compute confusion counts over the scored
/// documents. Unscored documents are never predicted Privileged and are
/// excluded from the counts.
pub fn threshold_sweep(
    records: &[ConfidenceRecord],
    corpus: &Corpus,
) -> Result<Vec<SweepRow>, AnalyticsError> {
    let scored: Vec<(&ConfidenceRecord, GoldLabel)> = records
        .iter()
        .filter(|r| r.score.is_some())
        .map(|r| {
            let gold = corpus
                .get(&r.doc_id)
                .and_then(|d| d.gold)
                .ok_or_else(|| AnalyticsError::MissingGold(r.doc_id.clone()))?;
            Ok((r, gold))
        })
        .collect::<Result<_, AnalyticsError>>()?;

    let mut rows = Vec::with_capacity(10);
    for (t, range_label) in sweep_thresholds() {
        let mut m = Metrics::default();
        for (r, gold) in &scored {
            let predicted_privileged = r.score.unwrap() >= t;
            match (predicted_privileged, gold) {
                (true, GoldLabel::Privileged) => m.tp += 1,
                (true, GoldLabel::NotPrivileged) => m.fp += 1,
                (false, GoldLabel::Privileged) => m.fn_ += 1,
                (false, GoldLabel::NotPrivileged) => m.tn += 1,
            }
        }
        rows.push(SweepRow {
            threshold: t,
            range_label,
            metrics: m,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Variability counts
// ---------------------------------------------------------------------------

/// Documents with divergent verdicts across one setting's trials.
#[derive(Debug, Clone, PartialEq)]
pub struct VariabilityCount {
    pub temperature: f64,
    pub top_p: f64,
    /// Documents whose non-Abstain verdicts are not all equal.
    pub inconsistent: u64,
    /// Remaining evaluated documents.
    pub consistent: u64,
    pub fully_abstained: u64,
}

/// Per setting: count documents whose non-Abstain verdicts over the
/// setting's trials contain at least two distinct values.
pub fn variability_counts(
    records: &[TrialRecord],
    plan: &CampaignPlan,
    corpus: &Corpus,
    settings: &[SamplingParams],
) -> Result<Vec<VariabilityCount>, AnalyticsError> {
    let by_key = index_records(records, plan);
    check_complete(&by_key, plan, corpus, settings)?;

    let mut out = Vec::with_capacity(settings.len());
    for s in settings {
        let (tb, pb, k) = setting_bits(s);
        let mut inconsistent = 0u64;
        let mut consistent = 0u64;
        let mut fully_abstained = 0u64;
        for doc in &corpus.documents {
            let mut saw_priv = false;
            let mut saw_notpriv = false;
            for trial in 0..plan.trials_per_setting {
                match by_key[&(doc.id.clone(), tb, pb, k, trial)].verdict {
                    Verdict::Privileged => saw_priv = true,
                    Verdict::NotPrivileged => saw_notpriv = true,
                    Verdict::Abstain => {}
                }
            }
            match (saw_priv, saw_notpriv) {
                (true, true) => inconsistent += 1,
                (false, false) => fully_abstained += 1,
                _ => consistent += 1,
            }
        }
        out.push(VariabilityCount {
            temperature: s.temperature(),
            top_p: s.top_p(),
            inconsistent,
            consistent,
            fully_abstained,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Binomial oracle
// ---------------------------------------------------------------------------

/// P(X >= k) for X ~ Binomial(n, p): the exact pmf sum from k to n.
///
/// Terms are evaluated in log space, so the sum is numerically stable well
/// past the n <= 64 sizes used here.
pub fn binomial_tail(n: u32, k: u32, p: f64) -> Result<f64, AnalyticsError> {
    if k > n {
        return Err(AnalyticsError::ContractViolation(format!(
            "k ({k}) exceeds n ({n})"
        )));
    }
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(AnalyticsError::ContractViolation(format!(
            "p ({p}) outside [0, 1]"
        )));
    }
    if k == 0 {
        return Ok(1.0);
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }

    // ln(i!) by direct summation: exact enough for the factorials involved.
    let n_us = n as usize;
    let mut ln_fact = vec![0.0f64; n_us + 1];
    for i in 1..=n_us {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    let ln_p = p.ln();
    let ln_q = (1.0 - p).ln();

    let mut sum = 0.0f64;
    for i in k..=n {
        let i_us = i as usize;
        let ln_pmf = ln_fact[n_us] - ln_fact[i_us] - ln_fact[n_us - i_us]
            + i as f64 * ln_p
            + (n - i) as f64 * ln_q;
        sum += ln_pmf.exp();
    }
    Ok(sum.min(1.0))
}

/// Expected confusion counts; precision and recall are ratios of these
/// expectations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedMetrics {
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
    pub tn: f64,
}

impl ExpectedMetrics {
    pub fn precision(&self) -> Option<f64> {
        let den = self.tp + self.fp;
        (den > 0.0).then(|| self.tp / den)
    }

    pub fn recall(&self) -> Option<f64> {
        let den = self.tp + self.fn_;
        (den > 0.0).then(|| self.tp / den)
    }
}

/// Smallest verdict count whose score clears the threshold, under exactly
/// the comparison [`threshold_sweep`] uses.
pub fn min_votes_for_threshold(ts: u32, t: f64) -> u32 {
    (0..=ts)
        .find(|&np| np as f64 / ts as f64 >= t)
        .unwrap_or(ts + 1)
}

/// Analytic expectation of the threshold-sweep confusion counts for an
/// abstain-free profile: each document contributes its binomial tail
/// probability of reaching the minimum vote count.
pub fn expected_threshold_metrics(
    profile: &crate::gateway::SimProfile,
    corpus: &Corpus,
    ts: u32,
    t: f64,
) -> Result<ExpectedMetrics, AnalyticsError> {
    if ts == 0 {
        return Err(AnalyticsError::ContractViolation(
            "ts must be positive".into(),
        ));
    }
    let k = min_votes_for_threshold(ts, t);
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut gold_p = 0.0;
    let mut gold_n = 0.0;
    for doc in &corpus.documents {
        let gold = doc
            .gold
            .ok_or_else(|| AnalyticsError::MissingGold(doc.id.clone()))?;
        let entry = profile.get(&doc.id).ok_or_else(|| {
            AnalyticsError::ContractViolation(format!("profile has no entry for {:?}", doc.id))
        })?;
        let tail = if k > ts {
            0.0
        } else {
            binomial_tail(ts, k, entry.p_priv)?
        };
        match gold {
            GoldLabel::Privileged => {
                gold_p += 1.0;
                tp += tail;
            }
            GoldLabel::NotPrivileged => {
                gold_n += 1.0;
                fp += tail;
            }
        }
    }
    Ok(ExpectedMetrics {
        tp,
        fp,
        fn_: gold_p - tp,
        tn: gold_n - fp,
    })
}
