//! Profile calibration: solve pool sizes so a simulated corpus reproduces
//! target single-trial precision/recall and a target 5-trial inconsistency
//! rate.
//!
//! The profile is built from six pools of documents:
//!
//! | pool                | gold           | p_priv |
//! |---------------------|----------------|--------|
//! | deterministic TP    | privileged     | 1.0    |
//! | deterministic FN    | privileged     | 0.0    |
//! | flaky privileged    | privileged     | 0.5    |
//! | deterministic TN    | not privileged | 0.0    |
//! | flaky non-privileged| not privileged | 0.5    |
//! | deterministic FP    | not privileged | 1.0    |
//!
//! Flaky probability is fixed at 0.5: it maximizes per-document
//! inconsistency detectability, which keeps the flaky pools small and the
//! arithmetic transparent. The split of flakiness between the privileged
//! and non-privileged side is the one free dimension; it is fixed by sizing
//! the flaky-privileged pool toward a ~4 point ensemble recall gain at the
//! 0.1 score threshold over 5 trials.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::analytics::{binomial_tail, expected_threshold_metrics};
use crate::corpus::{Corpus, Document, GoldLabel};
use crate::gateway::{ProfileEntry, SimProfile};

/// Trials per setting assumed by the inconsistency target.
pub const CALIBRATION_TRIALS: u32 = 5;

/// Bernoulli parameter of flaky documents.
pub const FLAKY_P: f64 = 0.5;

/// Ensemble recall gain (single trial -> 5-trial sweep at t = 0.1) the
/// flaky-privileged pool is sized toward.
pub const RECALL_GAIN_TARGET: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTargets {
    pub n_docs: usize,
    pub n_privileged: usize,
    /// Expected single-trial precision.
    pub precision: f64,
    /// Expected single-trial recall.
    pub recall: f64,
    /// Expected fraction of documents with divergent verdicts over 5 trials.
    pub inconsistency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSizes {
    pub det_true_positive: usize,
    pub det_false_negative: usize,
    pub flaky_privileged: usize,
    pub det_true_negative: usize,
    pub flaky_non_privileged: usize,
    pub det_false_positive: usize,
}

impl PoolSizes {
    pub fn flaky_total(&self) -> usize {
        self.flaky_privileged + self.flaky_non_privileged
    }
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub profile: SimProfile,
    pub corpus: Corpus,
    pub pools: PoolSizes,
    /// Pool arithmetic and expected-metric verification, human readable.
    pub report: String,
}

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error("infeasible targets: {0}")]
    InfeasibleTargets(String),
}

fn infeasible(msg: impl Into<String>) -> CalibrateError {
    CalibrateError::InfeasibleTargets(msg.into())
}

/// Probability that a flaky document shows divergent verdicts over
/// `CALIBRATION_TRIALS` trials.
fn flaky_detect_rate() -> f64 {
    1.0 - (FLAKY_P.powi(CALIBRATION_TRIALS as i32)
        + (1.0 - FLAKY_P).powi(CALIBRATION_TRIALS as i32))
}

/// Solve pool sizes for the targets, build the synthetic corpus and
/// profile, and verify the solved pools reproduce the targets within 1%.
pub fn calibrate_profile(
    targets: &CalibrationTargets,
    seed: u64,
) -> Result<Calibration, CalibrateError> {
    let n = targets.n_docs;
    let p_count = targets.n_privileged;
    if n == 0 {
        return Err(infeasible("n_docs must be positive"));
    }
    if p_count > n {
        return Err(infeasible(format!(
            "n_privileged ({p_count}) exceeds n_docs ({n})"
        )));
    }
    if !(0.0..=1.0).contains(&targets.recall) {
        return Err(infeasible(format!(
            "recall {} outside [0, 1]",
            targets.recall
        )));
    }
    if !(targets.precision > 0.0 && targets.precision <= 1.0) {
        return Err(infeasible(format!(
            "precision {} outside (0, 1]",
            targets.precision
        )));
    }
    if !(0.0..1.0).contains(&targets.inconsistency) {
        return Err(infeasible(format!(
            "inconsistency {} outside [0, 1)",
            targets.inconsistency
        )));
    }
    if p_count == 0 && targets.recall > 0.0 {
        return Err(infeasible("recall target requires privileged documents"));
    }

    let n_f = n as f64;
    let p_f = p_count as f64;
    let neg_f = (n - p_count) as f64;

    // Expected single-trial confusion mass.
    let e_tp = targets.recall * p_f;
    let e_fp = e_tp * (1.0 - targets.precision) / targets.precision;
    if e_fp > neg_f {
        return Err(infeasible(format!(
            "precision/recall targets require {e_fp:.1} expected false positives but only {neg_f} non-privileged documents exist"
        )));
    }

    let detect = flaky_detect_rate();
    let flaky_total = (targets.inconsistency * n_f / detect).round() as usize;
    if flaky_total > n {
        return Err(infeasible(format!(
            "inconsistency target requires {flaky_total} flaky documents but the corpus has {n}"
        )));
    }

    // Caps keeping every pool non-negative.
    let fp_cap_a = (2.0 * e_tp).floor() as usize; // det TP pool >= 0
    let fp_cap_dfn = (2.0 * (p_f - e_tp)).floor() as usize; // det FN pool >= 0
    let fn_cap_c = (2.0 * e_fp).floor() as usize; // det FP pool >= 0
    let fn_cap_b = (2.0 * (neg_f - e_fp)).floor() as usize; // det TN pool >= 0

    let tail_gain = binomial_tail(CALIBRATION_TRIALS, 1, FLAKY_P)
        .expect("valid binomial arguments")
        - FLAKY_P;
    let fp_ideal = if flaky_total == 0 || p_count == 0 {
        0.0
    } else {
        RECALL_GAIN_TARGET * p_f / tail_gain
    };
    let fp_cap = fp_cap_a.min(fp_cap_dfn).min(flaky_total).min(p_count);
    let fn_cap = fn_cap_c.min(fn_cap_b).min(n - p_count);
    let fp_floor = flaky_total.saturating_sub(fn_cap);
    if fp_floor > fp_cap {
        return Err(infeasible(format!(
            "inconsistency target needs {flaky_total} flaky documents but the precision/recall targets only leave room for {}",
            fp_cap + fn_cap
        )));
    }

    // The flaky split has one free dimension. Search a small window around
    // the gain-ideal split for the best target fit: rounding half-integer
    // pools costs up to half a document of expected tp/fp, which matters at
    // small corpus sizes.
    let ideal_clamped = (fp_ideal.round() as usize).clamp(fp_floor, fp_cap);
    let window_lo = ideal_clamped.saturating_sub(3).max(fp_floor);
    let window_hi = (ideal_clamped + 3).min(fp_cap);
    let mut best: Option<(f64, usize, usize, usize)> = None; // (err, f_p, det_tp, det_fp)
    for f_p in window_lo..=window_hi {
        let f_n = flaky_total - f_p;
        let a = ((e_tp - FLAKY_P * f_p as f64).round() as i64).clamp(0, (p_count - f_p) as i64)
            as usize;
        let c = ((e_fp - FLAKY_P * f_n as f64).round() as i64)
            .clamp(0, (n - p_count - f_n) as i64) as usize;
        let tp = a as f64 + FLAKY_P * f_p as f64;
        let fp = c as f64 + FLAKY_P * f_n as f64;
        let recall_err = if p_count > 0 {
            (tp / p_f - targets.recall).abs()
        } else {
            0.0
        };
        let precision_err = if tp + fp > 0.0 {
            (tp / (tp + fp) - targets.precision).abs()
        } else {
            0.0
        };
        let err = recall_err + precision_err;
        let better = match &best {
            None => true,
            Some((best_err, best_fp, _, _)) => {
                err < *best_err - 1e-12
                    || ((err - best_err).abs() <= 1e-12
                        && f_p.abs_diff(ideal_clamped) < best_fp.abs_diff(ideal_clamped))
            }
        };
        if better {
            best = Some((err, f_p, a, c));
        }
    }
    let (_, flaky_priv, det_tp, det_fp) = best.expect("window is non-empty");
    let flaky_neg = flaky_total - flaky_priv;
    let det_fn = p_count
        .checked_sub(det_tp + flaky_priv)
        .ok_or_else(|| infeasible("privileged pools exceed n_privileged"))?;
    let det_tn = (n - p_count)
        .checked_sub(det_fp + flaky_neg)
        .ok_or_else(|| infeasible("non-privileged pools exceed corpus remainder"))?;

    let pools = PoolSizes {
        det_true_positive: det_tp,
        det_false_negative: det_fn,
        flaky_privileged: flaky_priv,
        det_true_negative: det_tn,
        flaky_non_privileged: flaky_neg,
        det_false_positive: det_fp,
    };

    // Closed-form expectations from the integer pools.
    let achieved_tp = det_tp as f64 + FLAKY_P * flaky_priv as f64;
    let achieved_fp = det_fp as f64 + FLAKY_P * flaky_neg as f64;
    let achieved_recall = if p_count > 0 { achieved_tp / p_f } else { 0.0 };
    let achieved_precision = if achieved_tp + achieved_fp > 0.0 {
        achieved_tp / (achieved_tp + achieved_fp)
    } else {
        1.0
    };
    let achieved_inconsistency = detect * pools.flaky_total() as f64 / n_f;

    const TOLERANCE: f64 = 0.01 + 1e-9;
    if p_count > 0 && (achieved_recall - targets.recall).abs() > TOLERANCE {
        return Err(infeasible(format!(
            "recall target {:.4} unattainable at this corpus size (closest {:.4})",
            targets.recall, achieved_recall
        )));
    }
    if (achieved_precision - targets.precision).abs() > TOLERANCE {
        return Err(infeasible(format!(
            "precision target {:.4} unattainable at this corpus size (closest {:.4})",
            targets.precision, achieved_precision
        )));
    }
    if (achieved_inconsistency - targets.inconsistency).abs() > TOLERANCE {
        return Err(infeasible(format!(
            "inconsistency target {:.4} unattainable at this corpus size (closest {:.4})",
            targets.inconsistency, achieved_inconsistency
        )));
    }

    let (corpus, profile) = synthesize(&pools, n, seed);

    let mut report = String::new();
    {
        use std::fmt::Write;
        let w = &mut report;
        writeln!(w, "# Calibration report").unwrap();
        writeln!(w).unwrap();
        writeln!(
            w,
            "Targets: {} documents, {} privileged, single-trial precision {:.3}, recall {:.3}, {}-trial inconsistency {:.3}.",
            n, p_count, targets.precision, targets.recall, CALIBRATION_TRIALS, targets.inconsistency
        )
        .unwrap();
        writeln!(w).unwrap();
        writeln!(w, "## Pool arithmetic").unwrap();
        writeln!(w).unwrap();
        writeln!(w, "Expected single-trial true positives  = recall x privileged = {:.2}", e_tp).unwrap();
        writeln!(w, "Expected single-trial false positives = tp x (1 - precision) / precision = {:.2}", e_fp).unwrap();
        writeln!(
            w,
            "Flaky documents = inconsistency x docs / detect-rate = {:.3} x {} / {:.4} = {:.1} -> {}",
            targets.inconsistency, n, detect, targets.inconsistency * n_f / detect, pools.flaky_total()
        )
        .unwrap();
        writeln!(
            w,
            "Flaky privileged sized for a {:.0}-point ensemble recall gain: {:.3} x {} / {:.5} = {:.1} -> {}",
            RECALL_GAIN_TARGET * 100.0, RECALL_GAIN_TARGET, p_count, tail_gain,
            RECALL_GAIN_TARGET * p_f / tail_gain, pools.flaky_privileged
        )
        .unwrap();
        writeln!(w).unwrap();
        writeln!(w, "| pool | gold | p_priv | size |").unwrap();
        writeln!(w, "|------|------|--------|------|").unwrap();
        writeln!(w, "| deterministic true positive | privileged | 1.0 | {} |", pools.det_true_positive).unwrap();
        writeln!(w, "| flaky privileged | privileged | {FLAKY_P} | {} |", pools.flaky_privileged).unwrap();
        writeln!(w, "| deterministic false negative | privileged | 0.0 | {} |", pools.det_false_negative).unwrap();
        writeln!(w, "| deterministic false positive | not privileged | 1.0 | {} |", pools.det_false_positive).unwrap();
        writeln!(w, "| flaky non-privileged | not privileged | {FLAKY_P} | {} |", pools.flaky_non_privileged).unwrap();
        writeln!(w, "| deterministic true negative | not privileged | 0.0 | {} |", pools.det_true_negative).unwrap();
        writeln!(w).unwrap();
        writeln!(w, "## Expected-metric verification").unwrap();
        writeln!(w).unwrap();
        writeln!(
            w,
            "Single trial: precision {:.4} (target {:.4}), recall {:.4} (target {:.4})",
            achieved_precision, targets.precision, achieved_recall, targets.recall
        )
        .unwrap();
        writeln!(
            w,
            "{}-trial inconsistency: {:.4} (target {:.4})",
            CALIBRATION_TRIALS, achieved_inconsistency, targets.inconsistency
        )
        .unwrap();
        if let Ok(ensemble) =
            expected_threshold_metrics(&profile, &corpus, CALIBRATION_TRIALS, 0.1)
        {
            writeln!(
                w,
                "{}-trial sweep at t = 0.1: expected precision {:.4}, recall {:.4} (gain {:+.4} recall, {:+.4} precision vs single trial)",
                CALIBRATION_TRIALS,
                ensemble.precision().unwrap_or(f64::NAN),
                ensemble.recall().unwrap_or(f64::NAN),
                ensemble.recall().unwrap_or(f64::NAN) - achieved_recall,
                ensemble.precision().unwrap_or(f64::NAN) - achieved_precision,
            )
            .unwrap();
        }
    }

    Ok(Calibration {
        profile,
        corpus,
        pools,
        report,
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Pool {
    DetTp,
    DetFn,
    FlakyPriv,
    DetTn,
    FlakyNeg,
    DetFp,
}

impl Pool {
    fn gold(self) -> GoldLabel {
        match self {
            Pool::DetTp | Pool::DetFn | Pool::FlakyPriv => GoldLabel::Privileged,
            _ => GoldLabel::NotPrivileged,
        }
    }

    fn p_priv(self) -> f64 {
        match self {
            Pool::DetTp | Pool::DetFp => 1.0,
            Pool::FlakyPriv | Pool::FlakyNeg => FLAKY_P,
            Pool::DetFn | Pool::DetTn => 0.0,
        }
    }
}

const LEGAL_SENTENCES: &[&str] = &[
    "Please keep this confidential; I am forwarding the draft agreement to our attorney for legal advice.",
    "Counsel has reviewed the indemnification language and advises that we revise it before signing.",
    "This memorandum was prepared at the request of outside counsel in anticipation of litigation.",
    "Per our discussion with legal, do not circulate the term sheet until privilege review is complete.",
    "Our lawyer asked for the underlying invoices so she can assess our exposure in the dispute.",
    "Attorney work product: preliminary damages analysis for the contemplated claim.",
];

const BUSINESS_SENTENCES: &[&str] = &[
    "The quarterly forecast is attached; please review the revenue assumptions before Friday.",
    "Can we move the vendor call to Thursday afternoon?",
    "The shipping schedule for the northeast region has been updated.",
    "Facilities confirmed the office move for the first week of next month.",
    "Marketing wants final sign-off on the product brochure by end of day.",
    "The expense report tool will be down for maintenance this weekend.",
    "Headcount planning for the support team is due to finance on Monday.",
];

/// Build the synthetic corpus and its profile, interleaving pools across
/// document ids with a seeded shuffle.
fn synthesize(pools: &PoolSizes, n: usize, seed: u64) -> (Corpus, SimProfile) {
    let mut assignment = Vec::with_capacity(n);
    assignment.extend(std::iter::repeat_n(Pool::DetTp, pools.det_true_positive));
    assignment.extend(std::iter::repeat_n(Pool::FlakyPriv, pools.flaky_privileged));
    assignment.extend(std::iter::repeat_n(Pool::DetFn, pools.det_false_negative));
    assignment.extend(std::iter::repeat_n(Pool::DetFp, pools.det_false_positive));
    assignment.extend(std::iter::repeat_n(Pool::FlakyNeg, pools.flaky_non_privileged));
    assignment.extend(std::iter::repeat_n(Pool::DetTn, pools.det_true_negative));
    debug_assert_eq!(assignment.len(), n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    assignment.shuffle(&mut rng);

    let width = n.to_string().len().max(4);
    let mut documents = Vec::with_capacity(n);
    let mut profile = SimProfile::new();
    for (i, pool) in assignment.iter().enumerate() {
        let id = format!("doc-{:0width$}", i + 1);
        let text = synth_text(*pool, &mut rng);
        documents.push(Document::new(id.clone(), text, Some(pool.gold())));
        profile
            .insert(
                id,
                ProfileEntry {
                    p_priv: pool.p_priv(),
                    p_abstain: 0.0,
                },
            )
            .expect("generated ids are unique and probabilities valid");
    }
    (
        Corpus {
            documents,
            source_path: "calibrated".into(),
        },
        profile,
    )
}

fn synth_text(pool: Pool, rng: &mut ChaCha8Rng) -> String {
    let mut sentences: Vec<&str> = Vec::new();
    let n_sentences = rng.gen_range(2..=4);
    let legal = pool.gold() == GoldLabel::Privileged;
    for i in 0..n_sentences {
        let from_legal = legal && (i == 0 || rng.gen_bool(0.4));
        let list = if from_legal {
            LEGAL_SENTENCES
        } else {
            BUSINESS_SENTENCES
        };
        sentences.push(list[rng.gen_range(0..list.len())]);
    }
    sentences.join(" ")
}
