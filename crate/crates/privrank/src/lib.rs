//! Harness for exploiting LLM output randomness in binary text classification.
//!
//! The pipeline: load a labeled corpus, submit each document to a classifier
//! multiple times under varied sampling parameters, aggregate the verdicts
//! into per-document confidence scores, and evaluate ranked-threshold
//! precision/recall. A calibrated stochastic simulator stands in for the
//! real model so every aggregate behavior is reproducible offline.
//!
//! Modules mirror the pipeline stages:
//!
//! - [`corpus`] - labeled document sets (JSONL in, JSONL out)
//! - [`prompting`] - prompt template rendering and free-text verdict parsing
//! - [`gateway`] - classification providers: HTTP chat-completions or a
//!   seeded deterministic simulator
//! - [`campaign`] - the submission matrix (documents x settings x trials)
//!   with resume semantics over an append-only JSONL result store
//! - [`analytics`] - confidence scores, precision/recall, threshold sweeps,
//!   variability counts, the binomial ensemble oracle, and profile calibration
//! - [`report`] - the `privrank` CLI tying it together

pub mod analytics;
pub mod campaign;
pub mod corpus;
pub mod gateway;
pub mod prompting;
pub mod report;
