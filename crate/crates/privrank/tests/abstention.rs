//! Abstention flow, end to end: a non-answer is not a vote, and documents
//! whose every submission abstained drop out of table denominators while
//! staying visible in the metadata.

use privrank::analytics::{
    aggregate, per_setting_averages, table, threshold_sweep, variability_counts,
};
use privrank::campaign::{run_campaign, CampaignPlan, ResultStore};
use privrank::corpus::{Corpus, Document, GoldLabel};
use privrank::gateway::{ProfileEntry, SimProfile, SimulatorConfig, SimulatorProvider};
use privrank::prompting::{PromptTemplate, Verdict};

/// 8 documents: d0 abstains every time, d1 abstains sometimes, the rest
/// never abstain.
fn abstaining_setup() -> (Corpus, SimProfile) {
    let entries: [(&str, GoldLabel, f64, f64); 8] = [
        ("d0", GoldLabel::Privileged, 0.0, 1.0),
        ("d1", GoldLabel::Privileged, 0.4, 0.3),
        ("d2", GoldLabel::Privileged, 1.0, 0.0),
        ("d3", GoldLabel::Privileged, 0.0, 0.0),
        ("d4", GoldLabel::NotPrivileged, 0.0, 0.0),
        ("d5", GoldLabel::NotPrivileged, 1.0, 0.0),
        ("d6", GoldLabel::NotPrivileged, 0.5, 0.0),
        ("d7", GoldLabel::NotPrivileged, 0.0, 0.0),
    ];
    let mut profile = SimProfile::new();
    let documents = entries
        .iter()
        .map(|(id, gold, p_priv, p_abstain)| {
            profile
                .insert(
                    *id,
                    ProfileEntry {
                        p_priv: *p_priv,
                        p_abstain: *p_abstain,
                    },
                )
                .unwrap();
            Document::new(*id, "body", Some(*gold))
        })
        .collect();
    (
        Corpus {
            documents,
            source_path: "test".into(),
        },
        profile,
    )
}

#[test]
fn abstentions_shrink_denominators_and_surface_in_metadata() {
    let (corpus, profile) = abstaining_setup();
    let template = PromptTemplate::default_privilege();
    let plan = CampaignPlan::new(vec![0.0], vec![0.9], 50, 10, &template, "sim").unwrap();
    let provider = SimulatorProvider::new(SimulatorConfig {
        profile,
        seed: 3,
        model_name: "sim".into(),
    });
    let dir = tempfile::tempdir().unwrap();
    let mut store = ResultStore::open(dir.path().join("s.jsonl")).unwrap();
    let summary = run_campaign(&plan, &corpus, &provider, &mut store, &template, 4).unwrap();
    assert!(summary.abstains >= 10, "d0 alone abstains 10 times");

    // d0's abstains are stored as records, not dropped.
    let d0_records: Vec<_> = store
        .records()
        .iter()
        .filter(|r| r.doc_id == "d0")
        .collect();
    assert_eq!(d0_records.len(), 10);
    assert!(d0_records.iter().all(|r| r.verdict == Verdict::Abstain));
    assert!(d0_records.iter().all(|r| r.raw.is_empty()));

    // Scores: d0 has no votes at all; d1's denominator counts only its
    // answered trials.
    let settings = plan.settings();
    let records = aggregate(store.records(), &plan, &corpus, &settings).unwrap();
    let rec = |id: &str| records.iter().find(|r| r.doc_id == id).unwrap();
    assert_eq!(rec("d0").ts, 0);
    assert_eq!(rec("d0").abstains, 10);
    assert_eq!(rec("d0").score, None);
    assert_eq!(rec("d0").rank, None);
    let d1 = rec("d1");
    assert!(d1.abstains > 0, "p_abstain = 0.3 over 10 trials");
    assert_eq!(d1.ts + d1.abstains, 10);
    assert_eq!(d1.score, Some(d1.np as f64 / d1.ts as f64));

    // Sweep counts cover only the 7 scored documents; d0 is reported, not
    // counted.
    let rows = threshold_sweep(&records, &corpus).unwrap();
    for row in &rows {
        assert_eq!(row.metrics.evaluated(), 7);
    }
    // At t = 0 every scored doc is predicted privileged: 3 scored gold-P.
    let bottom = &rows[9];
    assert_eq!(bottom.metrics.tp, 3);
    assert_eq!(bottom.metrics.recall(), Some(1.0));
    let fully_abstained = records.iter().filter(|r| r.score.is_none()).count() as u64;
    assert_eq!(fully_abstained, 1);
    let sweep = table::sweep_table(&rows, "10 submissions", 10, fully_abstained);
    assert_eq!(sweep.meta.evaluated, 7);
    assert_eq!(sweep.meta.fully_abstained, 1);
    assert!(sweep.render_csv().contains("1 fully abstained"));

    // Per-setting averages evaluate the same 7 documents; within them, a
    // trial-level abstain counts as a NotPrivileged prediction.
    let averages = per_setting_averages(store.records(), &plan, &corpus).unwrap();
    assert_eq!(averages[0].evaluated, 7);
    assert_eq!(averages[0].fully_abstained, 1);

    // Variability: d0 is neither consistent nor inconsistent.
    let counts = variability_counts(store.records(), &plan, &corpus, &settings).unwrap();
    assert_eq!(counts[0].fully_abstained, 1);
    assert_eq!(
        counts[0].inconsistent + counts[0].consistent,
        7,
        "evaluated documents partition into consistent and inconsistent"
    );
}
