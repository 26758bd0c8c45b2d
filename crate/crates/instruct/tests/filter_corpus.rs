use std::collections::BTreeSet;

use sceneaug_instruct::{
    run_filters, run_pipeline, FilterRule, JobStatus, ParaphraseJob, PipelineConfig, RetryPolicy,
    ScriptedClient, VerbTable,
};
use serde::Deserialize;

#[derive(Deserialize)]
struct Labeled {
    id: String,
    original: String,
    paraphrase: String,
    expected: Vec<FilterRule>,
}

fn corpus() -> Vec<Labeled> {
    let text = include_str!("data/filter_corpus.jsonl");
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn filters_agree_with_hand_labels() {
    let table = VerbTable::default();
    let corpus = corpus();
    assert_eq!(corpus.len(), 30);
    for item in &corpus {
        let failed: BTreeSet<FilterRule> = run_filters(&item.original, &item.paraphrase, &table)
            .iter()
            .filter_map(|v| v.failed_rule)
            .collect();
        let expected: BTreeSet<FilterRule> = item.expected.iter().copied().collect();
        assert_eq!(failed, expected, "{}: {:?}", item.id, item.paraphrase);
    }
}

#[test]
fn pipeline_summary_matches_hand_labels() {
    let corpus = corpus();
    let mut client = ScriptedClient::new();
    let mut jobs = Vec::new();
    for item in &corpus {
        // Same original may appear twice with different paraphrases; key by id.
        let original = format!("[{}] {}", item.id, item.original);
        client = client.with(&original, vec![Ok(item.paraphrase.clone())]);
        jobs.push(ParaphraseJob::pending(&item.id, original));
    }
    let cfg = PipelineConfig {
        max_rounds: 1,
        retry: RetryPolicy {
            attempts: 1,
            base_delay: std::time::Duration::ZERO,
        },
        ..Default::default()
    };
    let out = run_pipeline(jobs, &client, None, &cfg).unwrap();

    let clean = corpus.iter().filter(|c| c.expected.is_empty()).count();
    assert_eq!(out.summary.count(JobStatus::Clean), clean);
    assert_eq!(out.summary.count(JobStatus::ManualReview), corpus.len() - clean);
    for (rule, key) in [(FilterRule::A, "a"), (FilterRule::B, "b"), (FilterRule::C, "c")] {
        let n = corpus.iter().filter(|c| c.expected.contains(&rule)).count();
        assert_eq!(out.summary.rule_failures[key], n, "rule {key}");
    }
    for (job, item) in out.jobs.iter().zip(&corpus) {
        assert_eq!(job.id, item.id);
        assert_eq!(job.history.len(), 1, "history kept for {}", job.id);
    }
}
