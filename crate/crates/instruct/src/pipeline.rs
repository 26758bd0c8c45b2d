use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{ParaphraseClient, TransportError};
use crate::error::PipelineError;
use crate::filters::{run_filters, FilterVerdict};
use crate::template::PromptTemplate;
use crate::verbs::{sample_verb, VerbTable};

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Transport attempts per round, including the first.
    pub attempts: usize,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub max_rounds: usize,
    pub seed: u64,
    pub verbs: VerbTable,
    pub template: PromptTemplate,
    pub retry: RetryPolicy,
    /// Upper bound on concurrently processed jobs.
    pub max_in_flight: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_rounds: 3,
            seed: 0,
            verbs: VerbTable::default(),
            template: PromptTemplate::default(),
            retry: RetryPolicy::default(),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Clean,
    Retry,
    ManualReview,
    TransportFailed,
}

impl JobStatus {
    fn key(self) -> &'static str {
        match self {
            JobStatus::Clean => "clean",
            JobStatus::Retry => "retry",
            JobStatus::ManualReview => "manual_review",
            JobStatus::TransportFailed => "transport_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub verb: String,
    pub paraphrase: String,
    pub verdicts: Vec<FilterVerdict>,
}

impl RoundRecord {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(FilterVerdict::passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseJob {
    pub id: String,
    pub original_text: String,
    #[serde(default)]
    pub current_paraphrase: Option<String>,
    #[serde(default)]
    pub round: usize,
    pub status: JobStatus,
    #[serde(default)]
    pub history: Vec<RoundRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ParaphraseJob {
    pub fn pending(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            original_text: text.into(),
            current_paraphrase: None,
            round: 0,
            status: JobStatus::Retry,
            history: Vec::new(),
            error: None,
        }
    }

    fn is_settled(&self) -> bool {
        matches!(self.status, JobStatus::Clean | JobStatus::ManualReview)
    }
}

/// A raw entry: any JSON object with `id` and `text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineInput {
    pub id: String,
    pub text: String,
}

impl From<PipelineInput> for ParaphraseJob {
    fn from(p: PipelineInput) -> Self {
        ParaphraseJob::pending(p.id, p.text)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub by_status: BTreeMap<String, usize>,
    /// Failed verdicts per rule over every recorded round.
    pub rule_failures: BTreeMap<String, usize>,
    pub rounds: usize,
}

impl Summary {
    pub fn from_jobs(jobs: &[ParaphraseJob]) -> Self {
        let mut s = Summary {
            total: jobs.len(),
            ..Default::default()
        };
        for st in [
            JobStatus::Clean,
            JobStatus::Retry,
            JobStatus::ManualReview,
            JobStatus::TransportFailed,
        ] {
            s.by_status.insert(st.key().to_string(), 0);
        }
        for r in ["a", "b", "c"] {
            s.rule_failures.insert(r.to_string(), 0);
        }
        for job in jobs {
            *s.by_status.entry(job.status.key().to_string()).or_default() += 1;
            s.rounds += job.history.len();
            for rec in &job.history {
                for v in &rec.verdicts {
                    if let Some(rule) = v.failed_rule {
                        *s.rule_failures.entry(rule.to_string()).or_default() += 1;
                    }
                }
            }
        }
        s
    }

    pub fn count(&self, status: JobStatus) -> usize {
        self.by_status.get(status.key()).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub jobs: Vec<ParaphraseJob>,
    pub summary: Summary,
}

fn id_stream(id: &str) -> u64 {
    // FNV-1a, so a job's draws do not depend on its position in the batch.
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

fn call_with_retry(
    client: &dyn ParaphraseClient,
    prompt: &str,
    policy: &RetryPolicy,
) -> Result<String, TransportError> {
    let attempts = policy.attempts.max(1);
    let mut delay = policy.base_delay;
    let mut last = None;
    for attempt in 0..attempts {
        match client.paraphrase(prompt) {
            Ok(text) => return Ok(text),
            Err(e) if !e.is_retryable() => return Err(e),
            Err(e) => last = Some(e),
        }
        if attempt + 1 < attempts && !delay.is_zero() {
            std::thread::sleep(delay);
            delay *= 2;
        }
    }
    Err(last.expect("at least one attempt"))
}

fn process_job(
    mut job: ParaphraseJob,
    client: &dyn ParaphraseClient,
    escalation: Option<&dyn ParaphraseClient>,
    cfg: &PipelineConfig,
) -> ParaphraseJob {
    if job.is_settled() {
        return job;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(id_stream(&job.id));
    // Keep the stream position aligned with the round so resumed jobs draw
    // the same verbs they would have in one uninterrupted run.
    for _ in 0..job.round {
        let _ = sample_verb(&cfg.verbs, &mut rng);
        let _ = cfg.template.render("x", "x", &mut rng);
    }
    job.error = None;
    while job.round < cfg.max_rounds {
        let round = job.round + 1;
        let verb = match sample_verb(&cfg.verbs, &mut rng) {
            Ok(v) => v.to_string(),
            Err(e) => {
                job.status = JobStatus::TransportFailed;
                job.error = Some(e.to_string());
                return job;
            }
        };
        let prompt = match cfg.template.render(&job.original_text, &verb, &mut rng) {
            Ok(p) => p,
            Err(e) => {
                job.status = JobStatus::ManualReview;
                job.error = Some(e.to_string());
                return job;
            }
        };
        let active = match escalation {
            Some(esc) if round > 1 => esc,
            _ => client,
        };
        let paraphrase = match call_with_retry(active, &prompt, &cfg.retry) {
            Ok(p) => p.trim().to_string(),
            Err(e) => {
                job.status = JobStatus::TransportFailed;
                job.error = Some(e.to_string());
                return job;
            }
        };
        let verdicts = run_filters(&job.original_text, &paraphrase, &cfg.verbs).to_vec();
        let record = RoundRecord {
            round,
            verb,
            paraphrase: paraphrase.clone(),
            verdicts,
        };
        let clean = record.passed();
        job.history.push(record);
        job.round = round;
        job.current_paraphrase = Some(paraphrase);
        if clean {
            job.status = JobStatus::Clean;
            return job;
        }
        job.status = JobStatus::Retry;
    }
    job.status = JobStatus::ManualReview;
    job
}

/// Runs the render → paraphrase → filter loop over every unsettled job.
///
/// Jobs already `clean` or `manual_review` pass through untouched, so feeding
/// the output back in changes nothing. Rounds after the first go to
/// `escalation` when one is given.
pub fn run_pipeline(
    jobs: Vec<ParaphraseJob>,
    client: &dyn ParaphraseClient,
    escalation: Option<&dyn ParaphraseClient>,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    if cfg.max_rounds == 0 {
        return Err(PipelineError::InvalidArgument("max_rounds must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_in_flight.max(1))
        .build()
        .map_err(|e| PipelineError::InvalidArgument(e.to_string()))?;
    let jobs: Vec<ParaphraseJob> = pool.install(|| {
        jobs.into_par_iter()
            .map(|job| process_job(job, client, escalation, cfg))
            .collect()
    });
    let summary = Summary::from_jobs(&jobs);
    Ok(PipelineOutput { jobs, summary })
}

/// Reads one job per line. Lines without `original_text` are taken as raw
/// `{id, text}` entries and become pending jobs; blank lines are skipped.
pub fn read_jobs_jsonl<R: BufRead>(reader: R) -> Result<Vec<ParaphraseJob>, PipelineError> {
    let mut jobs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|source| PipelineError::Json { line: i + 1, source })?;
        let job = if value.get("original_text").is_some() {
            serde_json::from_value::<ParaphraseJob>(value)
        } else {
            serde_json::from_value::<PipelineInput>(value).map(Into::into)
        }
        .map_err(|source| PipelineError::Json { line: i + 1, source })?;
        jobs.push(job);
    }
    Ok(jobs)
}

pub fn write_jobs_jsonl<W: Write>(mut w: W, jobs: &[ParaphraseJob]) -> Result<(), PipelineError> {
    for job in jobs {
        serde_json::to_writer(&mut w, job).map_err(|source| PipelineError::Json { line: 0, source })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{EchoClient, MockClient, ScriptedClient};
    use crate::filters::FilterRule;

    fn cfg() -> PipelineConfig {
        PipelineConfig {
            retry: RetryPolicy {
                attempts: 2,
                base_delay: Duration::ZERO,
            },
            ..Default::default()
        }
    }

    #[test]
    fn valid_imperative_is_clean_in_one_round() {
        let out = run_pipeline(
            vec![ParaphraseJob::pending("1", "Find the chair near the window")],
            &MockClient,
            None,
            &cfg(),
        )
        .unwrap();
        let job = &out.jobs[0];
        assert_eq!(job.status, JobStatus::Clean);
        assert_eq!(job.round, 1);
        assert_eq!(job.history.len(), 1);
        assert!(job.current_paraphrase.as_deref().unwrap().ends_with("chair near the window"));
    }

    #[test]
    fn echo_exhausts_rounds_then_manual_review() {
        let out = run_pipeline(
            vec![ParaphraseJob::pending("7", "Find the chair near the window")],
            &EchoClient,
            None,
            &cfg(),
        )
        .unwrap();
        let job = &out.jobs[0];
        assert_eq!(job.status, JobStatus::ManualReview);
        assert_eq!(job.round, 3);
        assert_eq!(job.history.len(), 3);
        assert!(job
            .history
            .iter()
            .all(|r| r.verdicts[0].failed_rule == Some(FilterRule::A)));
        assert_eq!(out.summary.count(JobStatus::ManualReview), 1);
        assert_eq!(out.summary.rule_failures["a"], 3);
        assert_eq!(out.summary.rule_failures["b"], 3);
    }

    #[test]
    fn second_run_changes_nothing() {
        let jobs = vec![
            ParaphraseJob::pending("a", "Find the lamp by the bed"),
            ParaphraseJob::pending("b", "Select the box that is not blue"),
            ParaphraseJob::pending("c", "Spot the table"),
        ];
        let first = run_pipeline(jobs, &MockClient, None, &cfg()).unwrap();
        let second = run_pipeline(first.jobs.clone(), &EchoClient, None, &cfg()).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn transport_failure_is_retried_then_marked() {
        let client = ScriptedClient::new().with(
            "Find the lamp",
            vec![Err(TransportError::Status(503)), Ok("Add a lamp".into())],
        );
        let out = run_pipeline(
            vec![ParaphraseJob::pending("x", "Find the lamp")],
            &client,
            None,
            &cfg(),
        )
        .unwrap();
        assert_eq!(out.jobs[0].status, JobStatus::Clean);
        assert_eq!(client.calls("Find the lamp"), 2);

        let dead = ScriptedClient::new().with(
            "Find the lamp",
            vec![Err(TransportError::Connection("refused".into()))],
        );
        let out = run_pipeline(
            vec![ParaphraseJob::pending("x", "Find the lamp")],
            &dead,
            None,
            &cfg(),
        )
        .unwrap();
        assert_eq!(out.jobs[0].status, JobStatus::TransportFailed);
        assert!(out.jobs[0].error.as_deref().unwrap().contains("refused"));
        assert_eq!(dead.calls("Find the lamp"), 2);
    }

    #[test]
    fn escalation_client_used_after_first_round() {
        let out = run_pipeline(
            vec![ParaphraseJob::pending("e", "Find the lamp")],
            &EchoClient,
            Some(&MockClient),
            &cfg(),
        )
        .unwrap();
        let job = &out.jobs[0];
        assert_eq!(job.status, JobStatus::Clean);
        assert_eq!(job.round, 2);
    }

    #[test]
    fn outcome_independent_of_concurrency() {
        let jobs: Vec<_> = (0..20)
            .map(|i| ParaphraseJob::pending(i.to_string(), format!("Find the lamp number {i}")))
            .collect();
        let serial = run_pipeline(
            jobs.clone(),
            &MockClient,
            None,
            &PipelineConfig { max_in_flight: 1, ..cfg() },
        )
        .unwrap();
        let parallel = run_pipeline(
            jobs,
            &MockClient,
            None,
            &PipelineConfig { max_in_flight: 8, ..cfg() },
        )
        .unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn jsonl_roundtrip_and_raw_entries() {
        let text = "{\"id\":\"1\",\"text\":\"Find the lamp\",\"target_class\":\"lamp\"}\n\n";
        let jobs = read_jobs_jsonl(text.as_bytes()).unwrap();
        assert_eq!(jobs, vec![ParaphraseJob::pending("1", "Find the lamp")]);
        let out = run_pipeline(jobs, &MockClient, None, &cfg()).unwrap();
        let mut buf = Vec::new();
        write_jobs_jsonl(&mut buf, &out.jobs).unwrap();
        assert_eq!(read_jobs_jsonl(&buf[..]).unwrap(), out.jobs);

        let err = read_jobs_jsonl("{\"id\":\"1\"}\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
