//! Turning descriptive (locating) sentences into generative instructions.
//!
//! The pipeline renders a prompt from a fixed template with a weighted
//! imperative verb, asks a paraphrase service for a rewrite, and checks the
//! result with three rule-based filters:
//!
//! * (a) no leftover locating verbs ([`filter_blacklist`]),
//! * (b) at least one generative verb ([`filter_generative_verb`]),
//! * (c) negations of the original survive ([`filter_negation`]).
//!
//! Failing rewrites are retried up to a bound and then queued for manual
//! review. See [`run_pipeline`].

mod client;
mod error;
mod filters;
mod pipeline;
mod template;
mod verbs;
mod words;

pub use client::{
    EchoClient, MockClient, ParaphraseClient, ParaphraseRequest, ParaphraseResponse,
    ScriptedClient, TransportError,
};
#[cfg(feature = "http")]
pub use client::HttpClient;
pub use error::PipelineError;
pub use filters::{
    filter_blacklist, filter_generative_verb, filter_negation, run_filters, FilterRule,
    FilterStatus, FilterVerdict, BLACKLIST, NEGATIONS,
};
pub use pipeline::{
    read_jobs_jsonl, run_pipeline, write_jobs_jsonl, JobStatus, ParaphraseJob, PipelineConfig,
    PipelineInput, PipelineOutput, RetryPolicy, RoundRecord, Summary,
};
pub use template::{render_prompt, PromptTemplate, IMPERATIVE_LINE, TEMPLATE_LINES};
pub use verbs::{sample_verb, VerbTable};
pub use words::tokenize_words;
