use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid verb table: {0}")]
    InvalidTable(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
