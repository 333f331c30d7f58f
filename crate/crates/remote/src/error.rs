use thiserror::Error;

pub type Result<T, E = RemoteError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("template `{template}` is missing the `{placeholder}` placeholder")]
    MissingPlaceholder { template: String, placeholder: &'static str },
    #[error("template does not round-trip answer `{0}` through its parser")]
    TemplateRoundTrip(String),
    #[error("unknown built-in template `{0}`")]
    UnknownTemplate(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("environment variable `{0}` holding the api key is not set")]
    MissingApiKey(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transient failures exhausted {attempts} attempts; last: {last}")]
    TransientExhausted { attempts: u32, last: String },
    #[error("malformed completion response: {0}")]
    Protocol(String),
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] jointinf_core::Error),
}
