//! Chat-completion backend for sampling answers from closed-weight models:
//! prompt templates, a paced and cached HTTP client, an [`AnswerSampler`]
//! adapter, and a local stub server for tests.
//!
//! [`AnswerSampler`]: jointinf_core::uicl::AnswerSampler

pub mod client;
pub mod config;
pub mod error;
pub mod logging;
pub mod sampler;
pub mod stub;
pub mod template;

pub use client::{ChatClient, ClientStats};
pub use config::{BackendConfig, RetryPolicy};
pub use error::{RemoteError, Result};
pub use logging::WireLogFilter;
pub use sampler::RemoteSampler;
pub use stub::{StubRequest, StubResponse, StubServer};
pub use template::{render_prompt, PromptTemplate};
