use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{parse_utterance, ParseContext, ParseOutcome};
use crate::backend::{call_with_deadline, post_json, BackendError, Fallback, FallbackCode};
use crate::domain::deserialize_intent;

pub const PARSER_TEMPLATE_VERSION: &str = "parser-v1";

/// Extraction prompt sent to remote parsers, pinned by [`PARSER_TEMPLATE_VERSION`].
pub const PARSER_TEMPLATE: &str = "Extract wallet address, time range, and transaction details from the following description and output a JSON schema.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParserRequest {
    pub template: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParserResponse {
    pub document: String,
}

/// A text-completion service that turns an utterance into an intent document.
pub trait ParserBackend: Send + Sync {
    fn complete(&self, request: &ParserRequest) -> Result<ParserResponse, BackendError>;
}

/// JSON-over-HTTP parser backend.
#[derive(Debug, Clone)]
pub struct HttpParserBackend {
    endpoint: String,
    deadline: Duration,
}

impl HttpParserBackend {
    pub fn new(endpoint: impl Into<String>, deadline: Duration) -> Self {
        HttpParserBackend { endpoint: endpoint.into(), deadline }
    }
}

impl ParserBackend for HttpParserBackend {
    fn complete(&self, request: &ParserRequest) -> Result<ParserResponse, BackendError> {
        post_json(&self.endpoint, self.deadline, request)
    }
}

/// Result of a remote parse along with any fallback that engaged.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteParse {
    pub outcome: ParseOutcome,
    pub fallback: Option<Fallback>,
}

/// Asks `backend` for an intent document, falling back to the deterministic
/// parser when the call fails, times out or returns anything that does not
/// validate against the intent schema.
pub fn remote_parse(
    text: &str,
    context: &ParseContext,
    backend: Arc<dyn ParserBackend>,
    deadline: Duration,
) -> RemoteParse {
    let request = ParserRequest { template: PARSER_TEMPLATE.to_string(), text: text.to_string() };
    let fallback = match call_with_deadline(deadline, move || backend.complete(&request)) {
        Ok(response) => match serde_json::from_str::<serde_json::Value>(&response.document)
            .map_err(|e| e.to_string())
            .and_then(|doc| deserialize_intent(&doc).map_err(|e| e.to_string()))
        {
            Ok(intent) => return RemoteParse { outcome: ParseOutcome::Intent(intent), fallback: None },
            Err(detail) => Fallback::new(FallbackCode::SchemaViolation, detail),
        },
        Err(err) => Fallback::from_error(&err),
    };
    RemoteParse { outcome: parse_utterance(text, context), fallback: Some(fallback) }
}
