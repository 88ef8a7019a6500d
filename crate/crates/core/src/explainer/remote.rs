use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{render_narrative, validate_grounding, Evidence, Explanation, Grounding, NarrativeStyle};
use crate::backend::{call_with_deadline, post_json, BackendError, Fallback, FallbackCode};

pub const EXPLAINER_TEMPLATE_VERSION: &str = "explainer-v1";

/// Style constraint sent with every remote request.
pub const EXPLAINER_TEMPLATE: &str = "Write a concise risk summary with probabilistic rationale for the transaction \
in the evidence document. Start with \"This transaction shows a <risk_band> anomaly score (<probability, two \
decimals>)\". Mention only the listed top features, and quote no number that is not in the evidence.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerRequest {
    pub style_template: String,
    pub evidence_document: Evidence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplainerResponse {
    pub narrative: String,
}

/// A narrative generator; its output is never trusted without grounding.
pub trait ExplainerBackend: Send + Sync {
    fn explain(&self, request: &ExplainerRequest) -> Result<ExplainerResponse, BackendError>;
}

#[derive(Debug, Clone)]
pub struct HttpExplainerBackend {
    endpoint: String,
    deadline: Duration,
}

impl HttpExplainerBackend {
    pub fn new(endpoint: impl Into<String>, deadline: Duration) -> Self {
        HttpExplainerBackend { endpoint: endpoint.into(), deadline }
    }
}

impl ExplainerBackend for HttpExplainerBackend {
    fn explain(&self, request: &ExplainerRequest) -> Result<ExplainerResponse, BackendError> {
        post_json(&self.endpoint, self.deadline, request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemoteExplanation {
    pub explanation: Explanation,
    pub fallback: Option<Fallback>,
}

/// Accepts the backend's narrative only if it is grounded in `evidence`;
/// any failure yields the concise template instead.
pub fn remote_explain(evidence: &Evidence, backend: Arc<dyn ExplainerBackend>, deadline: Duration) -> RemoteExplanation {
    let request = ExplainerRequest { style_template: EXPLAINER_TEMPLATE.to_string(), evidence_document: evidence.clone() };
    let fallback = match call_with_deadline(deadline, move || backend.explain(&request)) {
        Ok(response) => {
            let narrative = response.narrative.trim().to_string();
            match validate_grounding(&narrative, evidence) {
                Grounding::Pass => match Explanation::checked(narrative, evidence.clone()) {
                    Some(explanation) => return RemoteExplanation { explanation, fallback: None },
                    None => Fallback::new(FallbackCode::Ungrounded, "narrative failed grounding"),
                },
                Grounding::Fail(tokens) => {
                    Fallback::new(FallbackCode::Ungrounded, format!("untraceable: {}", tokens.join(", ")))
                }
            }
        }
        Err(err) => Fallback::from_error(&err),
    };
    RemoteExplanation { explanation: render_narrative(evidence, NarrativeStyle::Concise), fallback: Some(fallback) }
}
