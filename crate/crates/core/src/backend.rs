//! Contract shared by the optional remote parser and explainer backends.
//!
//! Remote calls run on a helper thread and are abandoned at the deadline; the
//! caller always gets an answer and falls back to the deterministic path.

use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend missed its {0} ms deadline")]
    Timeout(u64),
    #[error("malformed backend response: {0}")]
    Malformed(String),
}

/// Why a remote answer was replaced by the deterministic one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FallbackCode {
    BackendUnavailable,
    SchemaViolation,
    Ungrounded,
}

/// Audit annotation recorded in the trace whenever a fallback engages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fallback {
    pub code: FallbackCode,
    pub detail: String,
}

impl Fallback {
    pub fn new(code: FallbackCode, detail: impl Into<String>) -> Self {
        Fallback { code, detail: detail.into() }
    }

    pub fn from_error(err: &BackendError) -> Self {
        let code = match err {
            BackendError::Unavailable(_) | BackendError::Timeout(_) => FallbackCode::BackendUnavailable,
            BackendError::Malformed(_) => FallbackCode::SchemaViolation,
        };
        Fallback::new(code, err.to_string())
    }
}

/// Runs `call` on a helper thread and waits at most `deadline` for it.
pub fn call_with_deadline<T, F>(deadline: Duration, call: F) -> Result<T, BackendError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, BackendError> + Send + 'static,
{
    let (tx, rx) = mpsc::channel();
    thread::Builder::new()
        .name("backend-call".into())
        .spawn(move || {
            // Receiver may be gone after a timeout.
            let _ = tx.send(call());
        })
        .map_err(|e| BackendError::Unavailable(format!("cannot spawn backend call: {e}")))?;
    match rx.recv_timeout(deadline) {
        Ok(result) => result,
        Err(mpsc::RecvTimeoutError::Timeout) => Err(BackendError::Timeout(deadline.as_millis() as u64)),
        Err(mpsc::RecvTimeoutError::Disconnected) => {
            Err(BackendError::Unavailable("backend call panicked".into()))
        }
    }
}

/// POSTs `request` as JSON to `endpoint` and decodes the JSON reply.
pub(crate) fn post_json<Req, Resp>(endpoint: &str, deadline: Duration, request: &Req) -> Result<Resp, BackendError>
where
    Req: Serialize,
    Resp: for<'de> Deserialize<'de>,
{
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(deadline))
        .build()
        .into();
    let mut response = agent
        .post(endpoint)
        .send_json(request)
        .map_err(|e| match e {
            ureq::Error::Timeout(_) => BackendError::Timeout(deadline.as_millis() as u64),
            other => BackendError::Unavailable(other.to_string()),
        })?;
    response
        .body_mut()
        .read_json::<Resp>()
        .map_err(|e| BackendError::Malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deadline_is_enforced() {
        let started = std::time::Instant::now();
        let res: Result<(), _> = call_with_deadline(Duration::from_millis(50), || {
            thread::sleep(Duration::from_millis(500));
            Ok(())
        });
        assert_eq!(res, Err(BackendError::Timeout(50)));
        assert!(started.elapsed() < Duration::from_millis(400));
    }

    #[test]
    fn fast_call_passes_through() {
        assert_eq!(call_with_deadline(Duration::from_secs(1), || Ok(7)), Ok(7));
    }

    #[test]
    fn panicking_call_is_unavailable() {
        let res: Result<(), _> = call_with_deadline(Duration::from_secs(1), || panic!("boom"));
        assert!(matches!(res, Err(BackendError::Unavailable(_))));
    }
}
