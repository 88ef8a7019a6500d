//! Per-session Parse → (Clarify) → Detect → Explain → Refine loop with an
//! audit trace of every stage.

mod engine;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use chrono::{DateTime, FixedOffset, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::Fallback;
use crate::domain::{serialize_intent, AnomalyScore, Filter, IntentKind, ParsedIntent, Transaction};
use crate::explainer::{
    answer_followup, remote_explain, render_narrative, Evidence, ExplainerBackend, FollowupAnswer, NarrativeStyle,
    EXPLAINER_TEMPLATE_VERSION,
};
use crate::features::FeatureError;
use crate::intent::{
    complete_clarification, merge_refinement, parse_utterance, remote_parse, ParseContext, ParseOutcome, ParserBackend,
    PARSER_TEMPLATE_VERSION,
};

pub use engine::{AnalysisEngine, Resolution, ScoredTransaction};

/// Version of the [`AgentMessage`] document layout.
pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// Narratives listed in a multi-row reply.
pub const DEFAULT_LISTED: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown trace {0}")]
    UnknownTrace(String),
    #[error("threshold {0} is outside [0, 1]")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Schema(#[from] FeatureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Parse,
    Clarify,
    Detect,
    Explain,
    Refine,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Parse => "parse",
            Stage::Clarify => "clarify",
            Stage::Detect => "detect",
            Stage::Explain => "explain",
            Stage::Refine => "refine",
        }
    }
}

/// One stage's record in a turn's trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub trace_id: String,
    pub session_id: String,
    pub turn_index: usize,
    pub stage: Stage,
    pub schema_version: u32,
    pub timestamp: DateTime<FixedOffset>,
    pub elapsed_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<Fallback>,
    pub payload: Value,
}

/// Session time source. Fixed clocks make window queries reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    Fixed(DateTime<FixedOffset>),
}

impl Clock {
    pub fn now(&self) -> DateTime<FixedOffset> {
        match self {
            Clock::System => Utc::now().fixed_offset(),
            Clock::Fixed(t) => *t,
        }
    }
}

/// Structured failure carried in a reply; the session stays usable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnResult {
    pub reply: String,
    pub scores: Vec<AnomalyScore>,
    pub trace_id: String,
    pub stages: Vec<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<TurnError>,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Turn {
    pub index: usize,
    pub text: String,
    pub result: TurnResult,
    pub trace: Vec<AgentMessage>,
}

/// Intra-session memory. Nothing here is shared with other sessions.
#[derive(Debug, Clone)]
pub struct SessionContext {
    pub session_id: String,
    pub created_at: DateTime<FixedOffset>,
    pub turns: Vec<Turn>,
    pub bound_wallet: Option<String>,
    pub last_intent: Option<ParsedIntent>,
    pub last_results: Option<Vec<(AnomalyScore, Evidence)>>,
    pub last_transactions: Vec<Transaction>,
    /// Partial intent awaiting the answer to a clarification question.
    pub pending: Option<ParsedIntent>,
    pub clock: Clock,
}

impl SessionContext {
    fn new(clock: Clock, bound_wallet: Option<String>) -> Self {
        SessionContext {
            session_id: uuid::Uuid::new_v4().to_string(),
            created_at: clock.now(),
            turns: Vec::new(),
            bound_wallet,
            last_intent: None,
            last_results: None,
            last_transactions: Vec::new(),
            pending: None,
            clock,
        }
    }

    fn last_evidence(&self) -> Option<Vec<Evidence>> {
        self.last_results.as_ref().map(|r| r.iter().map(|(_, e)| e.clone()).collect())
    }
}

#[derive(Clone)]
pub struct OrchestratorConfig {
    pub clock: Clock,
    pub parser: Option<Arc<dyn ParserBackend>>,
    pub explainer: Option<Arc<dyn ExplainerBackend>>,
    pub backend_deadline: Duration,
    pub max_listed: usize,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            clock: Clock::System,
            parser: None,
            explainer: None,
            backend_deadline: Duration::from_secs(5),
            max_listed: DEFAULT_LISTED,
        }
    }
}

impl std::fmt::Debug for OrchestratorConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OrchestratorConfig")
            .field("clock", &self.clock)
            .field("parser", &self.parser.as_ref().map(|_| "remote"))
            .field("explainer", &self.explainer.as_ref().map(|_| "remote"))
            .field("backend_deadline", &self.backend_deadline)
            .field("max_listed", &self.max_listed)
            .finish()
    }
}

/// Builds the reply text from an explain payload's parts.
pub fn compose_reply(summary: Option<&str>, items: &[(String, String)]) -> String {
    match summary {
        None => items.iter().map(|(_, n)| n.as_str()).collect::<Vec<_>>().join("\n"),
        Some(s) => {
            let mut out = s.to_string();
            for (id, narrative) in items {
                out.push_str(&format!("\n- {}: {narrative}", short_id(id)));
            }
            out
        }
    }
}

fn short_id(id: &str) -> &str {
    id.get(..12).unwrap_or(id)
}

/// Rebuilds a turn's reply from its trace alone.
pub fn reconstruct_reply(trace: &[AgentMessage]) -> Option<String> {
    let last = trace.last()?;
    let p = &last.payload;
    if let Some(message) = p.pointer("/error/message").and_then(Value::as_str) {
        return Some(message.to_string());
    }
    match last.stage {
        Stage::Clarify => p.get("question").and_then(Value::as_str).map(str::to_string),
        Stage::Explain => {
            if let Some(refusal) = p.get("refusal").and_then(Value::as_str) {
                return Some(refusal.to_string());
            }
            let items: Vec<(String, String)> = p
                .get("items")?
                .as_array()?
                .iter()
                .map(|i| {
                    let field = |k: &str| i.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
                    (field("tx_id"), field("narrative"))
                })
                .collect();
            Some(compose_reply(p.get("summary").and_then(Value::as_str), &items))
        }
        _ => None,
    }
}

struct Recorder {
    trace_id: String,
    session_id: String,
    turn_index: usize,
    clock: Clock,
    messages: Vec<AgentMessage>,
}

impl Recorder {
    fn record(&mut self, stage: Stage, started: Instant, payload: Value, fallback: Option<Fallback>) {
        self.messages.push(AgentMessage {
            trace_id: self.trace_id.clone(),
            session_id: self.session_id.clone(),
            turn_index: self.turn_index,
            stage,
            schema_version: TRACE_SCHEMA_VERSION,
            timestamp: self.clock.now(),
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
            fallback,
            payload,
        });
    }

    /// Attaches an error to the last recorded stage.
    fn fail(&mut self, code: &str, message: String) -> TurnError {
        let error = TurnError { code: code.to_string(), message };
        if let Some(last) = self.messages.last_mut() {
            last.payload["error"] = json!(error);
        }
        error
    }
}

fn intent_doc(intent: &ParsedIntent) -> Value {
    let mut doc = json!(intent);
    if intent.kind == IntentKind::TransactionCheck {
        if let Ok(wire) = serialize_intent(intent) {
            doc["wire"] = wire;
        }
    }
    doc
}

fn is_full_address(address: &str) -> bool {
    !address.ends_with("...")
}

struct Outcome {
    reply: String,
    scores: Vec<AnomalyScore>,
    error: Option<TurnError>,
}

/// Owns every live session. Turns of one session run strictly in order;
/// distinct sessions proceed in parallel.
pub struct SessionManager {
    engine: Arc<AnalysisEngine>,
    config: OrchestratorConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionContext>>>>,
}

impl SessionManager {
    pub fn new(engine: Arc<AnalysisEngine>, config: OrchestratorConfig) -> Self {
        SessionManager { engine, config, sessions: RwLock::new(HashMap::new()) }
    }

    pub fn engine(&self) -> &AnalysisEngine {
        &self.engine
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn new_session(&self) -> String {
        self.new_session_with_wallet(None)
    }

    /// Starts a session, optionally bound to the analyst's wallet.
    pub fn new_session_with_wallet(&self, wallet: Option<String>) -> String {
        let ctx = SessionContext::new(self.config.clock, wallet);
        let id = ctx.session_id.clone();
        self.sessions.write().unwrap_or_else(|e| e.into_inner()).insert(id.clone(), Arc::new(Mutex::new(ctx)));
        id
    }

    fn session(&self, session_id: &str) -> Result<Arc<Mutex<SessionContext>>, OrchestratorError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(session_id)
            .cloned()
            .ok_or_else(|| OrchestratorError::UnknownSession(session_id.to_string()))
    }

    /// A copy of the session's state after its last completed turn.
    pub fn snapshot(&self, session_id: &str) -> Result<SessionContext, OrchestratorError> {
        Ok(self.session(session_id)?.lock().unwrap_or_else(|e| e.into_inner()).clone())
    }

    pub fn handle_turn(&self, session_id: &str, text: &str) -> Result<TurnResult, OrchestratorError> {
        let session = self.session(session_id)?;
        let mut ctx = session.lock().unwrap_or_else(|e| e.into_inner());
        Ok(self.run_turn(&mut ctx, text))
    }

    pub fn get_trace(&self, session_id: &str, trace_id: &str) -> Result<Vec<AgentMessage>, OrchestratorError> {
        let session = self.session(session_id)?;
        let ctx = session.lock().unwrap_or_else(|e| e.into_inner());
        ctx.turns
            .iter()
            .find(|t| t.result.trace_id == trace_id)
            .map(|t| t.trace.clone())
            .ok_or_else(|| OrchestratorError::UnknownTrace(trace_id.to_string()))
    }

    fn run_turn(&self, ctx: &mut SessionContext, text: &str) -> TurnResult {
        let started = Instant::now();
        let turn_index = ctx.turns.len();
        let mut rec = Recorder {
            trace_id: uuid::Uuid::new_v4().to_string(),
            session_id: ctx.session_id.clone(),
            turn_index,
            clock: ctx.clock,
            messages: Vec::new(),
        };
        let outcome = self.pipeline(ctx, text, &mut rec);
        let result = TurnResult {
            reply: outcome.reply,
            scores: outcome.scores,
            trace_id: rec.trace_id.clone(),
            stages: rec.messages.iter().map(|m| m.stage).collect(),
            error: outcome.error,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        ctx.turns.push(Turn { index: turn_index, text: text.to_string(), result: result.clone(), trace: rec.messages });
        result
    }

    fn parse(&self, text: &str, context: &ParseContext) -> (ParseOutcome, Option<Fallback>) {
        match &self.config.parser {
            Some(backend) => {
                let r = remote_parse(text, context, backend.clone(), self.config.backend_deadline);
                (r.outcome, r.fallback)
            }
            None => (parse_utterance(text, context), None),
        }
    }

    fn pipeline(&self, ctx: &mut SessionContext, text: &str, rec: &mut Recorder) -> Outcome {
        let now = ctx.clock.now();
        let parse_ctx = ParseContext { bound_wallet: ctx.bound_wallet.clone(), now };
        let t = Instant::now();

        let (outcome, fallback) = match ctx.pending.clone() {
            Some(pending) => match complete_clarification(&pending, text, &parse_ctx) {
                ParseOutcome::Intent(i) => (ParseOutcome::Intent(i), None),
                ParseOutcome::Clarification(c) => match self.parse(text, &parse_ctx) {
                    (ParseOutcome::Intent(i), fb)
                        if matches!(i.kind, IntentKind::TransactionCheck | IntentKind::WindowAnalysis) =>
                    {
                        (ParseOutcome::Intent(i), fb)
                    }
                    _ => (ParseOutcome::Clarification(c), None),
                },
            },
            None => self.parse(text, &parse_ctx),
        };

        let intent = match outcome {
            ParseOutcome::Clarification(c) => {
                rec.record(Stage::Parse, t, json!({"outcome": "clarification", "missing": c.missing}), fallback);
                let t = Instant::now();
                if c.partial.kind != IntentKind::Refinement {
                    ctx.pending = Some(c.partial.clone());
                }
                rec.record(Stage::Clarify, t, json!({"question": c.question, "partial": c.partial}), None);
                return Outcome { reply: c.question, scores: Vec::new(), error: None };
            }
            ParseOutcome::Intent(i) => i,
        };

        match intent.kind {
            IntentKind::FollowUp => {
                rec.record(Stage::Parse, t, json!({"outcome": "intent", "intent": intent_doc(&intent)}), fallback);
                self.follow_up(ctx, text, rec)
            }
            IntentKind::Refinement => self.refine(ctx, text, now, t, fallback, rec),
            IntentKind::TransactionCheck | IntentKind::WindowAnalysis => {
                rec.record(Stage::Parse, t, json!({"outcome": "intent", "intent": intent_doc(&intent)}), fallback);
                ctx.pending = None;
                if let Some(addr) = intent.receiving_address.as_deref().filter(|a| is_full_address(a)) {
                    ctx.bound_wallet = Some(addr.to_string());
                }
                let t = Instant::now();
                let (rows, resolution) = if intent.kind == IntentKind::TransactionCheck {
                    let (tx, how) = self.engine.resolve_point(&intent);
                    (vec![tx], Some(how))
                } else {
                    if self.engine.store().is_empty() {
                        rec.record(Stage::Detect, t, json!({"rows": []}), None);
                        let error = rec.fail("StoreUnavailable", "The transaction store holds no data to analyze.".into());
                        return Outcome { reply: error.message.clone(), scores: Vec::new(), error: Some(error) };
                    }
                    (self.engine.resolve_window(&intent, now), None)
                };
                let summary = match intent.kind {
                    IntentKind::TransactionCheck => None,
                    _ => Some(window_summary(&intent, rows.len())),
                };
                self.detect_and_explain(ctx, intent, rows, resolution, t, summary, rec)
            }
        }
    }

    fn follow_up(&self, ctx: &mut SessionContext, text: &str, rec: &mut Recorder) -> Outcome {
        let t = Instant::now();
        let prior = ctx.last_evidence();
        match answer_followup(text, prior.as_deref()) {
            Err(e) => {
                let error = rec.fail("NoPriorResult", e.to_string());
                Outcome { reply: error.message.clone(), scores: Vec::new(), error: Some(error) }
            }
            Ok(FollowupAnswer::Refusal { message, available }) => {
                rec.record(Stage::Explain, t, json!({"refusal": message, "available": available}), None);
                Outcome { reply: message, scores: Vec::new(), error: None }
            }
            Ok(FollowupAnswer::Explained { explanations }) => {
                let items: Vec<(String, String)> =
                    explanations.iter().map(|e| (e.evidence().tx_id.clone(), e.narrative().to_string())).collect();
                let scores: Vec<AnomalyScore> = ctx
                    .last_results
                    .iter()
                    .flatten()
                    .filter(|(s, _)| items.iter().any(|(id, _)| *id == s.tx_id))
                    .map(|(s, _)| s.clone())
                    .collect();
                rec.record(
                    Stage::Explain,
                    t,
                    json!({
                        "style": "expanded",
                        "summary": null,
                        "items": items.iter().map(|(id, n)| json!({"tx_id": id, "narrative": n})).collect::<Vec<_>>(),
                        "evidence": explanations.iter().map(|e| e.evidence()).collect::<Vec<_>>(),
                    }),
                    None,
                );
                Outcome { reply: compose_reply(None, &items), scores, error: None }
            }
        }
    }

    fn refine(
        &self,
        ctx: &mut SessionContext,
        text: &str,
        now: DateTime<FixedOffset>,
        t: Instant,
        fallback: Option<Fallback>,
        rec: &mut Recorder,
    ) -> Outcome {
        let merged = match merge_refinement(ctx.last_intent.as_ref(), text) {
            Ok(m) => m,
            Err(e) => {
                rec.record(Stage::Refine, t, json!({"previous": null}), fallback);
                let error = rec.fail("NoPriorQuery", e.to_string());
                return Outcome { reply: error.message.clone(), scores: Vec::new(), error: Some(error) };
            }
        };
        let previous = ctx.last_intent.clone().unwrap_or_else(|| merged.clone());
        let added: Vec<Filter> = merged.filters.iter().filter(|f| !previous.filters.contains(f)).cloned().collect();
        let prior_ids: Vec<String> = ctx.last_transactions.iter().map(|t| t.tx_id.clone()).collect();
        let mut rows = self.engine.store().apply_filters(ctx.last_transactions.clone(), &added);
        if merged.day_range != previous.day_range {
            if let Some(days) = merged.day_range {
                let start = now.to_utc() - chrono::Duration::days(i64::from(days));
                rows.retain(|tx| tx.utc() > start);
            }
        }
        rec.record(
            Stage::Refine,
            t,
            json!({
                "previous": intent_doc(&previous),
                "intent": intent_doc(&merged),
                "added_filters": added,
                "prior_tx_ids": prior_ids,
                "kept": rows.len(),
            }),
            fallback,
        );
        let summary = Some(format!("After refinement, {} of {} transactions remain;", rows.len(), prior_ids.len()));
        self.detect_and_explain(ctx, merged, rows, None, Instant::now(), summary, rec)
    }

    #[allow(clippy::too_many_arguments)]
    fn detect_and_explain(
        &self,
        ctx: &mut SessionContext,
        intent: ParsedIntent,
        rows: Vec<Transaction>,
        resolution: Option<Resolution>,
        t: Instant,
        summary: Option<String>,
        rec: &mut Recorder,
    ) -> Outcome {
        let scored = self.engine.score(&rows);
        let detect_rows: Vec<Value> = scored
            .iter()
            .map(|s| {
                json!({
                    "tx_id": s.score.tx_id,
                    "timestamp": s.transaction.timestamp,
                    "counterparty_address": s.transaction.counterparty_address,
                    "usd_value": s.transaction.usd_value,
                    "features": self.engine.named_features(&s.features),
                    "score": s.score,
                    "attribution": s.attribution,
                    "evidence": s.evidence,
                })
            })
            .collect();
        rec.record(
            Stage::Detect,
            t,
            json!({"resolution": resolution, "threshold": self.engine.threshold(), "rows": detect_rows}),
            None,
        );

        let t = Instant::now();
        let mut ranked: Vec<&ScoredTransaction> = scored.iter().collect();
        ranked.sort_by(|a, b| {
            b.score.probability.total_cmp(&a.score.probability).then_with(|| a.score.tx_id.cmp(&b.score.tx_id))
        });
        let listed = if summary.is_none() { ranked.len() } else { ranked.len().min(self.config.max_listed) };
        let mut fallbacks = Vec::new();
        let items: Vec<(String, String)> = ranked[..listed]
            .iter()
            .map(|s| {
                let narrative = match &self.config.explainer {
                    Some(backend) => {
                        let r = remote_explain(&s.evidence, backend.clone(), self.config.backend_deadline);
                        if let Some(fb) = r.fallback {
                            fallbacks.push(fb);
                        }
                        r.explanation.narrative().to_string()
                    }
                    None => render_narrative(&s.evidence, NarrativeStyle::Concise).narrative().to_string(),
                };
                (s.score.tx_id.clone(), narrative)
            })
            .collect();
        let flagged = scored.iter().filter(|s| s.score.is_anomalous()).count();
        let summary = summary.map(|s| {
            let s = format!("{s} {flagged} flagged as anomalous at threshold {:.2}.", self.engine.threshold());
            if listed < scored.len() {
                format!("{s} Top {listed} by score:")
            } else {
                s
            }
        });
        let fallback = fallbacks.first().cloned();
        rec.record(
            Stage::Explain,
            t,
            json!({
                "style": "concise",
                "template_versions": {"parser": PARSER_TEMPLATE_VERSION, "explainer": EXPLAINER_TEMPLATE_VERSION},
                "summary": summary,
                "items": items.iter().map(|(id, n)| json!({"tx_id": id, "narrative": n})).collect::<Vec<_>>(),
                "fallbacks": fallbacks,
            }),
            fallback,
        );

        let reply = compose_reply(summary.as_deref(), &items);
        ctx.last_intent = Some(intent);
        ctx.last_results = Some(scored.iter().map(|s| (s.score.clone(), s.evidence.clone())).collect());
        ctx.last_transactions = rows;
        Outcome { reply, scores: scored.into_iter().map(|s| s.score).collect(), error: None }
    }
}

fn window_summary(intent: &ParsedIntent, n: usize) -> String {
    let wallet = intent.receiving_address.as_deref().unwrap_or("the wallet");
    let span = match intent.day_range {
        Some(1) => "the past day".to_string(),
        Some(d) => format!("the past {d} days"),
        None => "the available history".to_string(),
    };
    let noun = if n == 1 { "transaction" } else { "transactions" };
    format!("Found {n} {noun} for {wallet} in {span};")
}
