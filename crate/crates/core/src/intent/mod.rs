//! Deterministic intent parsing for the analyst utterance family, plus the
//! optional remote parser contract.
//!
//! The parser recognizes four shapes: point checks of a single transfer,
//! trailing-window analyses of a wallet, follow-up questions about the last
//! result and refinement clauses narrowing it. A required field that cannot
//! be read from the text or the session yields a [`ClarificationRequest`].

mod address;
mod remote;
mod time;

use std::sync::LazyLock;

use chrono::{DateTime, FixedOffset};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::domain::{amount, ClusterClass, Direction, Filter, IntentKind, ParsedIntent};

pub use address::{address_matches, find_addresses, normalize_address, AddressMention, Role};
pub use remote::{
    remote_parse, HttpParserBackend, ParserBackend, ParserRequest, ParserResponse, RemoteParse,
    PARSER_TEMPLATE, PARSER_TEMPLATE_VERSION,
};
pub use time::{find_time_reference, resolve_time_phrase, TimeRef};

/// Quantile used for "high-value" phrasing.
pub const HIGH_VALUE_QUANTILE: f64 = 0.95;

/// Session facts the parser may draw on.
#[derive(Debug, Clone)]
pub struct ParseContext {
    pub bound_wallet: Option<String>,
    pub now: DateTime<FixedOffset>,
}

impl ParseContext {
    pub fn new(now: DateTime<FixedOffset>) -> Self {
        ParseContext { bound_wallet: None, now }
    }

    pub fn with_wallet(mut self, wallet: impl Into<String>) -> Self {
        self.bound_wallet = Some(wallet.into());
        self
    }
}

/// Batched request for every field the parser could not resolve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarificationRequest {
    pub missing: Vec<String>,
    pub question: String,
    /// What was understood so far; completed by the answer.
    pub partial: ParsedIntent,
}

impl ClarificationRequest {
    pub fn new(partial: ParsedIntent, missing: Vec<&str>) -> Self {
        let question = clarification_question(&missing);
        ClarificationRequest {
            missing: missing.into_iter().map(str::to_string).collect(),
            question,
            partial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseOutcome {
    Intent(ParsedIntent),
    Clarification(ClarificationRequest),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RefineError {
    #[error("there is no earlier query to refine")]
    NoPriorQuery,
}

fn describe_field(field: &str) -> &'static str {
    match field {
        "date" => "the date and time of the transaction (date)",
        "receiving_address" => "your wallet address (receiving_address)",
        "counterparty_address" => "the counterparty address (counterparty_address)",
        "value" => "the amount in BTC (value)",
        "usd_value" => "the USD value (usd_value)",
        "day_range" => "the time range to analyze, such as \"past week\" (day_range)",
        "filter" => "how to narrow the previous result, such as \"only exchange-linked clusters\" (filter)",
        _ => "a wallet or transaction to analyze (query)",
    }
}

fn clarification_question(missing: &[&str]) -> String {
    let parts: Vec<&str> = missing.iter().map(|f| describe_field(f)).collect();
    let joined = match parts.as_slice() {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    };
    format!("Could you provide {joined}?")
}

static FOLLOW_UP: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(why|how\s+come|what\s+made|what\s+makes|explain|(?:can|could)\s+you\s+explain|tell\s+me\s+more|elaborate)\b")
        .unwrap()
});
static WHY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bwhy\b").unwrap());
static REFINEMENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^\s*(?:and\s+|now\s+|then\s+)?(only|just|exclude|excluding|filter|restrict|narrow|limit|keep\s+only|show\s+only|focus\s+on)\b",
    )
    .unwrap()
});
static BTC_AMOUNT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(?P<n>\d+(?:\.\d+)?)\s*(?:btc\b|bitcoins?\b|₿)").unwrap());
static USD_AMOUNT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)(?:\$\s*(?P<a>\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?)|(?P<b>\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?)\s*(?:usd\b|dollars\b))",
    )
    .unwrap()
});
static MIN_USD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:above|over|more\s+than|greater\s+than|at\s+least|exceeding)\s+\$?\s*(?P<n>\d[\d,]*(?:\.\d+)?)")
        .unwrap()
});
static MAX_USD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:below|under|less\s+than|at\s+most)\s+\$?\s*(?P<n>\d[\d,]*(?:\.\d+)?)").unwrap()
});
static HIGH_VALUE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(high[-\s]value|large|big|largest)\b").unwrap());
static EXCHANGE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bexchanges?\b|\bexchange[-\s]linked\b").unwrap());
static MIXER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bmix(?:er|ers|ing)\b").unwrap());
static UNKNOWN_CLUSTER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bunknown\s+(?:clusters?|entities)\b").unwrap());
static UNVERIFIED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(unverified|unknown\s+counterpart(?:y|ies))\b").unwrap());
static OUTGOING: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(outgoing|sent|outflows?)\b").unwrap());
static INCOMING: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(incoming|received|inflows?)\b").unwrap());
static WINDOW_WORDS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(transactions?|wallet|suspicious|analy[sz]e|activity|anything|transfers|history)\b").unwrap()
});
static WALLET_REFERENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(my|mine|our)\b").unwrap());

/// Collapses runs of whitespace (including line breaks) to single spaces.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn parse_number(s: &str) -> Option<f64> {
    amount::parse_decimal(s).filter(|v| *v >= 0.0)
}

fn btc_amount(text: &str) -> Option<f64> {
    BTC_AMOUNT.captures(text).and_then(|c| parse_number(&c["n"]))
}

fn usd_amount(text: &str) -> Option<f64> {
    USD_AMOUNT
        .captures(text)
        .and_then(|c| c.name("a").or_else(|| c.name("b")))
        .and_then(|m| parse_number(m.as_str()))
}

/// Refinement vocabulary: cluster, counterparty, direction, value filters.
fn refinement_filters(text: &str) -> Vec<Filter> {
    let mut filters = Vec::new();
    if EXCHANGE.is_match(text) {
        filters.push(Filter::ClusterClass(ClusterClass::Exchange));
    }
    if MIXER.is_match(text) {
        filters.push(Filter::ClusterClass(ClusterClass::Mixer));
    }
    if UNKNOWN_CLUSTER.is_match(text) {
        filters.push(Filter::ClusterClass(ClusterClass::Unknown));
    } else if UNVERIFIED.is_match(text) {
        filters.push(Filter::UnverifiedCounterparty);
    }
    if HIGH_VALUE.is_match(text) {
        filters.push(Filter::UsdPercentileAbove(HIGH_VALUE_QUANTILE));
    }
    if let Some(v) = MIN_USD.captures(text).and_then(|c| parse_number(&c["n"])) {
        filters.push(Filter::MinUsdValue(v));
    }
    if let Some(v) = MAX_USD.captures(text).and_then(|c| parse_number(&c["n"])) {
        filters.push(Filter::MaxUsdValue(v));
    }
    match (OUTGOING.is_match(text), INCOMING.is_match(text)) {
        (true, false) => filters.push(Filter::Direction(Direction::Outgoing)),
        (false, true) => filters.push(Filter::Direction(Direction::Incoming)),
        _ => {}
    }
    filters
}

fn window_filters(text: &str) -> Vec<Filter> {
    let mut filters = Vec::new();
    if HIGH_VALUE.is_match(text) {
        filters.push(Filter::UsdPercentileAbove(HIGH_VALUE_QUANTILE));
    }
    if let Some(v) = MIN_USD.captures(text).and_then(|c| parse_number(&c["n"])) {
        filters.push(Filter::MinUsdValue(v));
    }
    if EXCHANGE.is_match(text) {
        filters.push(Filter::ClusterClass(ClusterClass::Exchange));
    }
    filters
}

fn outcome_for(intent: ParsedIntent) -> ParseOutcome {
    let missing = intent.missing_fields();
    if missing.is_empty() {
        ParseOutcome::Intent(intent)
    } else {
        ParseOutcome::Clarification(ClarificationRequest::new(intent, missing))
    }
}

/// Converts an utterance into an intent or a clarification request.
///
/// Pure in `(text, context)`: the session clock only supplies the default
/// offset for dates written without one.
pub fn parse_utterance(text: &str, context: &ParseContext) -> ParseOutcome {
    let text = normalize_text(text);
    if text.is_empty() {
        return ParseOutcome::Clarification(ClarificationRequest::new(
            ParsedIntent::empty(IntentKind::WindowAnalysis),
            vec!["query"],
        ));
    }

    let time = find_time_reference(&text, context.now);
    let addresses = find_addresses(&text);
    let btc = btc_amount(&text);
    let usd = usd_amount(&text);

    let has_specifics = addresses.iter().any(|a| a.role.is_some()) || btc.is_some();
    if FOLLOW_UP.is_match(&text) || (WHY.is_match(&text) && !has_specifics && time.is_none()) {
        return ParseOutcome::Intent(ParsedIntent::empty(IntentKind::FollowUp));
    }

    if REFINEMENT.is_match(&text) {
        let mut intent = ParsedIntent::empty(IntentKind::Refinement);
        intent.filters = refinement_filters(&text);
        if let Some((TimeRef::Range { days }, _)) = time {
            intent.day_range = Some(days);
        }
        if intent.filters.is_empty() && intent.day_range.is_none() {
            return ParseOutcome::Clarification(ClarificationRequest::new(intent, vec!["filter"]));
        }
        return ParseOutcome::Intent(intent);
    }

    let receiving = addresses
        .iter()
        .find(|a| a.role == Some(Role::Receiving))
        .map(|a| a.address.clone());
    let counterparty = addresses
        .iter()
        .find(|a| a.role == Some(Role::Counterparty))
        .map(|a| a.address.clone());
    let wallet_from_context = || {
        if addresses.is_empty() || WALLET_REFERENCE.is_match(&text) {
            context.bound_wallet.clone()
        } else {
            None
        }
    };

    let point = match time {
        Some((TimeRef::Point(p), _)) => Some(p),
        _ => None,
    };
    let range = match time {
        Some((TimeRef::Range { days }, _)) => Some(days),
        _ => None,
    };

    if point.is_some() || (range.is_none() && (btc.is_some() || usd.is_some())) {
        let intent = ParsedIntent {
            kind: IntentKind::TransactionCheck,
            date: point,
            day_range: None,
            receiving_address: receiving.or_else(wallet_from_context),
            counterparty_address: counterparty,
            value: btc,
            usd_value: usd,
            filters: Vec::new(),
        };
        return outcome_for(intent);
    }

    if range.is_some() || !addresses.is_empty() || WINDOW_WORDS.is_match(&text) {
        let intent = ParsedIntent {
            kind: IntentKind::WindowAnalysis,
            date: None,
            day_range: range,
            receiving_address: receiving.or_else(wallet_from_context),
            counterparty_address: None,
            value: None,
            usd_value: None,
            filters: window_filters(&text),
        };
        return outcome_for(intent);
    }

    ParseOutcome::Clarification(ClarificationRequest::new(
        ParsedIntent::empty(IntentKind::WindowAnalysis),
        vec!["query"],
    ))
}

/// Completes a pending clarification with the fields read from `text`.
///
/// Fields already understood are kept; the answer only fills gaps.
pub fn complete_clarification(pending: &ParsedIntent, text: &str, context: &ParseContext) -> ParseOutcome {
    let text = normalize_text(text);
    let mut intent = pending.clone();
    let time = find_time_reference(&text, context.now);
    let addresses = find_addresses(&text);

    if intent.receiving_address.is_none() {
        intent.receiving_address = addresses
            .iter()
            .find(|a| a.role == Some(Role::Receiving))
            .map(|a| a.address.clone())
            .or_else(|| context.bound_wallet.clone());
    }
    if intent.counterparty_address.is_none() {
        intent.counterparty_address = addresses
            .iter()
            .find(|a| a.role == Some(Role::Counterparty))
            .map(|a| a.address.clone());
    }
    match time {
        Some((TimeRef::Point(p), _)) if intent.date.is_none() => intent.date = Some(p),
        Some((TimeRef::Range { days }, _)) if intent.day_range.is_none() => intent.day_range = Some(days),
        _ => {}
    }
    if intent.value.is_none() {
        intent.value = btc_amount(&text);
    }
    if intent.usd_value.is_none() {
        intent.usd_value = usd_amount(&text);
    }
    outcome_for(intent)
}

/// Narrows `previous` with the filters named in `text`.
///
/// Filters only accumulate and a day range can only shrink, so the result
/// never selects more than `previous` did.
pub fn merge_refinement(previous: Option<&ParsedIntent>, text: &str) -> Result<ParsedIntent, RefineError> {
    let previous = previous.ok_or(RefineError::NoPriorQuery)?;
    let text = normalize_text(text);
    let mut merged = previous.clone();
    if text.is_empty() {
        return Ok(merged);
    }
    for filter in refinement_filters(&text) {
        if !merged.filters.contains(&filter) {
            merged.filters.push(filter);
        }
    }
    if let Some(TimeRef::Range { days }) = resolve_time_phrase(&text, chrono::Utc::now().fixed_offset()) {
        if let Some(current) = merged.day_range {
            merged.day_range = Some(current.min(days));
        }
    }
    Ok(merged)
}
