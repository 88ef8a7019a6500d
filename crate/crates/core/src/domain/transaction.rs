use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, FixedOffset, Utc};
use serde::{Deserialize, Serialize};

use super::{amount, AMOUNT_TOLERANCE};

/// Flow of funds relative to the wallet that owns the record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Incoming,
    Outgoing,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Incoming => "incoming",
            Direction::Outgoing => "outgoing",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "incoming" | "in" => Some(Direction::Incoming),
            "outgoing" | "out" => Some(Direction::Outgoing),
            _ => None,
        }
    }
}

/// Ground-truth class of a ledger record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Anomalous,
    Unlabeled,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
            Label::Unlabeled => "unlabeled",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "0" => Some(Label::Normal),
            "anomalous" | "anomaly" | "1" => Some(Label::Anomalous),
            "unlabeled" | "" => Some(Label::Unlabeled),
            _ => None,
        }
    }

    /// Binary target for training; `None` when unlabeled.
    pub fn as_target(self) -> Option<u8> {
        match self {
            Label::Normal => Some(0),
            Label::Anomalous => Some(1),
            Label::Unlabeled => None,
        }
    }
}

/// One flat ledger record.
///
/// Amounts travel as exact decimal strings on the wire; timestamps keep their
/// original UTC offset so local-time features stay meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: String,
    pub timestamp: DateTime<FixedOffset>,
    pub receiving_address: String,
    pub counterparty_address: String,
    #[serde(with = "amount")]
    pub value_btc: f64,
    #[serde(with = "amount")]
    pub usd_value: f64,
    pub direction: Direction,
    pub label: Label,
}

impl Transaction {
    /// Canonical instant used for ordering and windowing.
    pub fn utc(&self) -> DateTime<Utc> {
        self.timestamp.with_timezone(&Utc)
    }

    /// Payer and payee of the transfer, oriented by `direction`.
    pub fn payer_payee(&self) -> (&str, &str) {
        match self.direction {
            Direction::Incoming => (&self.counterparty_address, &self.receiving_address),
            Direction::Outgoing => (&self.receiving_address, &self.counterparty_address),
        }
    }

    /// Equality with monetary fields compared at the amount tolerance.
    pub fn approx_eq(&self, other: &Transaction) -> bool {
        self.tx_id == other.tx_id
            && self.timestamp == other.timestamp
            && self.timestamp.offset() == other.timestamp.offset()
            && self.receiving_address == other.receiving_address
            && self.counterparty_address == other.counterparty_address
            && (self.value_btc - other.value_btc).abs() <= AMOUNT_TOLERANCE
            && (self.usd_value - other.usd_value).abs() <= AMOUNT_TOLERANCE
            && self.direction == other.direction
            && self.label == other.label
    }
}

/// A single reason a raw record was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "field")]
pub enum FieldIssue {
    MissingField(String),
    MalformedTimestamp(String),
    MalformedNumber(String),
    NegativeValue(String),
    InvalidValue(String),
}

impl FieldIssue {
    pub fn reason(&self) -> &'static str {
        match self {
            FieldIssue::MissingField(_) => "MissingField",
            FieldIssue::MalformedTimestamp(_) => "MalformedTimestamp",
            FieldIssue::MalformedNumber(_) => "MalformedNumber",
            FieldIssue::NegativeValue(_) => "NegativeValue",
            FieldIssue::InvalidValue(_) => "InvalidValue",
        }
    }

    pub fn field(&self) -> &str {
        match self {
            FieldIssue::MissingField(f)
            | FieldIssue::MalformedTimestamp(f)
            | FieldIssue::MalformedNumber(f)
            | FieldIssue::NegativeValue(f)
            | FieldIssue::InvalidValue(f) => f,
        }
    }
}

impl fmt::Display for FieldIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({:?})", self.reason(), self.field())
    }
}

/// Every problem found in one raw record.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid transaction record: {}", .issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", "))]
pub struct ValidationError {
    pub issues: Vec<FieldIssue>,
}

impl ValidationError {
    pub fn primary_reason(&self) -> &'static str {
        self.issues.first().map(FieldIssue::reason).unwrap_or("Invalid")
    }
}

/// Fields whose absence drops a record.
pub const KEY_FIELDS: [&str; 5] = [
    "tx_id",
    "timestamp",
    "receiving_address",
    "counterparty_address",
    "usd_value",
];

fn present<'a>(raw: &'a BTreeMap<String, String>, key: &str) -> Option<&'a str> {
    raw.get(key).map(|s| s.trim()).filter(|s| !s.is_empty())
}

fn parse_amount(
    raw: &BTreeMap<String, String>,
    key: &str,
    required: bool,
    issues: &mut Vec<FieldIssue>,
) -> f64 {
    match present(raw, key) {
        None => {
            if required {
                issues.push(FieldIssue::MissingField(key.to_string()));
            }
            0.0
        }
        Some(s) => match amount::parse_decimal(s) {
            Some(v) if v < 0.0 => {
                issues.push(FieldIssue::NegativeValue(key.to_string()));
                0.0
            }
            Some(v) => v,
            None => {
                issues.push(FieldIssue::MalformedNumber(key.to_string()));
                0.0
            }
        },
    }
}

/// Validates a raw key/value record into a [`Transaction`].
///
/// Missing `value_btc` is read as zero and missing `direction`/`label` take
/// `incoming`/`unlabeled`; only the key fields in [`KEY_FIELDS`] drop a record.
/// Extreme magnitudes are never rejected.
pub fn validate_transaction(raw: &BTreeMap<String, String>) -> Result<Transaction, ValidationError> {
    let mut issues = Vec::new();

    let tx_id = present(raw, "tx_id");
    if tx_id.is_none() {
        issues.push(FieldIssue::MissingField("tx_id".into()));
    }

    let timestamp = match present(raw, "timestamp") {
        None => {
            issues.push(FieldIssue::MissingField("timestamp".into()));
            None
        }
        Some(s) => match DateTime::parse_from_rfc3339(s) {
            Ok(ts) => Some(ts),
            Err(_) => {
                issues.push(FieldIssue::MalformedTimestamp("timestamp".into()));
                None
            }
        },
    };

    let receiving = present(raw, "receiving_address");
    if receiving.is_none() {
        issues.push(FieldIssue::MissingField("receiving_address".into()));
    }
    let counterparty = present(raw, "counterparty_address");
    if counterparty.is_none() {
        issues.push(FieldIssue::MissingField("counterparty_address".into()));
    }

    let value_btc = parse_amount(raw, "value_btc", false, &mut issues);
    let usd_value = parse_amount(raw, "usd_value", true, &mut issues);

    let direction = match present(raw, "direction") {
        None => Direction::Incoming,
        Some(s) => Direction::parse(s).unwrap_or_else(|| {
            issues.push(FieldIssue::InvalidValue("direction".into()));
            Direction::Incoming
        }),
    };
    let label = match present(raw, "label") {
        None => Label::Unlabeled,
        Some(s) => Label::parse(s).unwrap_or_else(|| {
            issues.push(FieldIssue::InvalidValue("label".into()));
            Label::Unlabeled
        }),
    };

    if !issues.is_empty() {
        return Err(ValidationError { issues });
    }

    Ok(Transaction {
        tx_id: tx_id.unwrap_or_default().to_string(),
        timestamp: timestamp.expect("checked above"),
        receiving_address: receiving.unwrap_or_default().to_string(),
        counterparty_address: counterparty.unwrap_or_default().to_string(),
        value_btc,
        usd_value,
        direction,
        label,
    })
}
