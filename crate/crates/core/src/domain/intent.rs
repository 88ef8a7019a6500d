use chrono::{DateTime, FixedOffset};
use serde::{Deserialize, Serialize};

use super::Direction;

/// Wire keys of the point-query document, in emission order.
pub const WIRE_KEYS: [&str; 5] = [
    "Date",
    "Receiving Address",
    "Counterparty Address",
    "Value",
    "USD Value",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentKind {
    TransactionCheck,
    WindowAnalysis,
    FollowUp,
    Refinement,
}

impl IntentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IntentKind::TransactionCheck => "transaction_check",
            IntentKind::WindowAnalysis => "window_analysis",
            IntentKind::FollowUp => "follow_up",
            IntentKind::Refinement => "refinement",
        }
    }
}

/// Cluster tag carried by a counterparty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterClass {
    Exchange,
    Mixer,
    Unknown,
}

impl ClusterClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ClusterClass::Exchange => "exchange",
            ClusterClass::Mixer => "mixer",
            ClusterClass::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exchange" => Some(ClusterClass::Exchange),
            "mixer" => Some(ClusterClass::Mixer),
            "unknown" => Some(ClusterClass::Unknown),
            _ => None,
        }
    }
}

/// Conjunctive restriction on a result set. Adding a filter can only shrink it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Filter {
    ClusterClass(ClusterClass),
    MinUsdValue(f64),
    MaxUsdValue(f64),
    /// Keep rows whose USD value exceeds this quantile of the result window.
    UsdPercentileAbove(f64),
    Direction(Direction),
    UnverifiedCounterparty,
}

/// Normalized, machine-readable form of an analyst request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedIntent {
    pub kind: IntentKind,
    pub date: Option<DateTime<FixedOffset>>,
    pub day_range: Option<u32>,
    pub receiving_address: Option<String>,
    pub counterparty_address: Option<String>,
    pub value: Option<f64>,
    pub usd_value: Option<f64>,
    #[serde(default)]
    pub filters: Vec<Filter>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IntentError {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("{kind} intent is missing {fields:?}")]
    MissingRequired { kind: &'static str, fields: Vec<&'static str> },
    #[error("day_range must be at least 1")]
    InvalidDayRange,
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
}

impl ParsedIntent {
    pub fn empty(kind: IntentKind) -> Self {
        ParsedIntent {
            kind,
            date: None,
            day_range: None,
            receiving_address: None,
            counterparty_address: None,
            value: None,
            usd_value: None,
            filters: Vec::new(),
        }
    }

    /// Required fields for `kind` that are still absent.
    pub fn missing_fields(&self) -> Vec<&'static str> {
        let mut missing = Vec::new();
        match self.kind {
            IntentKind::TransactionCheck => {
                if self.date.is_none() {
                    missing.push("date");
                }
                if self.receiving_address.is_none() {
                    missing.push("receiving_address");
                }
                if self.counterparty_address.is_none() {
                    missing.push("counterparty_address");
                }
                if self.value.is_none() {
                    missing.push("value");
                }
                if self.usd_value.is_none() {
                    missing.push("usd_value");
                }
            }
            IntentKind::WindowAnalysis => {
                if self.receiving_address.is_none() {
                    missing.push("receiving_address");
                }
                if self.day_range.is_none() {
                    missing.push("day_range");
                }
            }
            IntentKind::FollowUp | IntentKind::Refinement => {}
        }
        missing
    }

    pub fn validate(&self) -> Result<(), IntentError> {
        let missing = self.missing_fields();
        if !missing.is_empty() {
            return Err(IntentError::MissingRequired { kind: self.kind.as_str(), fields: missing });
        }
        if self.day_range == Some(0) {
            return Err(IntentError::InvalidDayRange);
        }
        for amount in [self.value, self.usd_value].into_iter().flatten() {
            if !amount.is_finite() || amount < 0.0 {
                return Err(IntentError::SchemaViolation(format!("amount {amount} out of range")));
            }
        }
        for filter in &self.filters {
            match *filter {
                Filter::MinUsdValue(v) | Filter::MaxUsdValue(v) if !(v.is_finite() && v >= 0.0) => {
                    return Err(IntentError::InvalidFilter(format!("{filter:?}")));
                }
                Filter::UsdPercentileAbove(q) if !(q > 0.0 && q < 1.0) => {
                    return Err(IntentError::InvalidFilter(format!("{filter:?}")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointQueryDoc {
    #[serde(rename = "Date")]
    date: DateTime<FixedOffset>,
    #[serde(rename = "Receiving Address")]
    receiving_address: String,
    #[serde(rename = "Counterparty Address")]
    counterparty_address: String,
    #[serde(rename = "Value")]
    value: f64,
    #[serde(rename = "USD Value")]
    usd_value: f64,
}

/// Wire form for every other intent; distinguished by the `Kind` key.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtendedDoc {
    #[serde(rename = "Kind")]
    kind: IntentKind,
    #[serde(rename = "Date", default, skip_serializing_if = "Option::is_none")]
    date: Option<DateTime<FixedOffset>>,
    #[serde(rename = "Day Range", default, skip_serializing_if = "Option::is_none")]
    day_range: Option<u32>,
    #[serde(rename = "Receiving Address", default, skip_serializing_if = "Option::is_none")]
    receiving_address: Option<String>,
    #[serde(rename = "Counterparty Address", default, skip_serializing_if = "Option::is_none")]
    counterparty_address: Option<String>,
    #[serde(rename = "Value", default, skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(rename = "USD Value", default, skip_serializing_if = "Option::is_none")]
    usd_value: Option<f64>,
    #[serde(rename = "Filters", default, skip_serializing_if = "Vec::is_empty")]
    filters: Vec<Filter>,
}

/// Renders an intent as its JSON wire document.
///
/// A filterless point query uses exactly the five [`WIRE_KEYS`]; every
/// other intent carries an explicit `Kind` key.
pub fn serialize_intent(intent: &ParsedIntent) -> Result<serde_json::Value, IntentError> {
    intent.validate()?;
    let value = if intent.kind == IntentKind::TransactionCheck && intent.filters.is_empty() {
        serde_json::to_value(PointQueryDoc {
            date: intent.date.expect("validated"),
            receiving_address: intent.receiving_address.clone().expect("validated"),
            counterparty_address: intent.counterparty_address.clone().expect("validated"),
            value: intent.value.expect("validated"),
            usd_value: intent.usd_value.expect("validated"),
        })
    } else {
        serde_json::to_value(ExtendedDoc {
            kind: intent.kind,
            date: intent.date,
            day_range: intent.day_range,
            receiving_address: intent.receiving_address.clone(),
            counterparty_address: intent.counterparty_address.clone(),
            value: intent.value,
            usd_value: intent.usd_value,
            filters: intent.filters.clone(),
        })
    };
    value.map_err(|e| IntentError::SchemaViolation(e.to_string()))
}

/// Parses and validates a wire document.
pub fn deserialize_intent(doc: &serde_json::Value) -> Result<ParsedIntent, IntentError> {
    let object = doc
        .as_object()
        .ok_or_else(|| IntentError::SchemaViolation("document is not a JSON object".into()))?;
    let intent = if object.contains_key("Kind") {
        let d: ExtendedDoc = serde_json::from_value(doc.clone())
            .map_err(|e| IntentError::SchemaViolation(e.to_string()))?;
        ParsedIntent {
            kind: d.kind,
            date: d.date,
            day_range: d.day_range,
            receiving_address: d.receiving_address,
            counterparty_address: d.counterparty_address,
            value: d.value,
            usd_value: d.usd_value,
            filters: d.filters,
        }
    } else {
        let d: PointQueryDoc = serde_json::from_value(doc.clone())
            .map_err(|e| IntentError::SchemaViolation(e.to_string()))?;
        ParsedIntent {
            kind: IntentKind::TransactionCheck,
            date: Some(d.date),
            day_range: None,
            receiving_address: Some(d.receiving_address),
            counterparty_address: Some(d.counterparty_address),
            value: Some(d.value),
            usd_value: Some(d.usd_value),
            filters: Vec::new(),
        }
    };
    intent.validate()?;
    Ok(intent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn sample_intent() -> ParsedIntent {
        ParsedIntent {
            kind: IntentKind::TransactionCheck,
            date: Some(DateTime::parse_from_rfc3339("2025-09-20T23:00:00+09:00").unwrap()),
            receiving_address: Some("1A2b3C...".into()),
            counterparty_address: Some("bc1qxxx".into()),
            value: Some(0.8),
            usd_value: Some(51200.0),
            ..ParsedIntent::empty(IntentKind::TransactionCheck)
        }
    }

    #[test]
    fn point_query_uses_wire_keys() {
        let doc = serialize_intent(&sample_intent()).unwrap();
        let text = serde_json::to_string(&doc).unwrap();
        assert_eq!(
            text,
            r#"{"Date":"2025-09-20T23:00:00+09:00","Receiving Address":"1A2b3C...","Counterparty Address":"bc1qxxx","Value":0.8,"USD Value":51200.0}"#
        );
    }

    #[test]
    fn unknown_key_is_rejected() {
        let doc = json!({
            "Date": "2025-09-20T23:00:00+09:00",
            "Receiving Address": "1A2b3C...",
            "Counterparty Address": "bc1qxxx",
            "Amount": 0.8,
            "USD Value": 51200.0
        });
        assert!(matches!(deserialize_intent(&doc), Err(IntentError::SchemaViolation(_))));
    }

    #[test]
    fn window_requires_wallet_and_range() {
        let mut intent = ParsedIntent::empty(IntentKind::WindowAnalysis);
        intent.day_range = Some(7);
        assert_eq!(intent.missing_fields(), vec!["receiving_address"]);
        intent.receiving_address = Some("1BoatSLRHtKNngkdXEeobR76b53LETtpyT".into());
        intent.day_range = Some(0);
        assert_eq!(intent.validate(), Err(IntentError::InvalidDayRange));
    }

    #[test]
    fn extended_form_round_trips() {
        let mut intent = ParsedIntent::empty(IntentKind::WindowAnalysis);
        intent.day_range = Some(7);
        intent.receiving_address = Some("1BoatSLRHtKNngkdXEeobR76b53LETtpyT".into());
        intent.filters = vec![Filter::ClusterClass(ClusterClass::Exchange), Filter::UsdPercentileAbove(0.95)];
        let doc = serialize_intent(&intent).unwrap();
        assert_eq!(doc["Kind"], "window_analysis");
        assert_eq!(doc["Filters"][0], json!({"type": "cluster_class", "value": "exchange"}));
        assert_eq!(deserialize_intent(&doc).unwrap(), intent);
    }

    fn arb_offset() -> impl Strategy<Value = FixedOffset> {
        (-11i32..=13).prop_map(|h| FixedOffset::east_opt(h * 3600).unwrap())
    }

    fn arb_date() -> impl Strategy<Value = DateTime<FixedOffset>> {
        (1_500_000_000i64..1_900_000_000, arb_offset())
            .prop_map(|(secs, off)| DateTime::from_timestamp(secs, 0).unwrap().with_timezone(&off))
    }

    fn arb_filter() -> impl Strategy<Value = Filter> {
        prop_oneof![
            prop_oneof![Just(ClusterClass::Exchange), Just(ClusterClass::Mixer), Just(ClusterClass::Unknown)]
                .prop_map(Filter::ClusterClass),
            (0.0f64..1e7).prop_map(Filter::MinUsdValue),
            (0.0f64..1e7).prop_map(Filter::MaxUsdValue),
            (0.01f64..0.99).prop_map(Filter::UsdPercentileAbove),
            Just(Filter::Direction(Direction::Outgoing)),
            Just(Filter::UnverifiedCounterparty),
        ]
    }

    fn arb_intent() -> impl Strategy<Value = ParsedIntent> {
        let addr = "[13][1-9A-HJ-NP-Za-km-z]{25,33}";
        prop_oneof![
            (arb_date(), addr, addr, 0.0f64..1e4, 0.0f64..1e9).prop_map(|(d, r, c, v, u)| ParsedIntent {
                kind: IntentKind::TransactionCheck,
                date: Some(d),
                receiving_address: Some(r),
                counterparty_address: Some(c),
                value: Some(v),
                usd_value: Some(u),
                ..ParsedIntent::empty(IntentKind::TransactionCheck)
            }),
            (addr, 1u32..400, proptest::collection::vec(arb_filter(), 0..4)).prop_map(|(r, days, filters)| {
                ParsedIntent {
                    receiving_address: Some(r),
                    day_range: Some(days),
                    filters,
                    ..ParsedIntent::empty(IntentKind::WindowAnalysis)
                }
            }),
            proptest::collection::vec(arb_filter(), 0..3).prop_map(|filters| ParsedIntent {
                filters,
                ..ParsedIntent::empty(IntentKind::Refinement)
            }),
            Just(ParsedIntent::empty(IntentKind::FollowUp)),
        ]
    }

    proptest! {
        #[test]
        fn wire_round_trip(intent in arb_intent()) {
            let doc = serialize_intent(&intent).unwrap();
            let text = serde_json::to_string(&doc).unwrap();
            let reparsed: serde_json::Value = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(deserialize_intent(&reparsed).unwrap(), intent.clone());
            if intent.kind == IntentKind::TransactionCheck {
                let keys: Vec<_> = reparsed.as_object().unwrap().keys().cloned().collect();
                let mut expected: Vec<_> = WIRE_KEYS.iter().map(|k| k.to_string()).collect();
                expected.sort();
                let mut got = keys.clone();
                got.sort();
                prop_assert_eq!(got, expected);
            }
        }
    }
}
