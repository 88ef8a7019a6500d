//! Shared value types: ledger records, parsed query intents and scores.

mod intent;
mod score;
mod transaction;

pub use intent::{
    deserialize_intent, serialize_intent, ClusterClass, Filter, IntentError, IntentKind, ParsedIntent,
    WIRE_KEYS,
};
pub use score::{AnomalyScore, PredictedLabel, RiskBand, DEFAULT_THRESHOLD};
pub use transaction::{
    validate_transaction, Direction, FieldIssue, Label, Transaction, ValidationError, KEY_FIELDS,
};

/// Absolute tolerance for comparing monetary amounts.
pub const AMOUNT_TOLERANCE: f64 = 1e-8;

/// Serde adapter carrying amounts as exact decimal strings.
///
/// `f64`'s `Display` is the shortest representation that parses back to the
/// same bits, so the string form is lossless. Numbers are accepted on input.
pub(crate) mod amount {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn parse_decimal(s: &str) -> Option<f64> {
        let cleaned: String = s.trim().chars().filter(|c| *c != ',' && *c != '_').collect();
        if cleaned.is_empty()
            || !cleaned
                .chars()
                .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'))
        {
            return None;
        }
        cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
    }

    pub fn serialize<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&value.to_string())
    }

    struct AmountVisitor;

    impl Visitor<'_> for AmountVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("a decimal string or number")
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            parse_decimal(v).ok_or_else(|| E::custom(format!("malformed decimal {v:?}")))
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
        deserializer.deserialize_any(AmountVisitor)
    }
}
