//! Fixed-schema feature engineering over a wallet's trailing history and the
//! counterparty graph.

mod compute;
mod graph;

use std::collections::BTreeSet;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use compute::{
    compute_features, default_split_boundary, equal_value_burst, percentile_rank, temporal_split,
    WalletIndex, HISTORY_WINDOW_DAYS,
};
pub use graph::{CounterpartyGraph, Degree};

use crate::domain::Transaction;

/// Default slot order.
pub const STANDARD_FEATURES: [&str; 16] = [
    "value_btc",
    "usd_value",
    "log1p_usd_value",
    "hour_of_day",
    "is_off_peak",
    "day_of_week",
    "direction_out",
    "value_pctile_30d",
    "tx_count_24h",
    "tx_count_7d",
    "mean_usd_7d",
    "std_usd_7d",
    "unique_counterparties_7d",
    "counterparty_in_degree",
    "counterparty_out_degree",
    "counterparty_verified",
];

/// Every feature name the pipeline knows how to compute.
pub const KNOWN_FEATURES: [&str; 17] = [
    "value_btc",
    "usd_value",
    "log1p_usd_value",
    "hour_of_day",
    "is_off_peak",
    "day_of_week",
    "direction_out",
    "value_pctile_30d",
    "tx_count_24h",
    "tx_count_7d",
    "mean_usd_7d",
    "std_usd_7d",
    "unique_counterparties_7d",
    "counterparty_in_degree",
    "counterparty_out_degree",
    "counterparty_verified",
    "equal_value_burst",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("feature schema v{found} does not match model schema v{expected}")]
    SchemaMismatch { expected: u32, found: u32 },
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("duplicate feature {0:?}")]
    DuplicateFeature(String),
}

/// Ordered, versioned list of feature names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    pub names: Vec<String>,
}

impl FeatureSchema {
    pub fn standard() -> Self {
        FeatureSchema { version: 1, names: STANDARD_FEATURES.iter().map(|s| s.to_string()).collect() }
    }

    /// Standard schema with slot 10 (`tx_count_7d`) replaced by
    /// `equal_value_burst`.
    pub fn with_burst() -> Self {
        let mut schema = Self::standard();
        schema.version = 2;
        schema.names[9] = "equal_value_burst".into();
        schema
    }

    pub fn arity(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Unique names, all of them computable.
    pub fn validate(&self) -> Result<(), FeatureError> {
        let mut seen = BTreeSet::new();
        for name in &self.names {
            if !KNOWN_FEATURES.contains(&name.as_str()) {
                return Err(FeatureError::UnknownFeature(name.clone()));
            }
            if !seen.insert(name) {
                return Err(FeatureError::DuplicateFeature(name.clone()));
            }
        }
        Ok(())
    }

    pub fn ensure_matches(&self, model_schema: &FeatureSchema) -> Result<(), FeatureError> {
        if self.version != model_schema.version || self.names != model_schema.names {
            return Err(FeatureError::SchemaMismatch { expected: model_schema.version, found: self.version });
        }
        Ok(())
    }
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub schema_version: u32,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn get(&self, schema: &FeatureSchema, name: &str) -> Option<f64> {
        schema.index_of(name).and_then(|i| self.values.get(i).copied())
    }
}

/// Counterparties considered verified.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AllowList(BTreeSet<String>);

impl AllowList {
    pub fn new(addresses: impl IntoIterator<Item = String>) -> Self {
        AllowList(addresses.into_iter().collect())
    }

    /// Newline-delimited addresses; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Self {
        AllowList(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|a| format!("{a}\n")).collect()
    }

    pub fn contains(&self, address: &str) -> bool {
        self.0.contains(address)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Schema, counterparty graph and allow-list bound together.
#[derive(Debug, Clone)]
pub struct FeaturePipeline {
    pub schema: FeatureSchema,
    pub graph: CounterpartyGraph,
    pub allowlist: AllowList,
}

impl FeaturePipeline {
    pub fn new(schema: FeatureSchema, graph: CounterpartyGraph, allowlist: AllowList) -> Result<Self, FeatureError> {
        schema.validate()?;
        Ok(FeaturePipeline { schema, graph, allowlist })
    }

    /// Builds the graph from the transactions strictly before `boundary`.
    pub fn from_training_window(
        schema: FeatureSchema,
        corpus: &[Transaction],
        boundary: chrono::DateTime<chrono::Utc>,
        allowlist: AllowList,
    ) -> Result<Self, FeatureError> {
        let graph = CounterpartyGraph::build(corpus.iter().filter(|t| t.utc() < boundary));
        Self::new(schema, graph, allowlist)
    }

    pub fn compute(&self, tx: &Transaction, history: &[Transaction]) -> FeatureVector {
        compute_features(&self.schema, tx, history, &self.graph, &self.allowlist)
    }

    /// Features for each target, with histories drawn from `index`.
    pub fn compute_batch(&self, targets: &[Transaction], index: &WalletIndex) -> Vec<FeatureVector> {
        targets.iter().map(|tx| self.compute(tx, index.history_before(tx))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schemas_are_valid() {
        FeatureSchema::standard().validate().unwrap();
        FeatureSchema::with_burst().validate().unwrap();
        assert_eq!(FeatureSchema::standard().arity(), 16);
        assert_eq!(FeatureSchema::with_burst().names[9], "equal_value_burst");
    }

    #[test]
    fn schema_round_trip_keeps_order() {
        let s = FeatureSchema::standard();
        let back: FeatureSchema = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn mismatch_detected() {
        let err = FeatureSchema::with_burst().ensure_matches(&FeatureSchema::standard()).unwrap_err();
        assert_eq!(err, FeatureError::SchemaMismatch { expected: 1, found: 2 });
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = FeatureSchema::standard();
        s.names[1] = "value_btc".into();
        assert!(matches!(s.validate(), Err(FeatureError::DuplicateFeature(_))));
    }

    #[test]
    fn allowlist_parsing() {
        let a = AllowList::parse("# verified\n1abc\n\n  bc1qdef  \n");
        assert_eq!(a.len(), 2);
        assert!(a.contains("bc1qdef"));
        assert_eq!(AllowList::parse(&a.to_text()), a);
    }
}
