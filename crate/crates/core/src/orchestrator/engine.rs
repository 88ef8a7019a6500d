use chrono::{DateTime, FixedOffset, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::OrchestratorError;
use crate::dataio::{price_at, TransactionStore};
use crate::detector::{AttributionRecord, TreeEnsemble};
use crate::domain::{serialize_intent, AnomalyScore, Direction, Label, ParsedIntent, Transaction};
use crate::explainer::{build_evidence, Evidence};
use crate::features::{FeaturePipeline, FeatureVector};
use crate::intent::address_matches;

/// One transaction carried through features, prediction and attribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredTransaction {
    pub transaction: Transaction,
    pub features: FeatureVector,
    pub score: AnomalyScore,
    pub attribution: AttributionRecord,
    pub evidence: Evidence,
}

/// How a point query was tied to a transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Stored,
    AdHoc,
}

/// The served corpus with the model and feature pipeline fitted to it.
#[derive(Debug, Clone)]
pub struct AnalysisEngine {
    store: TransactionStore,
    pipeline: FeaturePipeline,
    model: TreeEnsemble,
    threshold: f64,
}

impl AnalysisEngine {
    /// The counterparty graph is built from the store's rows before
    /// `boundary`, matching how the model was trained.
    pub fn new(
        store: TransactionStore,
        model: TreeEnsemble,
        boundary: DateTime<Utc>,
        threshold: f64,
    ) -> Result<Self, OrchestratorError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(OrchestratorError::InvalidThreshold(threshold));
        }
        let pipeline = FeaturePipeline::from_training_window(
            model.feature_schema.clone(),
            store.transactions(),
            boundary,
            store.allowlist().clone(),
        )?;
        pipeline.schema.ensure_matches(&model.feature_schema)?;
        Ok(AnalysisEngine { store, pipeline, model, threshold })
    }

    pub fn store(&self) -> &TransactionStore {
        &self.store
    }

    pub fn pipeline(&self) -> &FeaturePipeline {
        &self.pipeline
    }

    pub fn model(&self) -> &TreeEnsemble {
        &self.model
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// The stored transaction a point query names, or one built from the
    /// query's own fields when the store has no match.
    pub fn resolve_point(&self, intent: &ParsedIntent) -> (Transaction, Resolution) {
        if let Some(tx) = self.store.find_point(intent) {
            return (tx.clone(), Resolution::Stored);
        }
        (self.adhoc_transaction(intent), Resolution::AdHoc)
    }

    fn adhoc_transaction(&self, intent: &ParsedIntent) -> Transaction {
        let timestamp = intent.date.unwrap_or_else(|| Utc::now().fixed_offset());
        let price = price_at(timestamp.to_utc());
        let pattern = intent.receiving_address.clone().unwrap_or_default();
        let mut wallets = self.store.index().wallets().filter(|w| address_matches(&pattern, w));
        let receiving_address = match (wallets.next(), wallets.next()) {
            (Some(only), None) => only.to_string(),
            _ => pattern,
        };
        let doc = serialize_intent(intent).map(|v| v.to_string()).unwrap_or_else(|_| format!("{intent:?}"));
        let value_btc = intent.value.or(intent.usd_value.map(|u| u / price)).unwrap_or(0.0);
        Transaction {
            tx_id: hex::encode(&Sha256::digest(doc.as_bytes())[..8]),
            timestamp,
            receiving_address,
            counterparty_address: intent.counterparty_address.clone().unwrap_or_default(),
            value_btc,
            usd_value: intent.usd_value.unwrap_or(value_btc * price),
            direction: Direction::Incoming,
            label: Label::Unlabeled,
        }
    }

    pub fn resolve_window(&self, intent: &ParsedIntent, now: DateTime<FixedOffset>) -> Vec<Transaction> {
        self.store.window(intent, now)
    }

    /// Scores rows against the store's history, in input order.
    pub fn score(&self, transactions: &[Transaction]) -> Vec<ScoredTransaction> {
        transactions
            .iter()
            .map(|tx| {
                let features = self.pipeline.compute(tx, self.store.index().history_before(tx));
                let attribution = self.model.attribute_row(&features.values);
                let score = AnomalyScore::new(tx.tx_id.clone(), self.model.predict_row(&features.values), self.threshold);
                let evidence = build_evidence(&score, &attribution, &features, &self.pipeline.schema);
                ScoredTransaction { transaction: tx.clone(), features, score, attribution, evidence }
            })
            .collect()
    }

    /// Feature values keyed by name, for trace payloads.
    pub fn named_features(&self, features: &FeatureVector) -> serde_json::Map<String, serde_json::Value> {
        self.pipeline.schema.names.iter().cloned().zip(features.values.iter().map(|v| serde_json::json!(v))).collect()
    }
}
