//! Metrics over a trained temporal split, plus metric identities.

use std::sync::{Arc, LazyLock};

use hcla_core::dataio::{generate_synthetic, GeneratorConfig, TransactionStore};
use hcla_core::detector::TrainConfig;
use hcla_core::domain::DEFAULT_THRESHOLD;
use hcla_core::evaluation::{
    evaluate, fit_temporal, measure_latency, roc_auc, Confusion, EvalError, FittedSplit, MetricsReport,
};
use hcla_core::features::{default_split_boundary, FeatureSchema};
use hcla_core::orchestrator::{AnalysisEngine, Clock, OrchestratorConfig, SessionManager};
use proptest::prelude::*;

static SPLIT: LazyLock<(FittedSplit, hcla_core::dataio::SyntheticDataset)> = LazyLock::new(|| {
    let data = generate_synthetic(&GeneratorConfig { n_transactions: 4000, ..GeneratorConfig::default() }).unwrap();
    let fitted = fit_temporal(
        &data.transactions,
        data.allowlist.clone(),
        default_split_boundary(),
        FeatureSchema::standard(),
        &TrainConfig { rounds: 60, ..TrainConfig::default() },
    )
    .unwrap();
    (fitted, data)
});

#[test]
fn small_corpus_is_well_separated() {
    let r = SPLIT.0.evaluate(DEFAULT_THRESHOLD).unwrap();
    assert_eq!(r.confusion.total() as usize, r.fingerprint.test_rows);
    assert!(r.f1 > 0.85, "{r}");
    assert!(r.auc.unwrap() > 0.99, "{r}");
    assert!(r.undefined.is_empty());
}

#[test]
fn recall_never_rises_with_the_threshold() {
    let taus = [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0];
    let reports: Vec<MetricsReport> = taus.iter().map(|&t| SPLIT.0.evaluate(t).unwrap()).collect();
    for pair in reports.windows(2) {
        assert!(pair[1].recall <= pair[0].recall + 1e-12);
        assert!(pair[1].confusion.tp + pair[1].confusion.fp <= pair[0].confusion.tp + pair[0].confusion.fp);
    }
    let all = &reports[0];
    assert_eq!(all.recall, 1.0);
    let positives = all.confusion.tp as f64;
    assert!((all.precision - positives / all.confusion.total() as f64).abs() < 1e-12);
}

#[test]
fn empty_test_side_is_an_error() {
    let (fitted, _) = &*SPLIT;
    let err = evaluate(&fitted.model, &fitted.pipeline, &fitted.index, &[], 0.5).unwrap_err();
    assert!(matches!(err, EvalError::EmptyTestSet));
}

#[test]
fn empty_train_side_is_an_error() {
    let (_, data) = &*SPLIT;
    let early = chrono::DateTime::parse_from_rfc3339("2019-01-01T00:00:00Z").unwrap().to_utc();
    let err = fit_temporal(&data.transactions, data.allowlist.clone(), early, FeatureSchema::standard(), &TrainConfig::default())
        .unwrap_err();
    assert!(matches!(err, EvalError::EmptyTrainSet));
}

#[test]
fn mismatched_schema_is_rejected() {
    let (fitted, data) = &*SPLIT;
    let other = fit_temporal(
        &data.transactions,
        data.allowlist.clone(),
        default_split_boundary(),
        FeatureSchema::with_burst(),
        &TrainConfig { rounds: 2, ..TrainConfig::default() },
    )
    .unwrap();
    let err = evaluate(&other.model, &fitted.pipeline, &fitted.index, &fitted.test, 0.5).unwrap_err();
    assert!(matches!(err, EvalError::Schema(_)));
}

#[test]
fn hundred_turn_latency_is_interactive() {
    let (fitted, data) = &*SPLIT;
    let store = TransactionStore::new(data.transactions.clone(), data.clusters.clone(), data.allowlist.clone());
    let engine = AnalysisEngine::new(store, fitted.model.clone(), default_split_boundary(), DEFAULT_THRESHOLD).unwrap();
    let wallet = &fitted.test[0].receiving_address;
    let now = fitted.test[fitted.test.len() / 2].timestamp;
    let manager = SessionManager::new(
        Arc::new(engine),
        OrchestratorConfig { clock: Clock::Fixed(now), ..OrchestratorConfig::default() },
    );
    let script: Vec<String> = (0..100)
        .map(|i| match i % 4 {
            0 => format!("Analyze my wallet {wallet} for the past month."),
            1 => "Only show exchange counterparties.".to_string(),
            2 => "Why was it flagged?".to_string(),
            _ => format!("Check wallet {wallet} over the last {} days", 3 + i % 20),
        })
        .collect();
    let session = manager.new_session();
    let stats = measure_latency(&script, |q| {
        manager.handle_turn(&session, q).unwrap();
    });
    assert_eq!(stats.count, 100);
    assert!(stats.mean_ms < 2000.0, "{stats:?}");
}

proptest! {
    #[test]
    fn metric_identities(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
        let c = Confusion::from_pairs(pairs.iter().copied());
        prop_assert_eq!(c.total() as usize, pairs.len());
        let r = MetricsReport::from_confusion(c, 0.5);
        let n = pairs.len() as f64;
        prop_assert!((r.accuracy - (c.tp + c.tn) as f64 / n).abs() < 1e-12);
        for v in [r.accuracy, r.precision, r.recall, r.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if r.precision + r.recall > 0.0 && r.undefined.is_empty() {
            let h = 2.0 * r.precision * r.recall / (r.precision + r.recall);
            prop_assert!((r.f1 - h).abs() < 1e-12);
        }
        if c.tp + c.fp == 0 {
            prop_assert!(r.undefined.iter().any(|u| u == "precision"));
        }
    }

    #[test]
    fn auc_is_rank_invariant(scores in prop::collection::vec(0.0f64..1.0, 2..60), seed in any::<u64>()) {
        let labels: Vec<bool> = scores.iter().enumerate().map(|(i, _)| (seed >> (i % 64)) & 1 == 1).collect();
        let a = roc_auc(&scores, &labels);
        let squashed: Vec<f64> = scores.iter().map(|s| s.powi(3) * 10.0 - 4.0).collect();
        prop_assert_eq!(a, roc_auc(&squashed, &labels));
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        if let (Some(x), Some(y)) = (a, roc_auc(&scores, &flipped)) {
            prop_assert!((x + y - 1.0).abs() < 1e-12);
        }
    }
}
