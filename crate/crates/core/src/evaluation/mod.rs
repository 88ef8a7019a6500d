//! Binary classification metrics over a temporal split, plus turn latency.

use std::fmt;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::detector::{train_with_report, DetectorError, TrainConfig, TrainReport, TreeEnsemble};
use crate::domain::{Label, Transaction};
use crate::features::{temporal_split, AllowList, FeatureError, FeaturePipeline, FeatureSchema, WalletIndex};

/// Reference figures from the original study, kept for side-by-side display.
pub const REFERENCE_ACCURACY: f64 = 0.9159;
pub const REFERENCE_PRECISION: f64 = 0.9317;
pub const REFERENCE_RECALL: f64 = 0.9159;
pub const REFERENCE_F1: f64 = 0.9209;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("test set has no labeled rows")]
    EmptyTestSet,
    #[error("training set has no labeled rows")]
    EmptyTrainSet,
    #[error(transparent)]
    Schema(#[from] FeatureError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Confusion::default();
        for (predicted, actual) in pairs {
            match (predicted, actual) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

impl LatencyStats {
    /// Nearest-rank p95. An empty sample gives zeros with `count == 0`.
    pub fn from_millis(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        LatencyStats {
            count: samples.len(),
            mean_ms: samples.iter().sum::<f64>() / samples.len() as f64,
            p95_ms: sorted[rank - 1],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub train_rows: usize,
    pub test_rows: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub threshold: f64,
    pub latency: Option<LatencyStats>,
    pub fingerprint: DatasetFingerprint,
    /// Metrics whose denominator was zero and were reported as 0.
    pub undefined: Vec<String>,
}

fn ratio(num: u64, den: u64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    pub fn from_confusion(confusion: Confusion, threshold: f64) -> Self {
        let c = confusion;
        let mut undefined = Vec::new();
        let accuracy = ratio(c.tp + c.tn, c.total(), "accuracy", &mut undefined);
        let precision = ratio(c.tp, c.tp + c.fp, "precision", &mut undefined);
        let recall = ratio(c.tp, c.tp + c.fn_, "recall", &mut undefined);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            undefined.push("f1".to_string());
            0.0
        };
        MetricsReport {
            confusion,
            accuracy,
            precision,
            recall,
            f1,
            auc: None,
            threshold,
            latency: None,
            fingerprint: DatasetFingerprint::default(),
            undefined,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.confusion;
        writeln!(f, "{:<12}{:>10}{:>12}", "metric", "value", "reference")?;
        for (name, value, reference) in [
            ("accuracy", self.accuracy, REFERENCE_ACCURACY),
            ("precision", self.precision, REFERENCE_PRECISION),
            ("recall", self.recall, REFERENCE_RECALL),
            ("f1", self.f1, REFERENCE_F1),
        ] {
            writeln!(f, "{name:<12}{value:>10.4}{reference:>12.4}")?;
        }
        if let Some(auc) = self.auc {
            writeln!(f, "{:<12}{auc:>10.4}", "auc")?;
        }
        writeln!(f, "{:<12}{:>10.2}", "threshold", self.threshold)?;
        writeln!(f, "confusion   tp={} fp={} fn={} tn={}", c.tp, c.fp, c.fn_, c.tn)?;
        if let Some(l) = &self.latency {
            writeln!(f, "latency     mean={:.2}ms p95={:.2}ms over {} turns", l.mean_ms, l.p95_ms, l.count)?;
        }
        if !self.undefined.is_empty() {
            writeln!(f, "undefined   {}", self.undefined.join(", "))?;
        }
        write!(f, "rows        train={} test={}", self.fingerprint.train_rows, self.fingerprint.test_rows)?;
        if let Some(seed) = self.fingerprint.seed {
            write!(f, " seed={seed}")?;
        }
        Ok(())
    }
}

/// Area under the ROC curve by rank statistics; ties count one half.
/// `None` unless both classes are present.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> Option<f64> {
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(positives.iter().copied()).collect();
    let n_pos = pairs.iter().filter(|p| p.1).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        let mid_rank = (i + j + 1) as f64 / 2.0;
        rank_sum += mid_rank * pairs[i..j].iter().filter(|p| p.1).count() as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Everything fitted on the training side of a temporal split.
#[derive(Debug, Clone)]
pub struct FittedSplit {
    pub pipeline: FeaturePipeline,
    pub model: TreeEnsemble,
    pub report: TrainReport,
    pub train_rows: usize,
    pub test: Vec<Transaction>,
    /// Histories over the whole corpus; features only look backwards.
    pub index: WalletIndex,
}

fn labeled(rows: &[Transaction]) -> Vec<&Transaction> {
    rows.iter().filter(|t| t.label != Label::Unlabeled).collect()
}

/// Splits `corpus` at `boundary`, builds the graph from the training side
/// and trains on its labeled rows.
pub fn fit_temporal(
    corpus: &[Transaction],
    allowlist: AllowList,
    boundary: DateTime<Utc>,
    schema: FeatureSchema,
    config: &TrainConfig,
) -> Result<FittedSplit, EvalError> {
    let pipeline = FeaturePipeline::from_training_window(schema, corpus, boundary, allowlist)?;
    let index = WalletIndex::new(corpus);
    let (train, test) = temporal_split(corpus.iter().cloned(), boundary);
    let train: Vec<Transaction> = labeled(&train).into_iter().cloned().collect();
    if train.is_empty() {
        return Err(EvalError::EmptyTrainSet);
    }
    let rows: Vec<Vec<f64>> = pipeline.compute_batch(&train, &index).into_iter().map(|v| v.values).collect();
    let labels: Vec<u8> = train.iter().map(|t| t.label.as_target().unwrap_or(0)).collect();
    let (model, report) = train_with_report(&rows, &labels, &pipeline.schema, config)?;
    Ok(FittedSplit { pipeline, model, report, train_rows: train.len(), test, index })
}

/// Scores every labeled test row through features and predict; anomalous is
/// the positive class.
pub fn evaluate(
    model: &TreeEnsemble,
    pipeline: &FeaturePipeline,
    index: &WalletIndex,
    test: &[Transaction],
    threshold: f64,
) -> Result<MetricsReport, EvalError> {
    pipeline.schema.ensure_matches(&model.feature_schema)?;
    let rows = labeled(test);
    if rows.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let mut scores = Vec::with_capacity(rows.len());
    for tx in &rows {
        scores.push(model.predict_proba(&pipeline.compute(tx, index.history_before(tx)))?);
    }
    let actual: Vec<bool> = rows.iter().map(|t| t.label == Label::Anomalous).collect();
    let confusion = Confusion::from_pairs(scores.iter().map(|p| *p >= threshold).zip(actual.iter().copied()));
    let mut report = MetricsReport::from_confusion(confusion, threshold);
    report.auc = roc_auc(&scores, &actual);
    report.fingerprint.test_rows = rows.len();
    Ok(report)
}

impl FittedSplit {
    pub fn evaluate(&self, threshold: f64) -> Result<MetricsReport, EvalError> {
        let mut report = evaluate(&self.model, &self.pipeline, &self.index, &self.test, threshold)?;
        report.fingerprint.train_rows = self.train_rows;
        Ok(report)
    }
}

/// Wall-clock latency of `turn` over each scripted query.
pub fn measure_latency<S: AsRef<str>>(script: &[S], mut turn: impl FnMut(&str)) -> LatencyStats {
    let samples: Vec<f64> = script
        .iter()
        .map(|q| {
            let start = Instant::now();
            turn(q.as_ref());
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    LatencyStats::from_millis(&samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_confusion() {
        let c = Confusion { tp: 2, fp: 1, fn_: 1, tn: 6 };
        let r = MetricsReport::from_confusion(c, 0.5);
        assert_eq!(r.accuracy, 0.8);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!(r.undefined.is_empty());
    }

    #[test]
    fn perfect_predictions() {
        let r = MetricsReport::from_confusion(Confusion { tp: 5, fp: 0, fn_: 0, tn: 5 }, 0.5);
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let r = MetricsReport::from_confusion(Confusion { tp: 0, fp: 0, fn_: 0, tn: 4 }, 0.5);
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        assert_eq!(r.undefined, ["precision", "recall", "f1"]);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]), Some(0.75));
        assert_eq!(roc_auc(&[0.5, 0.5], &[false, true]), Some(0.5));
        assert_eq!(roc_auc(&[0.5], &[true]), None);
    }

    #[test]
    fn latency_stats() {
        assert!(LatencyStats::from_millis(&[]).is_empty());
        let s = LatencyStats::from_millis(&(1..=100).map(f64::from).collect::<Vec<_>>());
        assert_eq!((s.count, s.mean_ms, s.p95_ms), (100, 50.5, 95.0));
        assert!(measure_latency::<&str>(&[], |_| {}).is_empty());
    }

    #[test]
    fn json_uses_fn_key() {
        let r = MetricsReport::from_confusion(Confusion { tp: 1, fp: 2, fn_: 3, tn: 4 }, 0.5);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["confusion"]["fn"], 3);
        assert!(r.to_string().contains("tp=1 fp=2 fn=3 tn=4"));
    }
}
