//! Second-order gradient-boosted trees over the logistic loss.

mod model;
mod train;

use serde::{Deserialize, Serialize};

use crate::domain::{AnomalyScore, PredictedLabel, RiskBand};
use crate::features::FeatureError;

pub use model::{AttributionRecord, MODEL_FORMAT_VERSION};
pub use train::{train, train_with_report, TrainReport, GAIN_TIE_TOLERANCE, MIN_SPLIT_GAIN_EPSILON};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectorError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("row {row} has {found} features, schema expects {expected}")]
    ArityMismatch { row: usize, expected: usize, found: usize },
    #[error("{rows} rows but {labels} labels")]
    LabelCountMismatch { rows: usize, labels: usize },
    #[error("label {label} at row {row} is not 0 or 1")]
    InvalidLabel { row: usize, label: u8 },
    #[error("feature {col} of row {row} is not finite")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Schema(#[from] FeatureError),
    #[error("model document is corrupt: {0}")]
    CorruptDocument(String),
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub l2_weight: f64,
    pub min_split_gain: f64,
    pub min_child_hessian: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rounds: 200,
            max_depth: 4,
            learning_rate: 0.1,
            l2_weight: 1.0,
            min_split_gain: 0.0,
            min_child_hessian: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Zero rounds is allowed and yields the constant model.
    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |msg: &str| Err(DetectorError::InvalidConfig(msg.to_string()));
        if self.max_depth == 0 {
            return bad("max_depth must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.l2_weight.is_finite() && self.l2_weight >= 0.0) {
            return bad("l2_weight must be non-negative");
        }
        if !(self.min_split_gain.is_finite() && self.min_split_gain >= 0.0) {
            return bad("min_split_gain must be non-negative");
        }
        if !(self.min_child_hessian.is_finite() && self.min_child_hessian >= 0.0) {
            return bad("min_child_hessian must be non-negative");
        }
        Ok(())
    }
}

/// One node of a tree arena; children are indices into the same arena.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Cover-weighted mean of the descendant leaf weights.
        value: f64,
        cover: f64,
    },
    Leaf {
        weight: f64,
        cover: f64,
    },
}

impl TreeNode {
    pub fn value(&self) -> f64 {
        match self {
            TreeNode::Split { value, .. } => *value,
            TreeNode::Leaf { weight, .. } => *weight,
        }
    }

    pub fn cover(&self) -> f64 {
        match self {
            TreeNode::Split { cover, .. } | TreeNode::Leaf { cover, .. } => *cover,
        }
    }
}

/// Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split { feature, threshold, left, right, .. } => {
                    i = if row[*feature] < *threshold { *left } else { *right };
                }
                TreeNode::Leaf { .. } => return i,
            }
        }
    }

    pub fn output(&self, row: &[f64]) -> f64 {
        self.nodes[self.leaf_index(row)].value()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            go(&self.nodes, 0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub base_margin: f64,
    pub feature_schema: crate::features::FeatureSchema,
    pub config: TrainConfig,
}

/// Numerically stable logistic function.
pub fn sigmoid(margin: f64) -> f64 {
    if margin >= 0.0 {
        1.0 / (1.0 + (-margin).exp())
    } else {
        let e = margin.exp();
        e / (1.0 + e)
    }
}

/// Logistic-loss gradient and hessian with respect to the margin.
pub fn grad_hess(margin: f64, label: u8) -> (f64, f64) {
    let p = sigmoid(margin);
    (p - f64::from(label), p * (1.0 - p))
}

/// Logistic loss of one prediction, computed from the margin.
pub fn log_loss(margin: f64, label: u8) -> f64 {
    // log(1 + e^m) - y*m, stable for large |m|.
    let softplus = if margin > 0.0 { margin + (-margin).exp().ln_1p() } else { margin.exp().ln_1p() };
    softplus - f64::from(label) * margin
}

/// Label and risk band for `p` at threshold `tau` (inclusive).
pub fn classify(p: f64, tau: f64) -> (PredictedLabel, RiskBand) {
    let score = AnomalyScore::new("", p, tau);
    (score.predicted_label, score.risk_band)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_hess_at_zero() {
        assert_eq!(grad_hess(0.0, 1), (-0.5, 0.25));
        assert_eq!(grad_hess(0.0, 0), (0.5, 0.25));
    }

    #[test]
    fn grad_hess_at_two() {
        let (g, h) = grad_hess(2.0, 1);
        let s = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((g - (s - 1.0)).abs() < 1e-15);
        assert!((g + 0.1192).abs() < 1e-4);
        assert!((h - 0.1050).abs() < 1e-4);
        let step = 1e-5;
        let fd = (grad_hess(2.0 + step, 1).0 - grad_hess(2.0 - step, 1).0) / (2.0 * step);
        assert!((fd - h).abs() / h < 1e-5);
    }

    #[test]
    fn sigmoid_extremes_stay_finite() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!(log_loss(800.0, 0).is_finite() && log_loss(-800.0, 1).is_finite());
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(0.84, 0.5), (PredictedLabel::Anomalous, RiskBand::High));
        assert_eq!(classify(0.5, 0.5).0, PredictedLabel::Anomalous);
        assert_eq!(classify(0.49, 0.5), (PredictedLabel::Normal, RiskBand::Low));
    }

    #[test]
    fn config_bounds() {
        TrainConfig::default().validate().unwrap();
        TrainConfig { rounds: 0, ..Default::default() }.validate().unwrap();
        assert!(TrainConfig { max_depth: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { l2_weight: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: f64::NAN, ..Default::default() }.validate().is_err());
    }
}
