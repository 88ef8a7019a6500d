use serde::{Deserialize, Serialize};

use super::{sigmoid, DetectorError, TrainConfig, Tree, TreeEnsemble, TreeNode};
use crate::features::{FeatureError, FeatureSchema, FeatureVector};

pub const MODEL_FORMAT_VERSION: u32 = 1;

const P_MIN: f64 = f64::MIN_POSITIVE;
const P_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Per-feature split credit for one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub base: f64,
    pub contributions: Vec<f64>,
    pub margin: f64,
}

impl AttributionRecord {
    /// `base + Σ contributions`, which equals `margin` up to rounding.
    pub fn reconstructed_margin(&self) -> f64 {
        self.base + self.contributions.iter().sum::<f64>()
    }
}

impl TreeEnsemble {
    pub fn arity(&self) -> usize {
        self.feature_schema.arity()
    }

    fn check(&self, x: &FeatureVector) -> Result<(), DetectorError> {
        if x.schema_version != self.feature_schema.version {
            return Err(FeatureError::SchemaMismatch { expected: self.feature_schema.version, found: x.schema_version }.into());
        }
        if x.values.len() != self.arity() {
            return Err(DetectorError::ArityMismatch { row: 0, expected: self.arity(), found: x.values.len() });
        }
        Ok(())
    }

    /// Raw margin; rows must have the schema's arity.
    pub fn margin_row(&self, row: &[f64]) -> f64 {
        let mut m = self.base_margin;
        for tree in &self.trees {
            m += self.learning_rate * tree.output(row);
        }
        m
    }

    /// Probability clamped into the open unit interval.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.margin_row(row)).clamp(P_MIN, P_MAX)
    }

    pub fn margin(&self, x: &FeatureVector) -> Result<f64, DetectorError> {
        self.check(x)?;
        Ok(self.margin_row(&x.values))
    }

    pub fn predict_proba(&self, x: &FeatureVector) -> Result<f64, DetectorError> {
        self.check(x)?;
        Ok(self.predict_row(&x.values))
    }

    /// Path attribution: each split on the decision path credits its feature
    /// with `η·(child value − node value)`; the root values form the base.
    pub fn attribute_row(&self, row: &[f64]) -> AttributionRecord {
        let eta = self.learning_rate;
        let mut base = self.base_margin;
        let mut contributions = vec![0.0; self.arity()];
        for tree in &self.trees {
            base += eta * tree.nodes[0].value();
            let mut i = 0;
            while let TreeNode::Split { feature, threshold, left, right, value, .. } = tree.nodes[i] {
                let child = if row[feature] < threshold { left } else { right };
                contributions[feature] += eta * (tree.nodes[child].value() - value);
                i = child;
            }
        }
        AttributionRecord { base, contributions, margin: self.margin_row(row) }
    }

    pub fn attribute(&self, x: &FeatureVector) -> Result<AttributionRecord, DetectorError> {
        self.check(x)?;
        Ok(self.attribute_row(&x.values))
    }

    pub fn to_json(&self) -> String {
        let doc = ModelDoc {
            format_version: MODEL_FORMAT_VERSION,
            config: self.config.clone(),
            feature_schema: self.feature_schema.clone(),
            base_margin: self.base_margin,
            learning_rate: self.learning_rate,
            trees: self
                .trees
                .iter()
                .map(|t| TreeDoc { nodes: t.nodes.iter().enumerate().map(|(id, n)| NodeDoc::from_node(id, n)).collect() })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("model document serializes")
    }

    /// Parses and structurally validates a persisted model.
    pub fn from_json(text: &str) -> Result<Self, DetectorError> {
        let corrupt = |e: &dyn std::fmt::Display| DetectorError::CorruptDocument(e.to_string());
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| corrupt(&e))?;
        let found = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| corrupt(&"missing format_version"))?;
        if found != u64::from(MODEL_FORMAT_VERSION) {
            return Err(DetectorError::VersionMismatch {
                expected: MODEL_FORMAT_VERSION,
                found: u32::try_from(found).unwrap_or(u32::MAX),
            });
        }
        let doc: ModelDoc = serde_json::from_value(value).map_err(|e| corrupt(&e))?;
        doc.config.validate().map_err(|e| corrupt(&e))?;
        if !(doc.base_margin.is_finite() && doc.learning_rate.is_finite() && doc.learning_rate > 0.0) {
            return Err(corrupt(&"non-finite base margin or learning rate"));
        }
        let arity = doc.feature_schema.arity();
        let trees = doc
            .trees
            .into_iter()
            .enumerate()
            .map(|(t, tree)| tree.into_tree(arity).map_err(|e| corrupt(&format!("tree {t}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TreeEnsemble {
            trees,
            learning_rate: doc.learning_rate,
            base_margin: doc.base_margin,
            feature_schema: doc.feature_schema,
            config: doc.config,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format_version: u32,
    config: TrainConfig,
    feature_schema: FeatureSchema,
    base_margin: f64,
    learning_rate: f64,
    trees: Vec<TreeDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDoc {
    nodes: Vec<NodeDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum NodeDoc {
    Split { id: usize, feature: usize, threshold: f64, left: usize, right: usize, value: f64, cover: f64 },
    Leaf { id: usize, weight: f64, cover: f64 },
}

impl NodeDoc {
    fn from_node(id: usize, node: &TreeNode) -> Self {
        match *node {
            TreeNode::Split { feature, threshold, left, right, value, cover } => {
                NodeDoc::Split { id, feature, threshold, left, right, value, cover }
            }
            TreeNode::Leaf { weight, cover } => NodeDoc::Leaf { id, weight, cover },
        }
    }
}

impl TreeDoc {
    fn into_tree(self, arity: usize) -> Result<Tree, String> {
        let len = self.nodes.len();
        if len == 0 {
            return Err("no nodes".into());
        }
        let mut referenced = vec![false; len];
        let mut nodes = Vec::with_capacity(len);
        for (i, doc) in self.nodes.into_iter().enumerate() {
            let node = match doc {
                NodeDoc::Split { id, feature, threshold, left, right, value, cover } => {
                    if id != i {
                        return Err(format!("node id {id} at position {i}"));
                    }
                    if feature >= arity {
                        return Err(format!("node {id} splits on feature {feature} of {arity}"));
                    }
                    for child in [left, right] {
                        if child <= id || child >= len || referenced[child] {
                            return Err(format!("node {id} has invalid child {child}"));
                        }
                        referenced[child] = true;
                    }
                    if left == right {
                        return Err(format!("node {id} has identical children"));
                    }
                    if !(threshold.is_finite() && value.is_finite() && cover.is_finite()) {
                        return Err(format!("node {id} has non-finite fields"));
                    }
                    TreeNode::Split { feature, threshold, left, right, value, cover }
                }
                NodeDoc::Leaf { id, weight, cover } => {
                    if id != i {
                        return Err(format!("node id {id} at position {i}"));
                    }
                    if !(weight.is_finite() && cover.is_finite()) {
                        return Err(format!("node {id} has non-finite fields"));
                    }
                    TreeNode::Leaf { weight, cover }
                }
            };
            nodes.push(node);
        }
        if let Some(orphan) = (1..len).find(|i| !referenced[*i]) {
            return Err(format!("node {orphan} is unreachable"));
        }
        Ok(Tree { nodes })
    }
}
