use serde::{Deserialize, Serialize};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictedLabel {
    Normal,
    Anomalous,
}

/// Coarse risk wording attached to a probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskBand {
    Low,
    Moderate,
    High,
}

impl RiskBand {
    /// `high` from 0.80, `moderate` from 0.50, `low` below.
    pub fn from_probability(p: f64) -> Self {
        if p >= 0.80 {
            RiskBand::High
        } else if p >= 0.50 {
            RiskBand::Moderate
        } else {
            RiskBand::Low
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RiskBand::Low => "low",
            RiskBand::Moderate => "moderate",
            RiskBand::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub tx_id: String,
    pub probability: f64,
    pub predicted_label: PredictedLabel,
    pub threshold: f64,
    pub risk_band: RiskBand,
}

impl AnomalyScore {
    /// Labels `probability` against `threshold` (inclusive) and bands it.
    pub fn new(tx_id: impl Into<String>, probability: f64, threshold: f64) -> Self {
        let predicted_label = if probability >= threshold {
            PredictedLabel::Anomalous
        } else {
            PredictedLabel::Normal
        };
        AnomalyScore {
            tx_id: tx_id.into(),
            probability,
            predicted_label,
            threshold,
            risk_band: RiskBand::from_probability(probability),
        }
    }

    pub fn is_anomalous(&self) -> bool {
        self.predicted_label == PredictedLabel::Anomalous
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_edges() {
        assert_eq!(RiskBand::from_probability(0.84), RiskBand::High);
        assert_eq!(RiskBand::from_probability(0.80), RiskBand::High);
        assert_eq!(RiskBand::from_probability(0.7999), RiskBand::Moderate);
        assert_eq!(RiskBand::from_probability(0.50), RiskBand::Moderate);
        assert_eq!(RiskBand::from_probability(0.49), RiskBand::Low);
    }

    #[test]
    fn threshold_is_inclusive() {
        assert!(AnomalyScore::new("a", 0.5, 0.5).is_anomalous());
        assert!(!AnomalyScore::new("a", 0.49, 0.5).is_anomalous());
    }
}
