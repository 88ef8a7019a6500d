//! Evidence records, template narratives and the grounding check that every
//! outgoing narrative must pass.

mod grounding;
mod narrative;
mod remote;

use serde::{Deserialize, Serialize};

use crate::detector::AttributionRecord;
use crate::domain::{AnomalyScore, RiskBand};
use crate::features::{FeatureSchema, FeatureVector};

pub use grounding::{validate_grounding, Grounding};
pub use narrative::{render_narrative, NarrativeStyle};
pub use remote::{
    remote_explain, ExplainerBackend, ExplainerRequest, ExplainerResponse, HttpExplainerBackend, RemoteExplanation,
    EXPLAINER_TEMPLATE, EXPLAINER_TEMPLATE_VERSION,
};

pub const DEFAULT_TOP_K: usize = 3;

/// Percentile named by the high-value comparator.
pub const HIGH_VALUE_PERCENTILE: u32 = 95;

/// How a feature reads in prose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cue {
    HighValue,
    SmallValue,
    Repeated,
    HighFrequency,
    UnverifiedCounterparty,
    VerifiedCounterparty,
    UnknownCounterparty,
    OffPeak,
    RegularHours,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEvidence {
    pub name: String,
    pub value: f64,
    pub contribution: f64,
    pub comparator: String,
    pub cue: Cue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub tx_id: String,
    pub probability: f64,
    pub risk_band: RiskBand,
    /// Ordered by |contribution|, largest first.
    pub top_features: Vec<FeatureEvidence>,
    pub counterparty_verified: bool,
    pub off_peak: bool,
}

/// A narrative that passed [`validate_grounding`] against its evidence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    narrative: String,
    evidence: Evidence,
    grounded: bool,
}

impl Explanation {
    /// `None` unless the narrative is grounded in `evidence`.
    pub fn checked(narrative: String, evidence: Evidence) -> Option<Self> {
        validate_grounding(&narrative, &evidence)
            .is_pass()
            .then_some(Explanation { narrative, evidence, grounded: true })
    }

    pub fn narrative(&self) -> &str {
        &self.narrative
    }

    pub fn evidence(&self) -> &Evidence {
        &self.evidence
    }

    pub fn grounded(&self) -> bool {
        self.grounded
    }
}

/// Prose label for a feature; free of numerals so labels never need grounding.
pub fn feature_label(name: &str) -> &str {
    match name {
        "value_btc" => "BTC value",
        "usd_value" => "USD value",
        "log1p_usd_value" => "log-scaled USD value",
        "hour_of_day" => "hour of day",
        "is_off_peak" => "off-peak flag",
        "day_of_week" => "day of week",
        "direction_out" => "outgoing direction",
        "value_pctile_30d" => "monthly value percentile",
        "tx_count_24h" => "daily transaction count",
        "tx_count_7d" => "weekly transaction count",
        "mean_usd_7d" => "weekly mean USD value",
        "std_usd_7d" => "weekly USD value deviation",
        "unique_counterparties_7d" => "weekly distinct counterparties",
        "counterparty_in_degree" => "counterparty in-degree",
        "counterparty_out_degree" => "counterparty out-degree",
        "counterparty_verified" => "verification status",
        "equal_value_burst" => "equal-value burst count",
        other => other,
    }
}

/// Integers print bare, everything else with two decimals.
pub fn display_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.2}")
    }
}

fn cue_for(name: &str, value: f64, contribution: f64) -> (Cue, String) {
    let plain = || (Cue::Plain, format!("{} of {}", feature_label(name), display_number(value)));
    match name {
        "value_pctile_30d" if value > 0.95 => {
            (Cue::HighValue, format!("exceeds the {HIGH_VALUE_PERCENTILE}th-percentile value"))
        }
        "value_pctile_30d" if value < 0.25 => (Cue::SmallValue, "small-value transfer".into()),
        "tx_count_24h" if value >= 2.0 => (Cue::Repeated, "repeated transfers within a day".into()),
        "tx_count_7d" | "equal_value_burst" if value >= 3.0 && contribution > 0.0 => {
            (Cue::HighFrequency, "high transfer frequency".into())
        }
        "counterparty_verified" if value == 0.0 => (Cue::UnverifiedCounterparty, "unverified counterparty".into()),
        "counterparty_verified" => (Cue::VerifiedCounterparty, "verified counterparty".into()),
        "is_off_peak" if value == 1.0 => (Cue::OffPeak, "off-peak".into()),
        "is_off_peak" => (Cue::RegularHours, "regular hours".into()),
        "counterparty_in_degree" | "counterparty_out_degree" if value <= 1.0 => {
            (Cue::UnknownCounterparty, "rarely seen counterparty".into())
        }
        _ => plain(),
    }
}

/// Evidence with the default number of top features.
pub fn build_evidence(
    score: &AnomalyScore,
    attribution: &AttributionRecord,
    x: &FeatureVector,
    schema: &FeatureSchema,
) -> Evidence {
    build_evidence_k(score, attribution, x, schema, DEFAULT_TOP_K)
}

/// Picks the `k` features with the largest nonzero |contribution| (ties by
/// schema order) and attaches their comparators.
pub fn build_evidence_k(
    score: &AnomalyScore,
    attribution: &AttributionRecord,
    x: &FeatureVector,
    schema: &FeatureSchema,
    k: usize,
) -> Evidence {
    let mut ranked: Vec<usize> =
        (0..attribution.contributions.len()).filter(|i| attribution.contributions[*i] != 0.0).collect();
    ranked.sort_by(|a, b| attribution.contributions[*b].abs().total_cmp(&attribution.contributions[*a].abs()));
    let top_features = ranked
        .into_iter()
        .take(k)
        .filter_map(|i| {
            let name = schema.names.get(i)?;
            let value = *x.values.get(i)?;
            let contribution = attribution.contributions[i];
            let (cue, comparator) = cue_for(name, value, contribution);
            Some(FeatureEvidence { name: name.clone(), value, contribution, comparator, cue })
        })
        .collect();
    Evidence {
        tx_id: score.tx_id.clone(),
        probability: score.probability,
        risk_band: score.risk_band,
        top_features,
        counterparty_verified: x.get(schema, "counterparty_verified").is_some_and(|v| v == 1.0),
        off_peak: x.get(schema, "is_off_peak").is_some_and(|v| v == 1.0),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FollowupError {
    #[error("there is no previous result in this session to explain")]
    NoPriorResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FollowupAnswer {
    Explained { explanations: Vec<Explanation> },
    /// The question is about something outside the stored results.
    Refusal { message: String, available: Vec<String> },
}

fn mentioned_ids(question: &str) -> Vec<String> {
    use std::sync::LazyLock;
    static ID: LazyLock<regex::Regex> = LazyLock::new(|| regex::Regex::new(r"\b[0-9a-fA-F]{8,}\b").unwrap());
    ID.find_iter(question).map(|m| m.as_str().to_ascii_lowercase()).collect()
}

/// Re-renders stored evidence with contribution magnitudes.
///
/// A question naming transaction ids picks those records; one naming only
/// unknown ids gets a refusal listing what is available. Otherwise the
/// highest-scoring stored record is explained.
pub fn answer_followup(question: &str, prior: Option<&[Evidence]>) -> Result<FollowupAnswer, FollowupError> {
    let prior = prior.ok_or(FollowupError::NoPriorResult)?;
    let available: Vec<String> = prior.iter().map(|e| e.tx_id.clone()).collect();
    if prior.is_empty() {
        return Ok(FollowupAnswer::Refusal {
            message: "The previous query matched no transactions, so there is nothing to explain.".into(),
            available,
        });
    }
    let ids = mentioned_ids(question);
    let chosen: Vec<&Evidence> = if ids.is_empty() {
        let best = prior.iter().reduce(|a, b| if b.probability > a.probability { b } else { a });
        best.into_iter().collect()
    } else {
        let hits: Vec<&Evidence> =
            prior.iter().filter(|e| ids.iter().any(|id| e.tx_id.to_ascii_lowercase().starts_with(id))).collect();
        if hits.is_empty() {
            return Ok(FollowupAnswer::Refusal {
                message: format!(
                    "I can only explain transactions from the previous result: {}.",
                    available.join(", ")
                ),
                available,
            });
        }
        hits
    };
    let explanations = chosen.into_iter().map(|e| render_narrative(e, NarrativeStyle::Expanded)).collect();
    Ok(FollowupAnswer::Explained { explanations })
}
