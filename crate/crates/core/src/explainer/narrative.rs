use serde::{Deserialize, Serialize};

use super::{display_number, feature_label, Cue, Evidence, Explanation, FeatureEvidence, HIGH_VALUE_PERCENTILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NarrativeStyle {
    /// One sentence, the default reply.
    Concise,
    /// One clause per feature with its signed contribution, for follow-ups.
    Expanded,
}

fn opening(evidence: &Evidence) -> String {
    format!(
        "This transaction shows a {} anomaly score ({:.2})",
        evidence.risk_band.as_str(),
        evidence.probability
    )
}

/// "a", "a and b", "a, b and c".
pub(crate) fn join_clauses(clauses: &[String]) -> String {
    match clauses {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Folds transfer-shaped cues into a single noun phrase such as
/// "repeated transfers exceeding the 95th-percentile value to unverified
/// counterparties during off-peak hours".
fn transfer_phrase(features: &[FeatureEvidence]) -> Option<String> {
    let has = |cue: Cue| features.iter().any(|f| f.cue == cue);
    let frequency = if has(Cue::HighFrequency) {
        "unusually high frequency of "
    } else if has(Cue::Repeated) {
        "repeated "
    } else {
        ""
    };
    let size = if has(Cue::SmallValue) { "small-value " } else { "" };
    let mut phrase = format!("{frequency}{size}transfers");
    let mut modified = !frequency.is_empty() || !size.is_empty();
    if has(Cue::HighValue) {
        phrase.push_str(&format!(" exceeding the {HIGH_VALUE_PERCENTILE}th-percentile value"));
        modified = true;
    }
    let mut parties = Vec::new();
    if has(Cue::UnknownCounterparty) {
        parties.push("unknown");
    }
    if has(Cue::UnverifiedCounterparty) {
        parties.push("unverified");
    } else if has(Cue::VerifiedCounterparty) {
        parties.push("verified");
    }
    if !parties.is_empty() {
        phrase.push_str(&format!(" to {} counterparties", parties.join(" ")));
        modified = true;
    }
    if has(Cue::OffPeak) {
        phrase.push_str(" during off-peak hours");
        modified = true;
    } else if has(Cue::RegularHours) {
        phrase.push_str(" during regular hours");
        modified = true;
    }
    modified.then_some(phrase)
}

fn plain_clause(f: &FeatureEvidence) -> String {
    format!("the {} of {}", feature_label(&f.name), display_number(f.value))
}

fn standalone_clause(f: &FeatureEvidence) -> String {
    match f.cue {
        Cue::HighValue => format!("transfer value exceeding the {HIGH_VALUE_PERCENTILE}th-percentile value"),
        Cue::SmallValue => "small-value transfer".into(),
        Cue::Repeated => format!("repeated transfers within a day ({})", display_number(f.value)),
        Cue::HighFrequency => format!("unusually high frequency of transfers ({})", display_number(f.value)),
        Cue::UnverifiedCounterparty => "unverified counterparty".into(),
        Cue::VerifiedCounterparty => "verified counterparty".into(),
        Cue::UnknownCounterparty => "unknown counterparty".into(),
        Cue::OffPeak => "off-peak timing".into(),
        Cue::RegularHours => "regular-hours timing".into(),
        Cue::Plain => plain_clause(f),
    }
}

fn concise(evidence: &Evidence) -> String {
    let mut clauses: Vec<String> = transfer_phrase(&evidence.top_features).into_iter().collect();
    clauses.extend(evidence.top_features.iter().filter(|f| f.cue == Cue::Plain).map(plain_clause));
    format!("{} due to {}.", opening(evidence), join_clauses(&clauses))
}

fn expanded(evidence: &Evidence) -> String {
    let clauses: Vec<String> = evidence
        .top_features
        .iter()
        .map(|f| format!("{} ({:+.2})", standalone_clause(f), f.contribution))
        .collect();
    format!(
        "{}. Factors by contribution to the score: {}.",
        opening(evidence),
        join_clauses(&clauses)
    )
}

/// Deterministic template narrative; grounded by construction.
pub fn render_narrative(evidence: &Evidence, style: NarrativeStyle) -> Explanation {
    let narrative = if evidence.top_features.is_empty() {
        format!("{}; no individual feature stands out.", opening(evidence))
    } else {
        match style {
            NarrativeStyle::Concise => concise(evidence),
            NarrativeStyle::Expanded => expanded(evidence),
        }
    };
    Explanation::checked(narrative, evidence.clone())
        .unwrap_or_else(|| panic!("template narrative failed grounding for {}", evidence.tx_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::RiskBand;

    fn feature(name: &str, value: f64, contribution: f64, cue: Cue) -> FeatureEvidence {
        FeatureEvidence { name: name.into(), value, contribution, comparator: String::new(), cue }
    }

    fn evidence(p: f64, band: RiskBand, top: Vec<FeatureEvidence>) -> Evidence {
        Evidence {
            tx_id: "t".into(),
            probability: p,
            risk_band: band,
            top_features: top,
            counterparty_verified: false,
            off_peak: true,
        }
    }

    #[test]
    fn join_forms() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(join_clauses(&s(&["a"])), "a");
        assert_eq!(join_clauses(&s(&["a", "b"])), "a and b");
        assert_eq!(join_clauses(&s(&["a", "b", "c"])), "a, b and c");
    }

    #[test]
    fn high_score_exemplar() {
        let e = evidence(
            0.84,
            RiskBand::High,
            vec![
                feature("value_pctile_30d", 0.97, 0.9, Cue::HighValue),
                feature("tx_count_24h", 6.0, 0.5, Cue::Repeated),
                feature("counterparty_verified", 0.0, 0.4, Cue::UnverifiedCounterparty),
                feature("is_off_peak", 1.0, 0.3, Cue::OffPeak),
            ],
        );
        assert_eq!(
            render_narrative(&e, NarrativeStyle::Concise).narrative(),
            "This transaction shows a high anomaly score (0.84) due to repeated transfers exceeding the \
             95th-percentile value to unverified counterparties during off-peak hours."
        );
    }

    #[test]
    fn without_the_frequency_feature_no_repetition_is_claimed() {
        let e = evidence(
            0.84,
            RiskBand::High,
            vec![
                feature("value_pctile_30d", 0.97, 0.9, Cue::HighValue),
                feature("counterparty_verified", 0.0, 0.4, Cue::UnverifiedCounterparty),
                feature("is_off_peak", 1.0, 0.3, Cue::OffPeak),
            ],
        );
        assert_eq!(
            render_narrative(&e, NarrativeStyle::Concise).narrative(),
            "This transaction shows a high anomaly score (0.84) due to transfers exceeding the \
             95th-percentile value to unverified counterparties during off-peak hours."
        );
    }

    #[test]
    fn moderate_exemplar() {
        let e = evidence(
            0.62,
            RiskBand::Moderate,
            vec![
                feature("tx_count_7d", 14.0, 0.6, Cue::HighFrequency),
                feature("value_pctile_30d", 0.1, 0.3, Cue::SmallValue),
                feature("counterparty_in_degree", 0.0, 0.2, Cue::UnknownCounterparty),
            ],
        );
        let text = render_narrative(&e, NarrativeStyle::Concise).narrative().to_string();
        assert!(text.contains("moderate anomaly"), "{text}");
        assert!(text.contains("frequency of small-value transfers to unknown counterparties"), "{text}");
    }

    #[test]
    fn empty_evidence_sentence() {
        let e = evidence(0.10, RiskBand::Low, vec![]);
        assert_eq!(
            render_narrative(&e, NarrativeStyle::Concise).narrative(),
            "This transaction shows a low anomaly score (0.10); no individual feature stands out."
        );
    }

    #[test]
    fn plain_features_are_listed() {
        let e = evidence(
            0.55,
            RiskBand::Moderate,
            vec![feature("usd_value", 51200.0, 0.3, Cue::Plain), feature("hour_of_day", 14.0, 0.1, Cue::Plain)],
        );
        assert_eq!(
            render_narrative(&e, NarrativeStyle::Concise).narrative(),
            "This transaction shows a moderate anomaly score (0.55) due to the USD value of 51200 and the hour of day of 14."
        );
    }

    #[test]
    fn expanded_lists_contributions() {
        let e = evidence(
            0.84,
            RiskBand::High,
            vec![
                feature("value_pctile_30d", 0.97, 0.91, Cue::HighValue),
                feature("is_off_peak", 1.0, -0.25, Cue::OffPeak),
            ],
        );
        assert_eq!(
            render_narrative(&e, NarrativeStyle::Expanded).narrative(),
            "This transaction shows a high anomaly score (0.84). Factors by contribution to the score: transfer \
             value exceeding the 95th-percentile value (+0.91) and off-peak timing (-0.25)."
        );
    }
}
