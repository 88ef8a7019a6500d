use std::collections::BTreeSet;
use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{feature_label, Evidence, HIGH_VALUE_PERCENTILE};
use crate::features::KNOWN_FEATURES;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "offending", rename_all = "snake_case")]
pub enum Grounding {
    Pass,
    Fail(Vec<String>),
}

impl Grounding {
    pub fn is_pass(&self) -> bool {
        matches!(self, Grounding::Pass)
    }
}

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+(?:\.\d+)?").unwrap());
static BAND: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(high|moderate|low|medium|elevated)[\s-]+(anomaly|risk)").unwrap());

const VALUE_FEATURES: &[&str] = &["value_pctile_30d", "usd_value", "value_btc", "log1p_usd_value"];
const DEGREE_FEATURES: &[&str] = &["counterparty_in_degree", "counterparty_out_degree"];

/// Concept phrases and the features that license them; an empty list means
/// the concept is outside what the model looks at.
fn vocabulary() -> &'static [(String, Vec<&'static str>)] {
    static VOCAB: LazyLock<Vec<(String, Vec<&'static str>)>> = LazyLock::new(|| {
        let mut v: Vec<(String, Vec<&'static str>)> = KNOWN_FEATURES
            .iter()
            .map(|name| (feature_label(name).to_lowercase(), vec![*name]))
            .collect();
        let extra: &[(&str, &[&'static str])] = &[
            ("percentile", &["value_pctile_30d"]),
            ("small-value", &["value_pctile_30d"]),
            ("high-value", VALUE_FEATURES),
            ("large transfer", VALUE_FEATURES),
            ("repeated", &["tx_count_24h"]),
            ("frequency", &["tx_count_7d", "equal_value_burst"]),
            ("burst", &["equal_value_burst"]),
            ("equal-value", &["equal_value_burst"]),
            ("unverified", &["counterparty_verified"]),
            ("verified", &["counterparty_verified"]),
            ("unknown counterpart", DEGREE_FEATURES),
            ("rarely seen", DEGREE_FEATURES),
            ("new counterpart", DEGREE_FEATURES),
            ("off-peak", &["is_off_peak"]),
            ("regular hours", &["is_off_peak"]),
            ("regular-hours", &["is_off_peak"]),
            ("late-night", &["is_off_peak", "hour_of_day"]),
            ("weekend", &["day_of_week"]),
            ("mixer", &[]),
            ("mixing", &[]),
            ("coinjoin", &[]),
            ("tumbler", &[]),
            ("darknet", &[]),
            ("sanction", &[]),
            ("dormant", &[]),
            ("velocity", &[]),
            ("geolocation", &[]),
            ("ip address", &[]),
            ("exchange", &[]),
            ("fee", &[]),
        ];
        v.extend(extra.iter().map(|(p, f)| (p.to_string(), f.to_vec())));
        v.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        v
    });
    &VOCAB
}

fn canonical(x: f64) -> String {
    format!("{x:.2}")
}

fn overlaps(claimed: &[Range<usize>], r: &Range<usize>) -> bool {
    claimed.iter().any(|c| c.start < r.end && r.start < c.end)
}

/// Checks that every numeral, feature concept and band word in `narrative`
/// is backed by `evidence`. Untraceable tokens are listed on failure.
pub fn validate_grounding(narrative: &str, evidence: &Evidence) -> Grounding {
    let mut offending: Vec<String> = Vec::new();
    let mut flag = |token: String| {
        if !offending.contains(&token) {
            offending.push(token);
        }
    };

    let mut allowed: BTreeSet<String> = BTreeSet::new();
    allowed.insert(canonical(evidence.probability));
    for f in &evidence.top_features {
        allowed.insert(canonical(f.value));
        allowed.insert(canonical(f.contribution.abs()));
        if f.name == "value_pctile_30d" && f.value > 0.95 {
            allowed.insert(canonical(f64::from(HIGH_VALUE_PERCENTILE)));
        }
    }
    for m in NUMBER.find_iter(narrative) {
        let ok = m.as_str().parse::<f64>().map(|v| allowed.contains(&canonical(v))).unwrap_or(false);
        if !ok {
            flag(m.as_str().to_string());
        }
    }

    let lower = narrative.to_lowercase();
    let present: BTreeSet<&str> = evidence.top_features.iter().map(|f| f.name.as_str()).collect();
    let mut claimed: Vec<Range<usize>> = Vec::new();
    for (phrase, features) in vocabulary() {
        for (start, _) in lower.match_indices(phrase.as_str()) {
            let span = start..start + phrase.len();
            if overlaps(&claimed, &span) {
                continue;
            }
            claimed.push(span);
            if !features.iter().any(|f| present.contains(f)) {
                flag(phrase.clone());
            }
        }
    }

    let band = evidence.risk_band.as_str();
    let mut stated = false;
    for c in BAND.captures_iter(&lower) {
        if &c[1] == band {
            stated = true;
        } else {
            flag(c[0].to_string());
        }
    }
    if !stated {
        flag(format!("<missing {band} band statement>"));
    }

    if offending.is_empty() {
        Grounding::Pass
    } else {
        Grounding::Fail(offending)
    }
}
